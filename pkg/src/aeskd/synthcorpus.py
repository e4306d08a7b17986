"""Procedural image corpus with known semantics and a deterministic score rule.

Each sample composites one subject pattern and up to three distractor
patterns over a textured background.  The subject's footprint mask, the
composition descriptors (centering, size, contrast, clutter) and the
resulting score are all known exactly, so every evaluation protocol can be
checked against ground truth.  Six pattern families times three style
variants give 18 semantic classes; a 19th "plain" class marks samples
without distractors in the two-hot semantic labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import fileformats, ratings

PATTERN_FAMILIES = ("circle", "cross", "stripes", "checkerboard", "blob", "ring")
N_STYLES = 3
N_PATTERN_CLASSES = len(PATTERN_FAMILIES) * N_STYLES
PLAIN_CLASS = N_PATTERN_CLASSES          # "no distractor" vocabulary entry
SEMANTIC_VOCAB = N_PATTERN_CLASSES + 1

RULE_WEIGHTS = (0.4, 0.3, 0.2, -0.1)     # centering, size, contrast, clutter
RULE_BIAS = 0.1

# Ideal footprint fraction per pattern family.  The size descriptor scores
# closeness to the *family's* ideal, so judging a subject's size requires
# recognizing what it is; this keeps the score label abstract with respect
# to raw geometry.
IDEAL_AREA_FRACTION = {
    "circle": 0.20,
    "cross": 0.15,
    "stripes": 0.25,
    "checkerboard": 0.125,
    "blob": 0.275,
    "ring": 0.175,
}
SIZE_SPAN = 0.10

# class tints: per-channel multipliers on the luminance offset, mean 1
_TINTS = None


def class_id(family, style):
    return PATTERN_FAMILIES.index(family) * N_STYLES + style


def class_name(cid):
    if cid == PLAIN_CLASS:
        return "plain"
    return f"{PATTERN_FAMILIES[cid // N_STYLES]}#{cid % N_STYLES}"


def _tints():
    global _TINTS
    if _TINTS is None:
        rng = np.random.default_rng(1234)
        t = rng.uniform(0.75, 1.25, size=(N_PATTERN_CLASSES, 3))
        _TINTS = (t / t.mean(axis=1, keepdims=True)).astype(np.float32)
    return _TINTS


@dataclass
class CorpusConfig:
    n_samples: int = 2400
    image_size: int = 64
    small_size: int = 32
    n_levels: int = 10
    sigma: float = 1.0
    mask_fraction: tuple = (0.10, 0.30)
    max_distractors: int = 3
    background_noise: float = 0.03
    seed: int = 0

    def validate(self):
        lo, hi = self.mask_fraction
        if not (0 < lo < hi < 1):
            raise ValueError(f"infeasible subject area bounds {self.mask_fraction}")
        if self.n_samples <= 0 or self.image_size < 16:
            raise ValueError("corpus must have samples and images of at least 16px")
        if self.sigma <= 0:
            raise ValueError("rater-spread sigma must be positive")
        if self.max_distractors < 0:
            raise ValueError("max_distractors must be >= 0")
        return self


@dataclass
class SampleRecord:
    sample_id: int
    image_path: str
    mask_path: str
    classes: list          # subject class first, then distractors by size
    category: str          # subject pattern family
    score: float
    distribution: list     # n_levels floats
    split_tags: list = field(default_factory=list)
    descriptors: dict = field(default_factory=dict)

    def semantic_pair(self):
        second = self.classes[1] if len(self.classes) > 1 else PLAIN_CLASS
        return (self.classes[0], second)

    def two_hot(self):
        v = np.zeros(SEMANTIC_VOCAB, dtype=np.float32)
        for c in self.semantic_pair():
            v[c] = 1.0
        return v


# -- geometry ------------------------------------------------------------------


def _grid(size):
    ys, xs = np.mgrid[0:size, 0:size]
    return xs.astype(np.float64) + 0.5, ys.astype(np.float64) + 0.5


def _pattern(family, style, size, cx, cy, area):
    """Support mask and interior intensity for one pattern instance.

    The scale parameter is solved in closed form from the requested
    footprint area; pixelization keeps the realized area within a couple of
    percent, and callers resample if bounds are violated.
    """
    xs, ys = _grid(size)
    dx, dy = xs - cx, ys - cy
    if family == "circle":
        r = np.sqrt(area / np.pi)
        dist = np.hypot(dx, dy)
        support = dist <= r
        if style == 0:
            intensity = np.ones_like(dist)
        elif style == 1:
            intensity = 1.0 - 0.7 * np.clip(dist / max(r, 1e-9), 0, 1) ** 2
        else:
            intensity = np.where(dx < 0, 1.0, 0.55)
        extent = r
    elif family == "ring":
        q = (0.45, 0.6, 0.75)[style]
        r = np.sqrt(area / (np.pi * (1 - q * q)))
        dist = np.hypot(dx, dy)
        support = (dist <= r) & (dist >= q * r)
        intensity = np.ones_like(dist)
        extent = r
    elif family == "cross":
        w_ratio = (0.35, 0.2, 0.5)[style]
        half = np.sqrt(area / (8 * w_ratio - 4 * w_ratio * w_ratio))
        w = w_ratio * half
        bar1 = (np.abs(dx) <= half) & (np.abs(dy) <= w)
        bar2 = (np.abs(dy) <= half) & (np.abs(dx) <= w)
        support = bar1 | bar2
        intensity = np.ones_like(dx)
        extent = half + w
    elif family in ("stripes", "checkerboard"):
        d = np.sqrt(area)
        support = (np.abs(dx) <= d / 2) & (np.abs(dy) <= d / 2)
        if family == "stripes":
            axis = (dy, dx, dx + dy)[style]
            bands = np.floor(axis / (d / 5.0))
        else:
            cells = (2, 3, 4)[style]
            cell = d / cells
            bands = np.floor(dx / cell) + np.floor(dy / cell)
        intensity = np.where(bands.astype(np.int64) % 2 == 0, 1.0, 0.45)
        extent = d / np.sqrt(2) + 1
    elif family == "blob":
        cutoff = 2.146  # intensity ~0.1 at the support boundary
        aspect = (1.0, 1.5, 1 / 1.5)[style]
        sb = np.sqrt(area / np.pi) / cutoff
        rho = np.hypot(dx / (sb * aspect), dy / (sb / aspect))
        support = rho <= cutoff
        intensity = np.exp(-0.5 * rho**2)
        extent = cutoff * sb * max(aspect, 1 / aspect)
    else:
        raise ValueError(f"unknown pattern family {family!r}")
    return support, intensity, extent


def _pattern_extent(family, style, area):
    """Bounding radius without rasterizing (for placement feasibility)."""
    if family == "circle":
        return np.sqrt(area / np.pi)
    if family == "ring":
        q = (0.45, 0.6, 0.75)[style]
        return np.sqrt(area / (np.pi * (1 - q * q)))
    if family == "cross":
        w_ratio = (0.35, 0.2, 0.5)[style]
        half = np.sqrt(area / (8 * w_ratio - 4 * w_ratio * w_ratio))
        return half + w_ratio * half
    if family in ("stripes", "checkerboard"):
        return np.sqrt(area) / np.sqrt(2) + 1
    if family == "blob":
        aspect = (1.0, 1.5, 1 / 1.5)[style]
        return np.sqrt(area / np.pi) * max(aspect, 1 / aspect)
    raise ValueError(f"unknown pattern family {family!r}")


# -- the deterministic score rule -------------------------------------------------


def aesthetic_rule(centering, size_term, contrast, clutter):
    """Score in [1, 10] from the four composition descriptors in [0, 1]."""
    for name, v in (
        ("centering", centering),
        ("size_term", size_term),
        ("contrast", contrast),
        ("clutter", clutter),
    ):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"descriptor {name}={v} outside [0, 1]")
    wc, ws, wt, wl = RULE_WEIGHTS
    inner = wc * centering + ws * size_term + wt * contrast + wl * clutter + RULE_BIAS
    return 1.0 + 9.0 * float(np.clip(inner, 0.0, 1.0))


def rule_distribution(score, sigma, n_levels=10):
    """Ground-truth label for a rule score.

    Uses the mean-matched discretized gaussian so the label's mean tracks
    the score within 0.1 across the whole [1, 10] range (plain truncation
    drifts by >0.1 beyond ~8.7).
    """
    return ratings.mean_matched_gaussian(score, sigma, n_levels)


# -- rendering -------------------------------------------------------------------


def _background(rng, size, noise):
    base = rng.uniform(0.35, 0.65)
    coarse = rng.standard_normal((size // 8 + 2, size // 8 + 2)) * 0.035
    img = np.empty((3, size, size), dtype=np.float64)
    up = _bilinear_2d(coarse, size, size)
    for c in range(3):
        img[c] = base + up + rng.standard_normal((size, size)) * noise
    return img, base


def _stamp(img, support, intensity, offset, tint):
    for c in range(3):
        chan = img[c]
        chan[support] += offset * tint[c] * intensity[support]


@dataclass
class _Composition:
    image: np.ndarray
    mask: np.ndarray
    classes: list
    descriptors: dict


# how strongly the latent quality factor couples the four descriptors;
# full independence concentrates scores into ~4 unit bins, full coupling
# makes any single cue a near-perfect score predictor
QUALITY_COUPLING = 0.6


def _coupled(rng, quality, coupling=QUALITY_COUPLING):
    return float(np.clip(coupling * quality + (1 - coupling) * rng.uniform(0, 1), 0, 1))


def _max_feasible_fraction(family, style, size):
    """Largest footprint fraction whose extent still fits with margin."""
    limit = size / 2.0 - 2.0
    lo_a, hi_a = 1.0, (size * size) * 0.5
    for _ in range(50):
        mid = 0.5 * (lo_a + hi_a)
        if _pattern_extent(family, style, mid) <= limit:
            lo_a = mid
        else:
            hi_a = mid
    return lo_a / (size * size)


def _compose(rng, cfg):
    size = cfg.image_size
    lo, hi = cfg.mask_fraction
    margin = 0.01
    family = PATTERN_FAMILIES[rng.integers(0, len(PATTERN_FAMILIES))]
    style = int(rng.integers(0, N_STYLES))
    quality = rng.uniform(0.0, 1.0)
    frac_lo = lo + margin
    frac_hi = min(hi - margin, _max_feasible_fraction(family, style, size))
    if frac_hi <= frac_lo:
        raise ValueError(
            f"subject area bounds {cfg.mask_fraction} infeasible for "
            f"{family}#{style} at {size}px"
        )

    for _ in range(12):
        sz_target = _coupled(rng, quality)
        frac = IDEAL_AREA_FRACTION + 0.1 * (1.0 - sz_target) * (
            1.0 if rng.uniform() < 0.5 else -1.0
        )
        frac = float(np.clip(frac, frac_lo, frac_hi))
        area = frac * size * size
        extent = _pattern_extent(family, style, area)
        pad = extent + 1.0
        if pad >= size / 2:
            continue
        half = size / 2.0
        reach = half - pad
        # centering is normalized by the feasible reach for this subject
        # size, so the descriptor spans [0, 1] for every pattern scale
        dist_target = (1.0 - _coupled(rng, quality)) * reach * np.sqrt(2)
        for _ in range(30):
            theta = rng.uniform(0, 2 * np.pi)
            cx = half + dist_target * np.cos(theta)
            cy = half + dist_target * np.sin(theta)
            if pad <= cx <= size - pad and pad <= cy <= size - pad:
                break
        else:
            cx = float(np.clip(half + dist_target, pad, size - pad))
            cy = half
        support, intensity, _ = _pattern(family, style, size, cx, cy, area)
        realized = support.mean()
        if lo <= realized <= hi:
            break
    else:
        raise ValueError(
            f"could not place a {family} subject within area bounds {cfg.mask_fraction}"
        )

    img, base = _background(rng, size, cfg.background_noise)
    ct = _coupled(rng, quality)
    offset = (0.10 + 0.40 * ct) * (1.0 if base <= 0.5 else -1.0)
    subject_class = class_id(family, style)
    _stamp(img, support, intensity, offset, _tints()[subject_class])

    n_wanted = int(rng.binomial(cfg.max_distractors, 1.0 - _coupled(rng, quality)))
    blocked = support.copy()
    distractors = []
    for _ in range(n_wanted):
        d_family = family
        while d_family == family:
            d_family = PATTERN_FAMILIES[rng.integers(0, len(PATTERN_FAMILIES))]
        d_style = int(rng.integers(0, N_STYLES))
        d_area = rng.uniform(0.010, 0.035) * size * size
        placed = False
        for _ in range(25):
            d_extent = _pattern_extent(d_family, d_style, d_area) + 1.0
            dcx = rng.uniform(d_extent, size - d_extent)
            dcy = rng.uniform(d_extent, size - d_extent)
            d_support, d_intensity, _ = _pattern(d_family, d_style, size, dcx, dcy, d_area)
            if not (d_support & blocked).any():
                placed = True
                break
        if not placed:
            continue
        blocked |= d_support
        d_class = class_id(d_family, d_style)
        _stamp(img, d_support, d_intensity, offset * 0.45, _tints()[d_class])
        distractors.append((d_support.sum(), d_class))

    distractors.sort(reverse=True)
    img = np.clip(img, 0.0, 1.0)

    half = size / 2.0
    dist_to_center = float(np.hypot(cx - half, cy - half))
    centering = float(np.clip(1.0 - dist_to_center / max(reach * np.sqrt(2), 1e-9), 0.0, 1.0))
    size_term = max(0.0, 1.0 - abs(support.mean() - IDEAL_AREA_FRACTION) / 0.10)
    clutter = len(distractors) / 3.0
    descriptors = {
        "centering": float(centering),
        "size_term": float(size_term),
        "contrast": float(ct),
        "clutter": float(clutter),
    }
    return _Composition(
        image=img.astype(np.float32),
        mask=support.astype(np.float32),
        classes=[subject_class] + [c for _, c in distractors],
        descriptors=descriptors,
    )


# -- corpus generation ---------------------------------------------------------------


def generate_corpus(cfg, out_dir):
    """Render the corpus and write images, masks and a JSON-lines manifest.

    Deterministic under the config seed; per-sample RNGs are spawned from a
    single seed sequence so samples are independent of generation order.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_samples)
    records = []
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(children[i])
        comp = _compose(rng, cfg)
        d = comp.descriptors
        score = aesthetic_rule(d["centering"], d["size_term"], d["contrast"], d["clutter"])
        dist = rule_distribution(score, cfg.sigma, cfg.n_levels)
        image_path = f"images/{i:06d}.ten"
        mask_path = f"masks/{i:06d}.ten"
        fileformats.write_tensor(out_dir / image_path, comp.image)
        fileformats.write_tensor(out_dir / mask_path, comp.mask)
        records.append(
            SampleRecord(
                sample_id=i,
                image_path=image_path,
                mask_path=mask_path,
                classes=comp.classes,
                category=PATTERN_FAMILIES[comp.classes[0] // N_STYLES],
                score=float(score),
                distribution=[float(x) for x in dist],
                descriptors=d,
            )
        )
    _check_generated(records)
    write_manifest(out_dir / "manifest.jsonl", records)
    return Corpus(root=out_dir, records=records, config=cfg)


def _check_generated(records):
    scores = np.array([r.score for r in records])
    bins = np.unique(np.clip(scores.astype(int), 1, 10))
    if len(bins) < 6:
        raise ValueError(
            f"degenerate corpus: scores span only {len(bins)} unit bins of [1, 10]"
        )


def generate_class_corpus(families, n_per_class, image_size=64, noise_scale=1.0, seed=0):
    """Single-pattern classification corpus for backbone pre-training.

    Returns (images (N,3,S,S) float32, labels (N,) of *global* class ids,
    class_ids tuple).  Needs at least two classes.
    """
    class_ids = [class_id(f, s) for f in families for s in range(N_STYLES)]
    if len(class_ids) < 2:
        raise ValueError("classification corpus needs at least 2 classes")
    cfg = CorpusConfig(
        image_size=image_size,
        mask_fraction=(0.06, 0.38),
        max_distractors=0,
        background_noise=0.03 * noise_scale,
        seed=seed,
    )
    n_total = n_per_class * len(class_ids)
    children = np.random.SeedSequence(seed).spawn(n_total)
    images = np.empty((n_total, 3, image_size, image_size), dtype=np.float32)
    labels = np.empty(n_total, dtype=np.int64)
    i = 0
    for cid in class_ids:
        family = PATTERN_FAMILIES[cid // N_STYLES]
        style = cid % N_STYLES
        for _ in range(n_per_class):
            rng = np.random.default_rng(children[i])
            img, base = _background(rng, image_size, cfg.background_noise)
            frac = rng.uniform(*cfg.mask_fraction)
            area = frac * image_size * image_size
            extent = _pattern_extent(family, style, area) + 1.0
            extent = min(extent, image_size / 2 - 1)
            cx = rng.uniform(extent, image_size - extent)
            cy = rng.uniform(extent, image_size - extent)
            support, intensity, _ = _pattern(family, style, image_size, cx, cy, area)
            ct = rng.uniform(0.15, 1.0)
            offset = (0.10 + 0.40 * ct) * (1.0 if base <= 0.5 else -1.0)
            _stamp(img, support, intensity, offset, _tints()[cid])
            images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
            labels[i] = cid
            i += 1
    # contiguous label space for the classifier head
    remap = {cid: k for k, cid in enumerate(class_ids)}
    local = np.array([remap[c] for c in labels], dtype=np.int64)
    return images, local, tuple(class_ids)


# -- manifest and corpus access --------------------------------------------------------


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = asdict(r)
            row["id"] = row.pop("sample_id")
            fh.write(json.dumps(row) + "\n")


def read_manifest(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            row["sample_id"] = row.pop("id")
            records.append(SampleRecord(**row))
    ids = [r.sample_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("manifest contains duplicate sample ids")
    return records


class Corpus:
    """Manifest plus image access with resize-on-load."""

    def __init__(self, root, records=None, config=None):
        self.root = Path(root)
        self.records = records if records is not None else read_manifest(self.root / "manifest.jsonl")
        self.config = config
        self.by_id = {r.sample_id: r for r in self.records}
        missing = [
            r.sample_id
            for r in self.records
            if not (self.root / r.image_path).exists() or not (self.root / r.mask_path).exists()
        ]
        if missing:
            raise FileNotFoundError(
                f"manifest references missing files for ids {missing[:5]}"
            )
        self._image_cache = {}

    @classmethod
    def load(cls, root):
        return cls(root)

    def subset(self, tag):
        return [r for r in self.records if tag in r.split_tags]

    def load_image(self, record, size=None):
        key = (record.sample_id, size)
        if key not in self._image_cache:
            img = fileformats.read_tensor(self.root / record.image_path)
            if size is not None and size != img.shape[-1]:
                img = resize_image(img, size)
            self._image_cache[key] = img
        return self._image_cache[key]

    def load_mask(self, record):
        return fileformats.read_tensor(self.root / record.mask_path)

    def load_batch(self, records, size=None):
        return np.stack([self.load_image(r, size) for r in records])

    def scores(self, records):
        return np.array([r.score for r in records], dtype=np.float64)

    def distributions(self, records):
        return np.array([r.distribution for r in records], dtype=np.float32)


# -- resizing -----------------------------------------------------------------------


def _bilinear_2d(plane, out_h, out_w):
    in_h, in_w = plane.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    p00 = plane[np.ix_(y0, x0)]
    p01 = plane[np.ix_(y0, x1)]
    p10 = plane[np.ix_(y1, x0)]
    p11 = plane[np.ix_(y1, x1)]
    top = p00 * (1 - wx) + p01 * wx
    bot = p10 * (1 - wx) + p11 * wx
    return top * (1 - wy) + bot * wy


def resize_image(image, target):
    """Bilinear resize of (H, W) or (C, H, W) arrays to target x target."""
    image = np.asarray(image)
    if image.ndim == 2:
        return _bilinear_2d(image.astype(np.float64), target, target).astype(image.dtype)
    if image.ndim == 3:
        return np.stack(
            [_bilinear_2d(ch.astype(np.float64), target, target) for ch in image]
        ).astype(image.dtype)
    raise ValueError(f"resize expects (H, W) or (C, H, W), got shape {image.shape}")


def resize_mask(mask, target):
    """Nearest-neighbor resize for binary masks."""
    mask = np.asarray(mask)
    in_h, in_w = mask.shape
    ys = np.clip(((np.arange(target) + 0.5) * (in_h / target)).astype(int), 0, in_h - 1)
    xs = np.clip(((np.arange(target) + 0.5) * (in_w / target)).astype(int), 0, in_w - 1)
    return mask[np.ix_(ys, xs)]


def pad_center_crop(image, pad_to, crop_to):
    """Zero-pad to a square canvas, then crop the center window."""
    if crop_to > pad_to:
        raise ValueError(f"crop size {crop_to} exceeds padded size {pad_to}")
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"pad_center_crop expects (C, H, W), got {image.shape}")
    _, h, w = image.shape
    if h > pad_to or w > pad_to:
        raise ValueError(f"image {h}x{w} larger than padded size {pad_to}")
    top, left = (pad_to - h) // 2, (pad_to - w) // 2
    canvas = np.zeros((image.shape[0], pad_to, pad_to), dtype=image.dtype)
    canvas[:, top : top + h, left : left + w] = image
    start = (pad_to - crop_to) // 2
    return canvas[:, start : start + crop_to, start : start + crop_to]


# -- splits ------------------------------------------------------------------------


@dataclass
class SplitSpec:
    scheme: str = "fixed"    # fixed | cross_validation
    train_size: int = 2000
    test_size: int = 400
    folds: int = 12
    seed: int = 0


def make_splits(records, spec):
    """Tag records in place with split membership; returns the records.

    Fixed: 'train'/'test' tags.  Cross-validation: 'cv{j}:test' /
    'cv{j}:train' per fold, with pairwise-disjoint test folds of equal
    size (+-1) covering the corpus.
    """
    n = len(records)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    if spec.scheme == "fixed":
        if spec.train_size + spec.test_size > n:
            raise ValueError(
                f"fixed split needs {spec.train_size}+{spec.test_size} <= {n} samples"
            )
        train_idx = set(order[: spec.train_size].tolist())
        test_idx = set(order[spec.train_size : spec.train_size + spec.test_size].tolist())
        for i, r in enumerate(records):
            if i in train_idx:
                r.split_tags.append("train")
            elif i in test_idx:
                r.split_tags.append("test")
    elif spec.scheme == "cross_validation":
        if spec.folds < 1 or spec.folds > n:
            raise ValueError(f"infeasible fold count {spec.folds} for {n} samples")
        folds = np.array_split(order, spec.folds)
        for j, fold in enumerate(folds):
            fold_set = set(fold.tolist())
            for i, r in enumerate(records):
                r.split_tags.append(f"cv{j}:test" if i in fold_set else f"cv{j}:train")
    else:
        raise ValueError(f"unknown split scheme {spec.scheme!r}")
    return records


# -- external feature import ----------------------------------------------------------


def read_label_table(path, n_levels=10):
    """CSV of id plus n per-level columns: vote counts or probabilities."""
    import csv

    rows = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != n_levels + 1:
            raise ValueError(
                f"label table must have 1 + {n_levels} columns, got {len(header)}"
            )
        for line in reader:
            if not line:
                continue
            sid = int(line[0])
            values = np.array([float(v) for v in line[1:]], dtype=np.float64)
            if np.allclose(values, np.round(values)) and values.sum() > 1.5:
                rows[sid] = ratings.from_votes(values)
            else:
                rows[sid] = ratings.validate_distribution(values / values.sum())
    return rows


def import_external_features(bank, labels):
    """Align a feature bank with a label table into (ids, features, distributions).

    ``bank`` is a FeatureBank (or .gsf path); ``labels`` is a mapping id ->
    distribution (or a label-table path).  Feature ids without a label row
    are listed and rejected; alignment is order-insensitive (sorted by id).
    """
    if not isinstance(bank, fileformats.FeatureBank):
        bank = fileformats.read_feature_bank(bank)
    if not isinstance(labels, dict):
        labels = read_label_table(labels)
    orphans = sorted(int(i) for i in bank.ids if int(i) not in labels)
    if orphans:
        raise ValueError(
            f"{len(orphans)} feature ids have no label row: {orphans[:10]}"
        )
    order = np.argsort(bank.ids)
    ids = bank.ids[order]
    feats = bank.features[order]
    dists = np.stack([labels[int(i)] for i in ids]).astype(np.float32)
    return ids, feats, dists
