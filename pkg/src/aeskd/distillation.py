"""Knowledge distiller, teacher-knowledge cache, and student training modes.

The distiller maps stacked pooled features to a rating distribution through
batch norm and three linear layers; its penultimate activation is the
teacher aesthetic feature.  Students are single-backbone models whose
aligning head matches the teacher feature width, trained in one of the
modes below.  Teacher knowledge is produced once, in inference mode, and
read back from an immutable cache during student training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad, losses, nn, ratings
from .autodiff import Tensor
from .backbones import Backbone, mlsp_pool
from .fileformats import FeatureBank, TeacherKnowledge
from .optim import Adam, LrSchedule
from .synthcorpus import SEMANTIC_VOCAB

AESTHETIC_FEATURE_WIDTH = 64
DISTILLER_HIDDEN = (128, 64)

STUDENT_MODES = (
    "baseline",
    "kd",
    "mixed_loss",
    "mixed_label",
    "multitask",
    "multimodal",
    "binary_baseline",
    "binary_kd",
    "regress_baseline",
    "regress_kd",
)
_CACHE_MODES = {"kd", "mixed_loss", "mixed_label", "binary_kd", "regress_kd"}
_SEMANTIC_MODES = {"multitask", "multimodal"}
_BINARY_MODES = {"binary_baseline", "binary_kd"}
_REGRESS_MODES = {"regress_baseline", "regress_kd"}


@dataclass
class TrainingMode:
    mode: str = "baseline"
    frozen_backbone: bool = False
    # kd-term switches (the loss-term ablation): with outputs off, ground
    # truth supervises the prediction head instead of the teacher
    supervise_features: bool = True
    supervise_outputs: bool = True

    def __post_init__(self):
        if self.mode not in STUDENT_MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")

    @property
    def needs_cache(self):
        return self.mode in _CACHE_MODES

    @property
    def needs_semantic(self):
        return self.mode in _SEMANTIC_MODES

    @property
    def head(self):
        if self.mode in _BINARY_MODES:
            return "binary"
        if self.mode in _REGRESS_MODES:
            return "regression"
        return "distribution"


class KnowledgeDistiller(nn.Module):
    """Batch norm over stacked features, then three linear layers.

    The second ReLU output (width ``feature_width``) is the aesthetic
    feature; the final linear + softmax yields the predicted distribution.
    """

    def __init__(self, in_dim, n_levels=10, hidden=DISTILLER_HIDDEN,
                 feature_width=AESTHETIC_FEATURE_WIDTH, seed=0):
        super().__init__()
        rng = nn.init_rng(seed)
        h1, h2 = hidden[0], feature_width if len(hidden) < 2 else hidden[1]
        if h2 != feature_width:
            raise ValueError("penultimate width must equal the aesthetic-feature width")
        self.in_dim = in_dim
        self.n_levels = n_levels
        self.feature_width = feature_width
        self.bn = nn.BatchNorm(in_dim)
        self.fc1 = nn.Linear(in_dim, h1, rng=rng)
        self.fc2 = nn.Linear(h1, h2, rng=rng)
        self.out = nn.Linear(h2, n_levels, rng=rng)

    def forward(self, feats):
        if feats.data.shape[-1] != self.in_dim:
            raise ValueError(
                f"distiller expects width {self.in_dim}, got {feats.data.shape[-1]}"
            )
        x = self.bn(feats)
        x = ad.relu(self.fc1(x))
        feature = ad.relu(self.fc2(x))
        probs = ad.softmax(self.out(feature), axis=-1)
        return feature, probs

    def inference_macs(self, input_shape=None):
        return (
            self.fc1.inference_macs(None)
            + self.fc2.inference_macs(None)
            + self.out.inference_macs(None)
        )


def train_distiller(features, distributions, epochs=12, batch_size=128,
                    schedule=None, seed=0, n_levels=10):
    """EMD-train a distiller on stacked pooled features.

    ``features``/``distributions`` are aligned arrays (same row order).
    Returns (distiller, history).  Zero epochs returns the initialized
    model.
    """
    features = np.asarray(features, dtype=np.float32)
    distributions = np.asarray(distributions, dtype=np.float32)
    if features.shape[0] != distributions.shape[0]:
        raise ValueError(
            f"feature/label row mismatch: {features.shape[0]} vs {distributions.shape[0]}"
        )
    model = KnowledgeDistiller(features.shape[1], n_levels=n_levels, seed=seed)
    schedule = schedule if schedule is not None else LrSchedule(initial=1e-3)
    opt = Adam(model.parameters(), schedule)
    rng = np.random.default_rng(seed + 11)
    n = features.shape[0]
    history = {"epoch_loss": []}
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue  # batch norm needs more than one row
            _, probs = model(Tensor(features[idx]))
            loss = losses.emd_loss(distributions[idx], probs)
            model.zero_grad()
            loss.backward()
            opt.step(epoch=epoch)
            total += loss.item() * len(idx)
        history["epoch_loss"].append(total / n)
    return model, history


def distiller_predict(model, features, batch_size=512):
    """Inference-mode features and distributions; deterministic."""
    model.eval()
    feats_out, dists_out = [], []
    with ad.no_grad():
        for start in range(0, features.shape[0], batch_size):
            f, p = model(Tensor(np.asarray(features[start : start + batch_size], dtype=np.float32)))
            feats_out.append(f.data)
            dists_out.append(p.data)
    return np.concatenate(feats_out), np.concatenate(dists_out)


def distill_knowledge(model, bank):
    """One TeacherKnowledge record per bank sample, in inference mode."""
    if bank.dim != model.in_dim:
        raise ValueError(
            f"feature bank width {bank.dim} does not match distiller input {model.in_dim}"
        )
    feats, dists = distiller_predict(model, bank.features)
    return [
        TeacherKnowledge(
            sample_id=int(sid),
            feature=feats[i].astype(np.float32),
            distribution=dists[i].astype(np.float32),
        )
        for i, sid in enumerate(bank.ids)
    ]


# -- teacher scalar targets for the binary / regression variants -----------------------


def teacher_binary_probability(distribution, threshold=5):
    """Soft high-class target: teacher mass on levels strictly above the cut-off."""
    return float(np.asarray(distribution)[threshold:].sum())


def teacher_regression_score(distribution):
    return ratings.mean_score(distribution)


# -- student model ----------------------------------------------------------------------


class SemanticEncoder(nn.Module):
    """Two stacked fully-connected layers over the two-hot semantic vector."""

    def __init__(self, vocab=SEMANTIC_VOCAB, width=32, rng=None):
        super().__init__()
        rng = rng if rng is not None else nn.init_rng(0)
        self.fc1 = nn.Linear(vocab, width, rng=rng)
        self.fc2 = nn.Linear(width, width, rng=rng)
        self.width = width

    def forward(self, v):
        return ad.relu(self.fc2(ad.relu(self.fc1(v))))

    def inference_macs(self, input_shape=None):
        return self.fc1.inference_macs(None) + self.fc2.inference_macs(None)


class StudentModel(nn.Module):
    """Single backbone, aligning head to the teacher feature width, output head.

    ``head`` selects the output layer: softmax distribution, single sigmoid
    unit, or single linear unit.  The optional semantic encoder feeds the
    aligning head for the auxiliary-input baseline; the optional semantic
    head predicts the two-hot vector for the auxiliary-task baseline.
    """

    def __init__(self, spec, n_levels=10, feature_width=AESTHETIC_FEATURE_WIDTH,
                 align_hidden=128, head="distribution", input_resolution=32,
                 with_semantic_input=False, with_semantic_head=False,
                 semantic_vocab=SEMANTIC_VOCAB, seed=0):
        super().__init__()
        if head not in ("distribution", "binary", "regression"):
            raise ValueError(f"unknown student head {head!r}")
        self.backbone = Backbone(spec, seed=seed)
        rng = nn.init_rng(seed + 3)
        self.spec = spec
        self.head_kind = head
        self.n_levels = n_levels
        self.feature_width = feature_width
        self.input_resolution = input_resolution
        self.with_semantic_input = with_semantic_input
        self.with_semantic_head = with_semantic_head
        in_width = spec.pooled_width
        if with_semantic_input:
            self.semantic_encoder = SemanticEncoder(semantic_vocab, rng=rng)
            in_width += self.semantic_encoder.width
        self.align1 = nn.Linear(in_width, align_hidden, rng=rng)
        self.align2 = nn.Linear(align_hidden, feature_width, rng=rng)
        out_width = n_levels if head == "distribution" else 1
        self.out = nn.Linear(feature_width, out_width, rng=rng)
        if with_semantic_head:
            self.semantic_head = nn.Linear(feature_width, semantic_vocab, rng=rng)

    def forward(self, images, semantic=None):
        if images.data.ndim != 4:
            raise ValueError(f"student expects NCHW images, got {images.data.shape}")
        if images.data.shape[-1] != self.input_resolution:
            raise ValueError(
                f"student configured for {self.input_resolution}px inputs, "
                f"got {images.data.shape[-1]}px"
            )
        pooled = mlsp_pool(self.backbone(images))
        if self.with_semantic_input:
            if semantic is None:
                raise ValueError("this student requires the two-hot semantic input")
            pooled = ad.concat([pooled, self.semantic_encoder(semantic)], axis=1)
        h = ad.relu(self.align1(pooled))
        feature = ad.relu(self.align2(h))
        out = {"feature": feature}
        z = self.out(feature)
        if self.head_kind == "distribution":
            out["distribution"] = ad.softmax(z, axis=-1)
        elif self.head_kind == "binary":
            out["probability"] = ad.sigmoid(z)
        else:
            out["score"] = z
        if self.with_semantic_head:
            out["semantic"] = ad.sigmoid(self.semantic_head(feature))
        return out

    def backbone_parameters(self):
        return set(id(p) for p in self.backbone.parameters())

    def trainable_parameters(self, frozen_backbone=False):
        if not frozen_backbone:
            return self.parameters()
        frozen = self.backbone_parameters()
        return [p for p in self.parameters() if id(p) not in frozen]

    def inference_macs(self, input_shape=None):
        shape = input_shape if input_shape is not None else (
            3, self.input_resolution, self.input_resolution
        )
        macs = self.backbone.inference_macs(shape)
        macs += self.align1.inference_macs(None) + self.align2.inference_macs(None)
        macs += self.out.inference_macs(None)
        if self.with_semantic_input:
            macs += self.semantic_encoder.inference_macs(None)
        if self.with_semantic_head:
            macs += self.semantic_head.inference_macs(None)
        return macs


def build_student(spec, mode, n_levels=10, input_resolution=32, seed=0):
    return StudentModel(
        spec,
        n_levels=n_levels,
        head=mode.head,
        input_resolution=input_resolution,
        with_semantic_input=(mode.mode == "multimodal"),
        with_semantic_head=(mode.mode == "multitask"),
        seed=seed,
    )


# -- training ----------------------------------------------------------------------------


@dataclass
class StudentBatchTargets:
    gt_dists: np.ndarray
    gt_scores: np.ndarray
    semantic: np.ndarray | None = None
    teacher_feats: np.ndarray | None = None
    teacher_dists: np.ndarray | None = None
    teacher_probs: np.ndarray | None = None
    teacher_scores: np.ndarray | None = None


def student_batch_loss(student, images, targets, mode):
    """The exact objective optimized by one kd/training step.

    Exposed so instrumentation can compare the trainer's quantity against a
    hand-assembled loss on the same batch.
    """
    out = student(Tensor(images), semantic=None if targets.semantic is None else Tensor(targets.semantic))
    feature = out["feature"]
    m = mode.mode
    if m == "baseline" or m == "multimodal":
        return losses.emd_loss(targets.gt_dists, out["distribution"]), out
    if m == "kd":
        dist = out["distribution"]
        if mode.supervise_outputs:
            total = losses.emd_loss(targets.teacher_dists, dist)
        else:
            total = losses.emd_loss(targets.gt_dists, dist)
        if mode.supervise_features:
            total = total + losses.mse(targets.teacher_feats, feature)
        return total, out
    if m == "mixed_loss":
        return (
            losses.mixed_loss(
                targets.teacher_dists, out["distribution"], targets.gt_dists,
                targets.teacher_feats, feature,
            ),
            out,
        )
    if m == "mixed_label":
        return (
            losses.mixed_label_loss(
                targets.teacher_dists, out["distribution"], targets.gt_dists,
                targets.teacher_feats, feature,
            ),
            out,
        )
    if m == "multitask":
        return (
            losses.multitask_loss(
                out["distribution"], targets.gt_dists, out["semantic"], targets.semantic
            ),
            out,
        )
    if m == "binary_baseline":
        gt = (targets.gt_scores > ratings.SCORE_THRESHOLD).astype(np.float32)
        return losses.bce(out["probability"], gt[:, None]), out
    if m == "binary_kd":
        return (
            losses.bce_kd_loss(
                targets.teacher_probs[:, None], out["probability"],
                targets.teacher_feats, feature,
            ),
            out,
        )
    if m == "regress_baseline":
        return losses.mse(out["score"], targets.gt_scores.astype(np.float32)[:, None]), out
    if m == "regress_kd":
        return (
            losses.mse_kd_loss(
                targets.teacher_scores[:, None], out["score"],
                targets.teacher_feats, feature,
            ),
            out,
        )
    raise ValueError(f"unhandled mode {m!r}")


def _prepare_targets(records, cache_by_id, mode, n_levels):
    gt_dists = np.array([r.distribution for r in records], dtype=np.float32)
    gt_scores = np.array([r.score for r in records], dtype=np.float64)
    semantic = None
    if mode.needs_semantic:
        semantic = np.stack([r.two_hot() for r in records])
    t_feats = t_dists = t_probs = t_scores = None
    if mode.needs_cache:
        missing = [r.sample_id for r in records if r.sample_id not in cache_by_id]
        if missing:
            raise ValueError(
                f"{len(missing)} training ids missing from the teacher cache: {missing[:5]}"
            )
        recs = [cache_by_id[r.sample_id] for r in records]
        t_feats = np.stack([k.feature for k in recs]).astype(np.float32)
        t_dists = np.stack([k.distribution for k in recs]).astype(np.float32)
        t_probs = np.array(
            [teacher_binary_probability(k.distribution) for k in recs], dtype=np.float32
        )
        t_scores = np.array(
            [teacher_regression_score(k.distribution) for k in recs], dtype=np.float32
        )
    return StudentBatchTargets(
        gt_dists=gt_dists,
        gt_scores=gt_scores,
        semantic=semantic,
        teacher_feats=t_feats,
        teacher_dists=t_dists,
        teacher_probs=t_probs,
        teacher_scores=t_scores,
    )


def _slice_targets(t, idx):
    pick = lambda a: None if a is None else a[idx]
    return StudentBatchTargets(
        gt_dists=t.gt_dists[idx],
        gt_scores=t.gt_scores[idx],
        semantic=pick(t.semantic),
        teacher_feats=pick(t.teacher_feats),
        teacher_dists=pick(t.teacher_dists),
        teacher_probs=pick(t.teacher_probs),
        teacher_scores=pick(t.teacher_scores),
    )


def train_student(student, corpus, train_records, mode, cache=None,
                  epochs=12, batch_size=16, schedule=None, seed=0):
    """Train a student under the given mode; returns (student, history).

    kd-family modes require a teacher cache covering every training id.
    ``frozen_backbone`` leaves only the aligning head, output layer and any
    semantic branches trainable.
    """
    if mode.needs_cache and cache is None:
        raise ValueError(f"mode {mode.mode!r} requires a teacher-knowledge cache")
    cache_by_id = {}
    if cache is not None:
        cache_by_id = {rec.sample_id: rec for rec in cache}
        widths = {rec.feature.shape[0] for rec in cache}
        if mode.needs_cache and widths and widths != {student.feature_width}:
            raise ValueError(
                f"cache feature width {widths} does not match student width "
                f"{student.feature_width}"
            )
    targets = _prepare_targets(train_records, cache_by_id, mode, student.n_levels)
    images = corpus.load_batch(train_records, size=student.input_resolution)
    schedule = schedule if schedule is not None else LrSchedule(initial=1e-3)
    params = student.trainable_parameters(frozen_backbone=mode.frozen_backbone)
    opt = Adam(params, schedule)
    rng = np.random.default_rng(seed + 23)
    n = len(train_records)
    history = {"epoch_loss": [], "mode": mode.mode, "seed": seed}
    student.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            loss, _ = student_batch_loss(
                student, images[idx], _slice_targets(targets, idx), mode
            )
            student.zero_grad()
            loss.backward()
            opt.step(epoch=epoch)
            total += loss.item() * len(idx)
        history["epoch_loss"].append(total / n)
    student.eval()
    return student, history


def predict_student(student, corpus, records, batch_size=64, semantic_from_records=True):
    """Inference-mode predictions for a record list.

    Returns a dict with 'scores' (always) plus 'distributions',
    'probabilities' or raw 'scores_raw' depending on the head.
    """
    student.eval()
    images = corpus.load_batch(records, size=student.input_resolution)
    semantic = None
    if student.with_semantic_input and semantic_from_records:
        semantic = np.stack([r.two_hot() for r in records])
    dists, probs, raw, feats = [], [], [], []
    with ad.no_grad():
        for start in range(0, len(records), batch_size):
            sl = slice(start, start + batch_size)
            sem = None if semantic is None else Tensor(semantic[sl])
            out = student(Tensor(images[sl]), semantic=sem)
            feats.append(out["feature"].data)
            if student.head_kind == "distribution":
                dists.append(out["distribution"].data)
            elif student.head_kind == "binary":
                probs.append(out["probability"].data[:, 0])
            else:
                raw.append(out["score"].data[:, 0])
    result = {"features": np.concatenate(feats)}
    if dists:
        result["distributions"] = np.concatenate(dists)
        result["scores"] = np.array(
            [ratings.mean_score(d) for d in result["distributions"]]
        )
    if probs:
        result["probabilities"] = np.concatenate(probs)
        result["scores"] = result["probabilities"].astype(np.float64)
    if raw:
        result["scores_raw"] = np.concatenate(raw)
        result["scores"] = result["scores_raw"].astype(np.float64)
    return result
