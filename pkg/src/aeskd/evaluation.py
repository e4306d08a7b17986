"""Metrics and analysis protocols: correlations, matching, mIoU, variance, cost.

Rank correlation uses fractional (average-tie) ranks; percentiles use the
nearest-rank convention with >=-threshold inclusion, so every number here
is integer-exact and reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ratings

logger = logging.getLogger(__name__)


# -- correlation metrics -----------------------------------------------------------


def _check_pair(pred, gt, metric):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValueError(f"{metric} needs two equal-length vectors")
    if pred.size < 2:
        raise ValueError(f"{metric} needs at least 2 points, got {pred.size}")
    if np.ptp(pred) == 0 or np.ptp(gt) == 0:
        raise ValueError(f"{metric} undefined for a constant vector")
    return pred, gt


def fractional_ranks(x):
    """Average-tie ranks, 1-based."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom)


def srcc(pred, gt):
    """Spearman rank correlation: Pearson over average-tie ranks."""
    pred, gt = _check_pair(pred, gt, "srcc")
    return _pearson(fractional_ranks(pred), fractional_ranks(gt))


def plcc(pred, gt):
    """Pearson linear correlation."""
    pred, gt = _check_pair(pred, gt, "plcc")
    return _pearson(pred, gt)


def accuracy(pred, gt, threshold=ratings.SCORE_THRESHOLD):
    """Fraction of samples whose low/high class matches after binarization."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("accuracy needs equal-length vectors")
    match = [
        ratings.binarize(p, threshold) == ratings.binarize(g, threshold)
        for p, g in zip(pred, gt)
    ]
    return float(np.mean(match))


def binary_accuracy(probabilities, gt_scores, threshold=ratings.SCORE_THRESHOLD):
    """Accuracy of probability-of-high predictions against score labels."""
    pred_cls = np.asarray(probabilities) > 0.5
    gt_cls = np.asarray(gt_scores) > threshold
    return float((pred_cls == gt_cls).mean())


@dataclass
class MetricReport:
    srcc: float
    plcc: float
    acc: float
    mean_emd: float | None
    n: int
    per_category: dict = field(default_factory=dict)

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.srcc <= 1.0 + 1e-9:
            raise ValueError(f"srcc {self.srcc} outside [-1, 1]")
        if not -1.0 - 1e-9 <= self.plcc <= 1.0 + 1e-9:
            raise ValueError(f"plcc {self.plcc} outside [-1, 1]")
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError(f"accuracy {self.acc} outside [0, 1]")

    def as_records(self, **extra):
        rows = [
            dict(metric="srcc", value=self.srcc, n=self.n, **extra),
            dict(metric="plcc", value=self.plcc, n=self.n, **extra),
            dict(metric="acc", value=self.acc, n=self.n, **extra),
        ]
        if self.mean_emd is not None:
            rows.append(dict(metric="mean_emd", value=self.mean_emd, n=self.n, **extra))
        for cat, sub in self.per_category.items():
            rows.append(
                dict(metric="srcc", value=sub["srcc"], n=sub["n"], category=cat, **extra)
            )
        return rows


def _mean_emd(pred_dists, gt_dists):
    cp = np.cumsum(pred_dists, axis=-1)
    cg = np.cumsum(gt_dists, axis=-1)
    return float(np.sqrt(np.mean((cp - cg) ** 2, axis=-1)).mean())


def metric_report(pred_scores, gt_scores, pred_dists=None, gt_dists=None,
                  categories=None):
    """Full report: correlations, accuracy, mean EMD, per-category SRCC."""
    report = MetricReport(
        srcc=srcc(pred_scores, gt_scores),
        plcc=plcc(pred_scores, gt_scores),
        acc=accuracy(pred_scores, gt_scores),
        mean_emd=(
            _mean_emd(pred_dists, gt_dists)
            if pred_dists is not None and gt_dists is not None
            else None
        ),
        n=len(gt_scores),
    )
    if categories is not None:
        categories = np.asarray(categories)
        pred = np.asarray(pred_scores, dtype=np.float64)
        gt = np.asarray(gt_scores, dtype=np.float64)
        for cat in sorted(set(categories.tolist())):
            sel = categories == cat
            if sel.sum() >= 2 and np.ptp(pred[sel]) > 0 and np.ptp(gt[sel]) > 0:
                report.per_category[cat] = {
                    "srcc": srcc(pred[sel], gt[sel]),
                    "n": int(sel.sum()),
                }
    return report


# -- matching-based evaluation --------------------------------------------------------


def match_eval(query_feats, bank_feats, bank_scores, bank_ids=None,
               query_gt_scores=None):
    """Score each query with its nearest bank item's score.

    Features are z-scored per dimension with the bank's statistics;
    zero-variance dimensions are dropped (and logged).  Nearest neighbour
    under L2, ties broken by the lowest bank sample id.  Returns
    (predicted scores, info dict); info carries a MetricReport when ground
    truth is supplied.
    """
    bank_feats = np.asarray(bank_feats, dtype=np.float64)
    query_feats = np.asarray(query_feats, dtype=np.float64)
    bank_scores = np.asarray(bank_scores, dtype=np.float64)
    if bank_feats.shape[0] == 0:
        raise ValueError("matching needs a non-empty bank")
    if bank_feats.shape[1] != query_feats.shape[1]:
        raise ValueError(
            f"feature width mismatch: bank {bank_feats.shape[1]}, query {query_feats.shape[1]}"
        )
    if bank_ids is None:
        bank_ids = np.arange(bank_feats.shape[0])
    bank_ids = np.asarray(bank_ids)

    mu = bank_feats.mean(axis=0)
    sd = bank_feats.std(axis=0)
    keep = sd > 0
    dropped = int((~keep).sum())
    if dropped:
        logger.info("match_eval dropped %d zero-variance dimensions", dropped)
    if not keep.any():
        raise ValueError("all bank feature dimensions have zero variance")
    zb = (bank_feats[:, keep] - mu[keep]) / sd[keep]
    zq = (query_feats[:, keep] - mu[keep]) / sd[keep]

    # sort the bank by id so argmin returns the lowest id among exact ties
    order = np.argsort(bank_ids, kind="mergesort")
    zb, scores_sorted = zb[order], bank_scores[order]
    d2 = (zq * zq).sum(axis=1, keepdims=True) - 2.0 * zq @ zb.T + (zb * zb).sum(axis=1)
    nearest = np.argmin(d2, axis=1)
    pred = scores_sorted[nearest]

    info = {"dropped_dimensions": dropped}
    if query_gt_scores is not None:
        info["report"] = metric_report(pred, query_gt_scores)
    return pred, info


# -- activation-map thresholding and mIoU ------------------------------------------------


def percentile_threshold(amap, p):
    """Binary mask of pixels at or above the nearest-rank p-th percentile."""
    if not 0 < p < 100:
        raise ValueError(f"percentile must be in (0, 100), got {p}")
    flat = np.sort(np.asarray(amap, dtype=np.float64).reshape(-1))
    rank = int(np.ceil(p / 100.0 * flat.size))
    threshold = flat[max(rank - 1, 0)]
    return np.asarray(amap) >= threshold


def iou(mask_a, mask_b):
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask extent mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return None
    return float(np.logical_and(a, b).sum() / union)


PERCENTILE_GRID = tuple(range(5, 100, 5))


def miou_eval(maps, gt_masks, p=70, grid=PERCENTILE_GRID):
    """Mean IoU of percentile-thresholded maps against ground-truth masks.

    Returns (mean IoU at p, curve, skipped) where curve lists (percentile,
    mIoU) over the grid and skipped counts empty-union pairs.
    """
    if len(maps) != len(gt_masks):
        raise ValueError("maps and masks must pair up")

    def mean_iou_at(pct):
        vals, skipped = [], 0
        for amap, gt in zip(maps, gt_masks):
            value = iou(percentile_threshold(amap, pct), gt)
            if value is None:
                skipped += 1
            else:
                vals.append(value)
        return (float(np.mean(vals)) if vals else 0.0), skipped

    miou_p, skipped = mean_iou_at(p)
    curve = [(pct, mean_iou_at(pct)[0]) for pct in grid]
    return miou_p, curve, skipped


# -- variance decomposition ----------------------------------------------------------------


@dataclass
class VarianceReport:
    delta_training: float
    delta_exp: float
    delta_split: float
    negative_split_flag: bool
    same_split_runs: list
    cross_split_runs: list

    def significant(self, improvement):
        """The significance rule: an improvement must exceed delta_training."""
        return improvement > self.delta_training

    def as_records(self, metric="srcc"):
        return [
            dict(metric=f"delta_training_{metric}", value=self.delta_training,
                 n=len(self.same_split_runs)),
            dict(metric=f"delta_exp_{metric}", value=self.delta_exp,
                 n=len(self.cross_split_runs)),
            dict(metric=f"delta_split_{metric}", value=self.delta_split,
                 n=len(self.cross_split_runs)),
        ]


def variance_decomposition(same_split_runs, cross_split_runs):
    """Spread decomposition: observed = split effect + training randomness.

    Spreads are max - min.  The split term is reported as the residual
    delta_exp - delta_training, floored at zero with a flag when repeats
    dominate.
    """
    same = [float(v) for v in same_split_runs]
    cross = [float(v) for v in cross_split_runs]
    if len(same) < 2 or len(cross) < 2:
        raise ValueError("variance decomposition needs at least 2 runs per protocol")
    delta_training = max(same) - min(same)
    delta_exp = max(cross) - min(cross)
    residual = delta_exp - delta_training
    flagged = residual < 0
    if flagged:
        logger.warning(
            "training randomness (%.4f) exceeds cross-split spread (%.4f); "
            "split term floored at 0",
            delta_training,
            delta_exp,
        )
    return VarianceReport(
        delta_training=delta_training,
        delta_exp=delta_exp,
        delta_split=max(residual, 0.0),
        negative_split_flag=bool(flagged),
        same_split_runs=same,
        cross_split_runs=cross,
    )


# -- cost accounting --------------------------------------------------------------------

TRAIN_COST_FACTOR = 3  # training pass costed at 3x the inference pass


@dataclass
class CostStage:
    name: str
    macs_per_input: float
    epochs: int = 1
    training: bool = False

    @property
    def total(self):
        per_input = self.macs_per_input * (TRAIN_COST_FACTOR if self.training else 1)
        return per_input * self.epochs


@dataclass
class CostReport:
    inference_macs: int
    training_macs_per_input: int
    stages: list = field(default_factory=list)

    def __post_init__(self):
        if self.inference_macs <= 0:
            raise ValueError("cost estimate requires positive MAC counts")
        if self.training_macs_per_input != TRAIN_COST_FACTOR * self.inference_macs:
            raise ValueError("training/inference cost ratio must be exactly 3")

    @property
    def pipeline_total(self):
        return sum(stage.total for stage in self.stages)


def cost_estimate(model, input_shape):
    """Multiply-accumulate count for one forward input, plus the 3x training cost.

    ``input_shape`` is the per-sample shape (no batch dimension) and must be
    fully static.
    """
    if any(d is None or int(d) <= 0 for d in input_shape):
        raise ValueError(f"cost estimation needs a static positive shape, got {input_shape}")
    macs = int(model.inference_macs(tuple(int(d) for d in input_shape)))
    return CostReport(
        inference_macs=macs,
        training_macs_per_input=TRAIN_COST_FACTOR * macs,
    )


def pipeline_cost(stages):
    """Total cost of a composed pipeline: the stage totals add linearly."""
    return float(sum(stage.total for stage in stages))
