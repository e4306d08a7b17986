"""Training objectives as differentiable composites over the tensor engine.

Every loss accepts either single samples (vectors) or batches (rows) and
returns a scalar Tensor; batch inputs are averaged over rows.  Numpy arrays
are lifted to constant tensors, so ground-truth targets and cached teacher
records can be passed directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BCE_CLAMP = 1e-7

LOSS_KINDS = (
    "emd",
    "kd",
    "mixed_loss",
    "mixed_label",
    "multitask",
    "bce_kd",
    "mse_kd",
    "bce",
    "mse",
)


@dataclass
class LossSpec:
    """Configured objective: a kind plus term weights.

    The mixed variants blend ground truth and teacher predictions with the
    fixed 1/2, 1/2 weighting; other weights default to 1.
    """

    kind: str = "emd"
    output_weight: float = 1.0
    feature_weight: float = 1.0
    gt_weight: float = 0.5
    teacher_weight: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        for name in ("output_weight", "feature_weight", "gt_weight", "teacher_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.kind in ("mixed_loss", "mixed_label") and (
            self.gt_weight != 0.5 or self.teacher_weight != 0.5
        ):
            raise ValueError("mixed variants fix the gt/teacher blend at 1/2, 1/2")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _as_rows(x):
    t = _as_tensor(x)
    return ad.reshape(t, (1, -1)) if t.data.ndim == 1 else t


def emd_loss(y, y_hat):
    """Earth-mover distance between rating distributions.

    Per row: sqrt((1/n) * sum_k |CDF_y(k) - CDF_yhat(k)|^2), averaged over
    rows for batch input.  Differentiable w.r.t. both arguments.
    """
    y, y_hat = _as_rows(y), _as_rows(y_hat)
    if y.data.shape[-1] != y_hat.data.shape[-1]:
        raise ValueError(
            f"distribution length mismatch: {y.data.shape[-1]} vs {y_hat.data.shape[-1]}"
        )
    diff = ad.cumsum(y, axis=-1) - ad.cumsum(y_hat, axis=-1)
    per_row = ad.sqrt(ad.mean(ad.square(diff), axis=-1))
    return ad.mean(per_row)


def mse(a, b):
    """Mean of squared elementwise differences (mean, not sum, over dims)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    return ad.mean(ad.square(a - b))


def bce(pred, target):
    """Binary cross-entropy with soft targets, averaged over entries.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"bce shape mismatch: {pred.data.shape} vs {target.data.shape}")
    p = ad.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = target
    return -ad.mean(t * ad.log(p) + (1.0 - t) * ad.log(1.0 - p))


def kd_loss(teacher_dist, student_dist, teacher_feat, student_feat,
            output_weight=1.0, feature_weight=1.0):
    """Distillation objective: EMD on predictions plus MSE on features."""
    t_feat, s_feat = _as_tensor(teacher_feat), _as_tensor(student_feat)
    if t_feat.data.shape != s_feat.data.shape:
        raise ValueError(
            f"feature width mismatch: {t_feat.data.shape} vs {s_feat.data.shape}"
        )
    return output_weight * emd_loss(teacher_dist, student_dist) + feature_weight * mse(
        t_feat, s_feat
    )


def mixed_loss(teacher_dist, student_dist, gt_dist, teacher_feat, student_feat):
    """Teacher and ground-truth targets scored separately, half weight each."""
    return (
        0.5 * emd_loss(teacher_dist, student_dist)
        + 0.5 * emd_loss(gt_dist, student_dist)
        + mse(teacher_feat, student_feat)
    )


def blend_labels(gt_dist, teacher_dist):
    """Half/half convex blend of ground truth and teacher prediction."""
    gt, t = _as_rows(gt_dist), _as_rows(teacher_dist)
    if gt.data.shape != t.data.shape:
        raise ValueError(f"blend shape mismatch: {gt.data.shape} vs {t.data.shape}")
    return 0.5 * gt + 0.5 * t


def mixed_label_loss(teacher_dist, student_dist, gt_dist, teacher_feat, student_feat):
    """Targets blended before scoring; the blend is itself a distribution."""
    return emd_loss(blend_labels(gt_dist, teacher_dist), student_dist) + mse(
        teacher_feat, student_feat
    )


def multitask_loss(pred_dist, gt_dist, pred_semantic, gt_semantic):
    """Aesthetic EMD plus binary cross-entropy on the two-hot semantic vector."""
    return emd_loss(gt_dist, pred_dist) + bce(pred_semantic, gt_semantic)


def bce_kd_loss(teacher_prob, student_prob, teacher_feat, student_feat):
    """Binary-classification distillation: BCE against the teacher's soft target."""
    return bce(student_prob, teacher_prob) + mse(teacher_feat, student_feat)


def mse_kd_loss(teacher_score, student_score, teacher_feat, student_feat):
    """Score-regression distillation: squared score error plus feature MSE."""
    return mse(teacher_score, student_score) + mse(teacher_feat, student_feat)
