"""ROI-restricted scalar value functions over perturbed logits.

All four scores compare a coalition's prediction against the model's own
baseline prediction inside the ROI, never against ground truth. TP rewards
target-class logit mass on voxels that stay positive, FP penalizes logit
mass on newly positive voxels, Dice measures binary agreement, and the
soft score is their signed combination (s_soft == s_tp + s_fp).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .grid import RoiMask
from .infer import LogitVolume, hard_prediction

DICE_EPSILON = 1e-6


class ScoreKind(str, Enum):
    TP = "tp"
    FP = "fp"
    DICE = "dice"
    SOFT_DICE = "softdice"


@dataclass(frozen=True)
class ScoreConfig:
    kind: ScoreKind = ScoreKind.SOFT_DICE
    target_class: int = 1
    epsilon: float = DICE_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "kind", ScoreKind(self.kind))
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.target_class < 0:
            raise ValidationError(f"target class must be >= 0, got {self.target_class}")


@dataclass(frozen=True)
class BaselineContext:
    """Frozen per-run scoring context: baseline hard prediction and ROI, on the crop grid.

    The ROI may be any region, not necessarily a subset of the baseline
    prediction; FP scoring is only informative where it covers
    baseline-negative voxels.
    """

    baseline_pred: np.ndarray
    roi: np.ndarray
    roi_size: int

    @classmethod
    def create(cls, baseline_logits: LogitVolume, roi: RoiMask, target_class: int) -> "BaselineContext":
        if roi.dims != baseline_logits.dims:
            raise ValidationError(f"ROI dims {roi.dims} != logit dims {baseline_logits.dims}")
        roi_size = roi.num_set
        if roi_size == 0:
            raise ValidationError("empty ROI")
        p0 = hard_prediction(baseline_logits, target_class)
        p0.setflags(write=False)
        roi_data = roi.data.copy()
        roi_data.setflags(write=False)
        return cls(baseline_pred=p0, roi=roi_data, roi_size=roi_size)


def _check_dims(ctx: BaselineContext, pred_m: np.ndarray) -> None:
    if pred_m.shape != ctx.roi.shape:
        raise ValidationError(f"prediction shape {pred_m.shape} != ROI shape {ctx.roi.shape}")


def s_tp(logits_m: LogitVolume, pred_m: np.ndarray, ctx: BaselineContext, target_class: int) -> float:
    """Mean target logit over ROI voxels positive in both the coalition and the baseline."""
    _check_dims(ctx, pred_m)
    z = logits_m.data[target_class].astype(np.float64)
    keep = (ctx.roi == 1) & (pred_m == 1) & (ctx.baseline_pred == 1)
    return float(z[keep].sum() / ctx.roi_size)


def s_fp(logits_m: LogitVolume, pred_m: np.ndarray, ctx: BaselineContext, target_class: int) -> float:
    """Negated mean target logit over ROI voxels newly positive relative to the baseline."""
    _check_dims(ctx, pred_m)
    z = logits_m.data[target_class].astype(np.float64)
    new_pos = (ctx.roi == 1) & (pred_m == 1) & (ctx.baseline_pred == 0)
    return float(-(z[new_pos].sum()) / ctx.roi_size)


def s_dice(pred_m: np.ndarray, ctx: BaselineContext, epsilon: float = DICE_EPSILON) -> float:
    """Dice agreement between the coalition and baseline predictions, ROI-masked."""
    _check_dims(ctx, pred_m)
    pm = (ctx.roi == 1) & (pred_m == 1)
    p0 = (ctx.roi == 1) & (ctx.baseline_pred == 1)
    inter = int(np.count_nonzero(pm & p0))
    return float(2.0 * inter / (int(pm.sum()) + int(p0.sum()) + epsilon))


def s_soft(logits_m: LogitVolume, pred_m: np.ndarray, ctx: BaselineContext, target_class: int) -> float:
    """Signed-agreement logit score: +z on baseline-positive voxels, -z on new ones."""
    _check_dims(ctx, pred_m)
    z = logits_m.data[target_class].astype(np.float64)
    active = (ctx.roi == 1) & (pred_m == 1)
    w = 2.0 * ctx.baseline_pred.astype(np.float64) - 1.0
    return float((w[active] * z[active]).sum() / ctx.roi_size)


def evaluate(kind: ScoreKind, logits_m: LogitVolume, ctx: BaselineContext, cfg: ScoreConfig) -> float:
    """Dispatch: derive the hard prediction from the logits, then score."""
    pred_m = hard_prediction(logits_m, cfg.target_class)
    kind = ScoreKind(kind)
    if kind is ScoreKind.TP:
        return s_tp(logits_m, pred_m, ctx, cfg.target_class)
    if kind is ScoreKind.FP:
        return s_fp(logits_m, pred_m, ctx, cfg.target_class)
    if kind is ScoreKind.DICE:
        return s_dice(pred_m, ctx, cfg.epsilon)
    return s_soft(logits_m, pred_m, ctx, cfg.target_class)
