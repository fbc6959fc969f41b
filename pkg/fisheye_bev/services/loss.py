"""
Loss service: occlusion-masked weighted cross-entropy, occlusion BCE and
their weighted total, each returned with its analytic gradient.
"""

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from fisheye_bev.services.metrics import CLASS_NAMES, NUM_CLASSES
from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError, DataError, DomainError, ShapeError

SIMPLEX_TOLERANCE = 1e-6

CLASS_WEIGHT_PRESETS = {
    # vehicles-markings-street-background; invalid keeps weight 1
    '13-3-1-1': (1.0, 13.0, 3.0, 1.0, 1.0),
    '1-1-1-1': (1.0, 1.0, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class LossConfig:
    """
    Attributes:
        class_weights: alpha_i per class id (invalid, vehicles, markings, street, background)
        lam: weight of the occlusion loss in the total
        eps: log clamp
    """

    class_weights: Tuple[float, ...] = CLASS_WEIGHT_PRESETS['1-1-1-1']
    lam: float = field(default_factory=lambda: config.LOSS_LAMBDA)
    eps: float = field(default_factory=lambda: config.LOSS_EPS)

    def __post_init__(self):
        weights = tuple(float(a) for a in self.class_weights)
        object.__setattr__(self, 'class_weights', weights)
        if not weights or not all(math.isfinite(a) and a > 0 for a in weights):
            raise ConfigError(f"Class weights must all be > 0, got {weights}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.eps <= 1e-3:
            raise ConfigError(f"eps must lie in (0, 1e-3], got {self.eps}")

    @classmethod
    def from_weights(cls, spec: str, **kwargs) -> 'LossConfig':
        """
        Build from a dash-separated weight string.

        Four numbers weight vehicles, markings, street, background (invalid = 1);
        five numbers give every class in id order.
        """
        if spec in CLASS_WEIGHT_PRESETS:
            return cls(class_weights=CLASS_WEIGHT_PRESETS[spec], **kwargs)
        try:
            values = [float(part) for part in spec.split('-')]
        except ValueError:
            raise ConfigError(f"Class weights '{spec}' must be dash-separated numbers, e.g. 13-3-1-1")
        if len(values) == NUM_CLASSES - 1:
            values = [1.0] + values
        if len(values) != NUM_CLASSES:
            raise ConfigError(
                f"Class weights '{spec}' need {NUM_CLASSES - 1} or {NUM_CLASSES} values "
                f"({', '.join(CLASS_NAMES)})"
            )
        return cls(class_weights=tuple(values), **kwargs)

    @property
    def label(self) -> str:
        return '-'.join(f"{a:g}" for a in self.class_weights[1:])


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def semantic_loss(
    pred_prob: np.ndarray,
    gt_class: np.ndarray,
    visibility: np.ndarray,
    cfg: LossConfig,
) -> Tuple[float, np.ndarray]:
    """
    Visibility-weighted, class-weighted cross-entropy.

    L = -sum_cells vis * alpha_gt * log(max(p_gt, eps)) / sum_cells vis

    Cells with zero visibility contribute exactly nothing to the loss or the
    gradient.

    Args:
        pred_prob: (C, nx, ny) class probabilities (softmax of logits)
        gt_class: (nx, ny) class ids
        visibility: (nx, ny) in [0, 1]
        cfg: Class weights and clamp

    Returns:
        (loss, gradient w.r.t. the logits that produced pred_prob)

    Raises:
        ShapeError: dimension mismatch
        DomainError: prediction off the simplex or visibility outside [0, 1]
        DataError: class id outside [0, C)
    """
    pred = np.asarray(pred_prob, dtype=np.float64)
    gt = np.asarray(gt_class)
    vis = np.asarray(visibility, dtype=np.float64)
    channels = len(cfg.class_weights)
    if pred.ndim != 3 or pred.shape[0] != channels:
        raise ShapeError(f"pred_prob must be ({channels}, nx, ny), got {pred.shape}")
    if gt.shape != pred.shape[1:] or vis.shape != pred.shape[1:]:
        raise ShapeError(f"gt_class and visibility must be {pred.shape[1:]}, got {gt.shape} and {vis.shape}")
    if np.any(pred < 0) or np.any(np.abs(pred.sum(axis=0) - 1.0) > SIMPLEX_TOLERANCE):
        raise DomainError(f"pred_prob must sum to 1 per cell within {SIMPLEX_TOLERANCE}")
    if np.any((gt < 0) | (gt >= channels)):
        raise DataError(f"gt_class contains ids outside [0, {channels})")
    if np.any(~((vis >= 0) & (vis <= 1))):
        raise DomainError("visibility must lie in [0, 1]")

    total_vis = vis.sum()
    grad = np.zeros_like(pred)
    if total_vis <= 0:
        return 0.0, grad

    alpha = np.asarray(cfg.class_weights)[gt]
    p_gt = np.take_along_axis(pred, gt[None].astype(np.int64), axis=0)[0]
    active = vis > 0
    log_p = np.log(np.maximum(p_gt, cfg.eps))
    loss = -np.sum(np.where(active, vis * alpha * log_p, 0.0)) / total_vis

    # the clamp is flat below eps, so those cells pass no gradient
    scale = np.where(active & (p_gt >= cfg.eps), vis * alpha / total_vis, 0.0)
    one_hot = np.zeros_like(pred)
    np.put_along_axis(one_hot, gt[None].astype(np.int64), 1.0, axis=0)
    grad = scale[None] * (pred - one_hot)
    return float(loss), grad


def occlusion_loss(
    pred_occ: np.ndarray,
    gt_occ: np.ndarray,
    eps: float = None,
    logistic: bool = False,
) -> Tuple[float, np.ndarray]:
    """
    Mean binary cross-entropy over cells.

    Args:
        pred_occ: Predicted occlusion probability per cell
        gt_occ: Labels in {0, 1}
        eps: Clamp of pred into [eps, 1 - eps] (default: FBEV_LOSS_EPS)
        logistic: Return the gradient w.r.t. the logit of a sigmoid unit,
            (pred - gt) / N, instead of the gradient w.r.t. pred

    Returns:
        (loss, gradient)

    Raises:
        ShapeError: dimension mismatch
        DomainError: labels outside {0, 1}
    """
    eps = config.LOSS_EPS if eps is None else eps
    pred = np.asarray(pred_occ, dtype=np.float64)
    gt = np.asarray(gt_occ, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred_occ {pred.shape} and gt_occ {gt.shape} differ")
    if np.any((gt != 0.0) & (gt != 1.0)):
        raise DomainError("gt_occ must only contain 0 and 1")
    n = pred.size
    if n == 0:
        return 0.0, np.zeros_like(pred)

    clipped = np.clip(pred, eps, 1.0 - eps)
    loss = -np.mean(gt * np.log(clipped) + (1.0 - gt) * np.log(1.0 - clipped))
    if logistic:
        grad = (pred - gt) / n
    else:
        inside = (pred >= eps) & (pred <= 1.0 - eps)
        grad = np.where(inside, (clipped - gt) / (clipped * (1.0 - clipped)) / n, 0.0)
    return float(loss), grad


def total_loss(sem: float, occ: float, lam: float) -> float:
    """L_total = sem + lam * occ."""
    return sem + lam * occ