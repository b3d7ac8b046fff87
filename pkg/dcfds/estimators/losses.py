from __future__ import annotations

import numpy as np

from ..errors import DcfdsError, ShapeError
from ..models import LossReport, TFMask, TimeMask


BCE_EPSILON = 1e-7


def _values(x: TimeMask | TFMask | np.ndarray) -> np.ndarray:
    if isinstance(x, TimeMask):
        return x.probs
    if isinstance(x, TFMask):
        return np.real(x.masks).astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _check_shapes(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ShapeError("shape_mismatch", "prediction and target shapes differ", {"pred": list(pred.shape), "target": list(target.shape)})
    if pred.size == 0:
        raise ShapeError("empty_loss", "loss over an empty tensor is undefined")


def bce_loss(pred: TimeMask | np.ndarray, label: TimeMask | np.ndarray) -> tuple[float, np.ndarray]:
    p = _values(pred)
    y = _values(label)
    _check_shapes(p, y)
    p = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    count = p.size
    loss = -float(np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
    grad = (p - y) / (p * (1.0 - p) * count)
    return loss, grad


def mae_loss(pred: TFMask | np.ndarray, target: TFMask | np.ndarray) -> tuple[float, np.ndarray]:
    p = _values(pred)
    t = _values(target)
    _check_shapes(p, t)
    diff = p - t
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def overall_loss(bce: float, mae: float, lam: float = 1.0) -> float:
    if lam < 0:
        raise DcfdsError("invalid_lambda", "loss weight must be nonnegative", {"lambda": lam})
    return lam * bce + mae


def window_losses(
    time_mask: TimeMask,
    label: TimeMask | np.ndarray,
    masks: TFMask,
    target: TFMask | np.ndarray,
    lam: float = 1.0,
    se_masks: TFMask | None = None,
) -> LossReport:
    bce, _ = bce_loss(time_mask, label)
    mae, _ = mae_loss(masks, target)
    se_mae = mae_loss(se_masks, target)[0] if se_masks is not None else None
    return LossReport(bce=bce, mae=mae, overall=overall_loss(bce, mae, lam), se_mae=se_mae)
