"""Flow-error metrics: mean end-point error and outlier percentage.

A pixel is an outlier when its end-point error exceeds both 3 px and 5%
of the ground-truth flow magnitude (the KITTI-style conjunction). Dense
evaluation masks to valid ground truth; sparse evaluation additionally
requires at least one triggered event at the pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FlowField
from .representation import VoxelGrid, valid_mask

OUTLIER_ABS_PX = 3.0
OUTLIER_REL = 0.05


@dataclass(frozen=True)
class EvalReport:
    epe: float
    out_pct: float
    n_pixels: int
    mode: str
    degenerate: bool = False   # empty evaluation mask


def _check_shapes(pred: FlowField, gt: FlowField, mask: np.ndarray):
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")


def _pixel_epe(pred: FlowField, gt: FlowField):
    return np.hypot(pred.u - gt.u, pred.v - gt.v)


def epe(pred: FlowField, gt: FlowField, mask: np.ndarray) -> float:
    """Mean end-point error over mask-true pixels (0 on an empty mask)."""
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(pred, gt, mask)
    if not mask.any():
        return 0.0
    return float(_pixel_epe(pred, gt)[mask].mean())


def outlier_pct(pred: FlowField, gt: FlowField, mask: np.ndarray) -> float:
    """Percentage of mask-true pixels with EPE > 3 px and > 5% of |gt|."""
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(pred, gt, mask)
    if not mask.any():
        return 0.0
    err = _pixel_epe(pred, gt)[mask]
    gt_mag = gt.magnitude()[mask]
    out = (err > OUTLIER_ABS_PX) & (err > OUTLIER_REL * gt_mag)
    return 100.0 * int(out.sum()) / err.size


def evaluate(pred: FlowField, gt: FlowField, mode: str, events: VoxelGrid | None = None) -> EvalReport:
    """Dense or sparse evaluation of a prediction against ground truth."""
    if mode not in ("dense", "sparse"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sparse" and events is None:
        raise ValueError("sparse evaluation requires an event voxel grid")
    mask = gt.valid.copy()
    if mode == "sparse":
        ev_mask = valid_mask(events)
        if ev_mask.shape != mask.shape:
            raise ValueError("event grid shape does not match the flow field")
        mask &= ev_mask
    n = int(mask.sum())
    if n == 0:
        return EvalReport(0.0, 0.0, 0, mode, degenerate=True)
    return EvalReport(epe(pred, gt, mask), outlier_pct(pred, gt, mask), n, mode)
