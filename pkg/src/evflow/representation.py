"""Voxel-grid event encoding and the valid-pixel density measure.

An event at normalized time s = (t - t0) / (tN - t0) * (B - 1) deposits
its polarity through a bilinear temporal kernel: bin b receives
p * max(0, 1 - |b - s|). The kernel is a partition of unity over the
bins, so a single event always contributes total mass 1. Density is the
fraction of pixels whose bins carry any absolute mass; note that exact
positive/negative cancellation inside every bin of a pixel would mark it
inactive, which is measure-zero for generic timestamps and kept as-is to
stay faithful to the signed accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EventStream, InvalidWindowError


@dataclass(frozen=True)
class VoxelGrid:
    """B x H x W signed temporal-bin accumulation of one event window."""

    values: np.ndarray
    t0: int
    tN: int

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise ValueError("voxel values must be (B, H, W)")
        if vals.shape[0] < 2:
            raise ValueError("need at least 2 temporal bins")
        if not np.all(np.isfinite(vals)):
            raise ValueError("voxel values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape


def voxelize(stream: EventStream, t0: int, tN: int, bins: int = 5) -> VoxelGrid:
    if tN <= t0:
        raise InvalidWindowError(f"invalid window: t0={t0} >= tN={tN}")
    if bins < 2:
        raise ValueError("need at least 2 temporal bins")
    if len(stream) and (stream.t.min() < t0 or stream.t.max() > tN):
        raise InvalidWindowError("event timestamps outside the voxel window")
    h, w = stream.height, stream.width
    grid = np.zeros(bins * h * w, dtype=np.float64)
    if len(stream):
        s = (stream.t - t0).astype(np.float64) / float(tN - t0) * (bins - 1)
        b0 = np.floor(s).astype(np.int64)
        frac = s - b0
        pol = stream.p.astype(np.float64)
        flat = stream.y.astype(np.int64) * w + stream.x.astype(np.int64)
        lo_ok = b0 <= bins - 1
        np.add.at(grid, (b0[lo_ok] * h * w + flat[lo_ok]), pol[lo_ok] * (1.0 - frac[lo_ok]))
        hi_ok = (b0 + 1) <= bins - 1
        np.add.at(grid, ((b0[hi_ok] + 1) * h * w + flat[hi_ok]), pol[hi_ok] * frac[hi_ok])
    return VoxelGrid(grid.reshape(bins, h, w), t0, tN)


def valid_mask(grid: VoxelGrid) -> np.ndarray:
    """True exactly where the bins carry any absolute mass."""
    return np.abs(grid.values).sum(axis=0) > 0


def density(grid: VoxelGrid) -> float:
    """Fraction of active pixels; equals mean(valid_mask) by construction."""
    return float(valid_mask(grid).mean())
