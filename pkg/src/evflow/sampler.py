"""Adaptive time sampling: render timestamps with bounded pixel motion.

The schedule guarantees that between any two consecutive render times the
largest pixel displacement (forward and backward) stays at or below the
requested bound. A speed-based estimate sets candidate intervals

    dt_k = dt_{k-1} / max(1, disp_{k-1} / max_disp)

where disp_{k-1} is the measured maximum flow magnitude over the previous
interval; every candidate interval is then verified against the analytic
displacement and bisected until it passes, so the bound is a guarantee
rather than an estimate. If the whole window already moves less than the
bound the schedule collapses to its two endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidWindowError, Trajectory
from .scene import CameraIntrinsics, PlanarScene, max_displacement

DISP_TOLERANCE = 1e-3


class PathologicalMotionError(RuntimeError):
    """Schedule would exceed the interval cap (or sub-microsecond motion)."""


@dataclass(frozen=True)
class SampleSchedule:
    """Strictly increasing render timestamps covering [t_i, t_j]."""

    times: np.ndarray
    max_disp: float = 1.0

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.int64)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("schedule needs at least two timestamps")
        if np.any(np.diff(t) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.times)

    @property
    def t_start(self) -> int:
        return int(self.times[0])

    @property
    def t_end(self) -> int:
        return int(self.times[-1])

    def intervals(self):
        return zip(self.times[:-1], self.times[1:])


class _PoseCache:
    """Memoized trajectory evaluation; schedules revisit boundary times."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self._cache = {}

    def __call__(self, t: int):
        t = int(t)
        pose = self._cache.get(t)
        if pose is None:
            pose = self.traj.pose_at(t)
            self._cache[t] = pose
        return pose


def plan_schedule(
    scene: PlanarScene,
    traj: Trajectory,
    intr: CameraIntrinsics,
    t_i: int,
    t_j: int,
    max_disp: float = 1.0,
    initial_divisions: int = 16,
    max_intervals: int = 100_000,
) -> SampleSchedule:
    if t_i >= t_j:
        raise InvalidWindowError(f"invalid window: t_i={t_i} >= t_j={t_j}")
    if max_disp <= 0:
        raise ValueError("max_disp must be positive")
    pose = _PoseCache(traj)

    def disp(a, b):
        return max_displacement(scene, pose(a), pose(b), intr)

    # fast path: the whole window already satisfies the bound
    whole = disp(t_i, t_j)
    if whole <= max_disp:
        return SampleSchedule(np.array([t_i, t_j], dtype=np.int64), max_disp)

    # speed-based candidate pass
    dt = max(1, round((t_j - t_i) / initial_divisions))
    segs = []  # [a, b, measured disp]
    a = t_i
    while a < t_j:
        b = min(a + dt, t_j)
        d = disp(a, b)
        segs.append([a, b, d])
        if len(segs) > max_intervals:
            raise PathologicalMotionError(f"schedule exceeds {max_intervals} intervals")
        dt = max(1, int(dt / max(1.0, d / max_disp)))
        a = b

    # verified bisection pass, processed in interval-start order
    i = 0
    while i < len(segs):
        a, b, d = segs[i]
        if d <= max_disp:
            i += 1
            continue
        if b - a <= 1:
            raise PathologicalMotionError(
                f"interval [{a}, {b}] moves {d:.3f} px at microsecond resolution"
            )
        m = (a + b) // 2
        segs[i : i + 1] = [[a, m, disp(a, m)], [m, b, disp(m, b)]]
        if len(segs) > max_intervals:
            raise PathologicalMotionError(f"schedule exceeds {max_intervals} intervals")

    times = np.array([s[0] for s in segs] + [t_j], dtype=np.int64)
    return SampleSchedule(times, max_disp)
