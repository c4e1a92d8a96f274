"""Shared domain types: events, frames, flow fields, poses, trajectories.

Conventions used across the package:

- Timestamps are integer microseconds. Sub-microsecond trigger times are
  rounded to the nearest microsecond so that serialization and equality
  are exact.
- Event streams are sorted by (t, y, x, p), ascending. This tie-break is
  a repo-wide contract so parallel generation stays reproducible.
- Time windows are half-open [a, b); the final window of a sequence is
  closed on the right so a partition never drops boundary events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class InvalidWindowError(ValueError):
    """Raised when a time window has a > b or events fall outside it."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_stream; index points at the first bad event."""

    ok: bool
    index: int | None = None
    reason: str | None = None


def sort_event_arrays(t, x, y, p):
    """Return (t, x, y, p) reordered into the canonical (t, y, x, p) order."""
    order = np.lexsort((p, x, y, t))
    return t[order], x[order], y[order], p[order]


@dataclass(frozen=True)
class EventStream:
    """A time-sorted event sequence with its sensor geometry and window.

    Events are stored columnar (one array per field) because streams run
    to millions of records. Arrays are frozen after construction; all
    operations on streams are pure functions.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t_start: int
    t_end: int

    def __post_init__(self):
        object.__setattr__(self, "t", np.ascontiguousarray(self.t, dtype=np.int64))
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, dtype=np.int32))
        object.__setattr__(self, "y", np.ascontiguousarray(self.y, dtype=np.int32))
        object.__setattr__(self, "p", np.ascontiguousarray(self.p, dtype=np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays must have equal length")
        for a in (self.t, self.x, self.y, self.p):
            a.flags.writeable = False

    @classmethod
    def empty(cls, width, height, t_start=0, t_end=0):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, t_start, t_end)

    @classmethod
    def from_events(cls, events: Sequence[Event], width, height, t_start, t_end):
        if len(events) == 0:
            return cls.empty(width, height, t_start, t_end)
        arr = np.asarray([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height, t_start, t_end)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def same_events(self, other: "EventStream") -> bool:
        return (
            len(self) == len(other)
            and bool(np.array_equal(self.t, other.t))
            and bool(np.array_equal(self.x, other.x))
            and bool(np.array_equal(self.y, other.y))
            and bool(np.array_equal(self.p, other.p))
        )


def validate_stream(stream: EventStream) -> ValidationReport:
    """Check all EventStream invariants, reporting the first violation.

    Violations are part of the return value, not exceptions: callers use
    this to audit files and generated data.
    """
    n = len(stream)
    if stream.t_end < stream.t_start:
        return ValidationReport(False, None, "t_end < t_start")
    if n == 0:
        return ValidationReport(True)

    bad = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)

    def mark(mask, reason, store):
        idx = np.nonzero(mask)[0]
        if idx.size:
            store.append((int(idx[0]), reason))

    findings: list[tuple[int, str]] = []
    mark(~np.isin(stream.p, (-1, 1)), "polarity not in {-1,+1}", findings)
    mark((stream.x < 0) | (stream.x >= stream.width), "x out of bounds", findings)
    mark((stream.y < 0) | (stream.y >= stream.height), "y out of bounds", findings)
    mark((stream.t < stream.t_start) | (stream.t > stream.t_end), "t outside window", findings)

    # canonical order: non-decreasing on (t, y, x, p)
    if n > 1:
        key_prev = np.stack([stream.t[:-1], stream.y[:-1], stream.x[:-1], stream.p[:-1]])
        key_next = np.stack([stream.t[1:], stream.y[1:], stream.x[1:], stream.p[1:]])
        diff = key_next.astype(np.int64) - key_prev.astype(np.int64)
        # lexicographic comparison: first nonzero component decides
        first = np.zeros(n - 1, dtype=np.int64)
        undecided = np.ones(n - 1, dtype=bool)
        for row in diff:
            first = np.where(undecided & (row != 0), row, first)
            undecided &= row == 0
        out_of_order = first < 0
        idx = np.nonzero(out_of_order)[0]
        if idx.size:
            findings.append((int(idx[0]) + 1, "events out of (t, y, x, p) order"))

    if not findings:
        return ValidationReport(True)
    i, reason = min(findings)
    return ValidationReport(False, i, reason)


def slice_by_time(stream: EventStream, a: int, b: int, include_end: bool = False) -> EventStream:
    """Select events with a <= t < b (or <= b when include_end is set).

    include_end implements the closed right edge of a partition's final
    window. Slicing preserves order and is idempotent.
    """
    if a > b:
        raise InvalidWindowError(f"invalid window: a={a} > b={b}")
    lo = int(np.searchsorted(stream.t, a, side="left"))
    hi = int(np.searchsorted(stream.t, b, side="right" if include_end else "left"))
    return EventStream(
        stream.t[lo:hi], stream.x[lo:hi], stream.y[lo:hi], stream.p[lo:hi],
        stream.width, stream.height, a, b,
    )


@dataclass(frozen=True)
class Frame:
    """Rendered intensity image, values in [0, 1], timestamp in microseconds."""

    intensities: np.ndarray
    t: int

    def __post_init__(self):
        img = np.ascontiguousarray(self.intensities, dtype=np.float64)
        if img.ndim != 2:
            raise ValueError("frame must be a 2-D intensity grid")
        if not np.all(np.isfinite(img)):
            raise ValueError("frame intensities must be finite")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")
        img.flags.writeable = False
        object.__setattr__(self, "intensities", img)

    @property
    def shape(self):
        return self.intensities.shape


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement (u right, v down) with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if not (u.shape == v.shape == valid.shape) or u.ndim != 2:
            raise ValueError("u, v, valid must be 2-D grids of equal shape")
        if valid.any() and not np.all(np.isfinite(u[valid]) & np.isfinite(v[valid])):
            raise ValueError("flow must be finite wherever valid")
        for a in (u, v, valid):
            a.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self):
        return np.hypot(self.u, self.v)


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z), unit norm


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_slerp(q0, q1, s):
    """Spherical-linear interpolation along the shorter arc."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + s * (q1 - q0))
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    return (math.sin((1.0 - s) * theta) * q0 + math.sin(s * theta) * q1) / sin_theta


def quat_angle(a, b):
    """Rotation angle in radians between two unit quaternions."""
    dot = abs(float(np.dot(quat_normalize(a), quat_normalize(b))))
    return 2.0 * math.acos(min(1.0, dot))


@dataclass(frozen=True)
class Pose:
    """Camera pose: world position plus camera-to-world unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.position, dtype=np.float64)
        q = np.ascontiguousarray(self.orientation, dtype=np.float64)
        if pos.shape != (3,) or q.shape != (4,):
            raise ValueError("position must be a 3-vector, orientation a quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("orientation quaternion must be unit norm (within 1e-9)")
        pos.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def rotation(self):
        """3x3 camera-to-world rotation matrix."""
        return quat_to_matrix(self.orientation)


def _hermite(p0, p1, m0, m1, s):
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


@dataclass(frozen=True)
class Trajectory:
    """Smooth camera path: cubic position spline + slerp orientation.

    Positions follow a Catmull-Rom-style cubic through the waypoints
    (finite-difference tangents, one-sided at the ends, so a two-waypoint
    trajectory degenerates to the linear segment). Orientation is
    spherical-linear per segment. The curve is C1 in position and exact
    at every waypoint.
    """

    times: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.int64)
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        quats = np.ascontiguousarray(self.orientations, dtype=np.float64)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("trajectory needs at least two waypoints")
        if np.any(np.diff(t) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        if pos.shape != (len(t), 3) or quats.shape != (len(t), 4):
            raise ValueError("positions must be (K,3), orientations (K,4)")
        quats = quats / np.linalg.norm(quats, axis=1, keepdims=True)
        # align hemispheres so per-segment slerp takes the short arc
        for k in range(1, len(t)):
            if np.dot(quats[k - 1], quats[k]) < 0:
                quats[k] = -quats[k]
        for a in (t, pos, quats):
            a.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", quats)

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[tuple[int, Pose]]):
        times = np.array([t for t, _ in waypoints], dtype=np.int64)
        pos = np.array([p.position for _, p in waypoints])
        quats = np.array([p.orientation for _, p in waypoints])
        return cls(times, pos, quats)

    @property
    def t_first(self) -> int:
        return int(self.times[0])

    @property
    def t_last(self) -> int:
        return int(self.times[-1])

    def _tangent(self, k):
        t = self.times.astype(np.float64)
        p = self.positions
        if k == 0:
            return (p[1] - p[0]) / (t[1] - t[0])
        if k == len(t) - 1:
            return (p[-1] - p[-2]) / (t[-1] - t[-2])
        left = (p[k] - p[k - 1]) / (t[k] - t[k - 1])
        right = (p[k + 1] - p[k]) / (t[k + 1] - t[k])
        return 0.5 * (left + right)

    def pose_at(self, t: int) -> Pose:
        if t < self.t_first or t > self.t_last:
            raise ValueError(f"t={t} outside trajectory range [{self.t_first}, {self.t_last}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k >= len(self.times) - 1:
            k = len(self.times) - 2
        t0, t1 = float(self.times[k]), float(self.times[k + 1])
        dt = t1 - t0
        s = (float(t) - t0) / dt
        pos = _hermite(
            self.positions[k], self.positions[k + 1],
            dt * self._tangent(k), dt * self._tangent(k + 1), s,
        )
        quat = quat_slerp(self.orientations[k], self.orientations[k + 1], s)
        return Pose(pos, quat_normalize(quat))
