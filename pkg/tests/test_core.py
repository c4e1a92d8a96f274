import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evflow.core import (
    Event,
    EventStream,
    InvalidWindowError,
    Pose,
    Trajectory,
    quat_from_axis_angle,
    slice_by_time,
    validate_stream,
)

from conftest import random_stream


class TestValidateStream:
    def test_empty_stream_ok(self):
        s = EventStream.empty(4, 4, 0, 100)
        assert validate_stream(s).ok

    def test_unsorted_times_flagged_at_second_index(self):
        s = EventStream(np.array([5, 3]), np.array([0, 0]), np.array([0, 0]),
                        np.array([1, 1]), 4, 4, 0, 10)
        rep = validate_stream(s)
        assert not rep.ok
        assert rep.index == 1

    def test_x_at_width_is_out_of_bounds(self):
        s = EventStream(np.array([1]), np.array([4]), np.array([0]), np.array([1]), 4, 4, 0, 10)
        rep = validate_stream(s)
        assert not rep.ok and rep.index == 0
        assert "x" in rep.reason

    def test_bad_polarity(self):
        s = EventStream(np.array([1]), np.array([0]), np.array([0]), np.array([0]), 4, 4, 0, 10)
        assert not validate_stream(s).ok

    def test_t_outside_window(self):
        s = EventStream(np.array([11]), np.array([0]), np.array([0]), np.array([1]), 4, 4, 0, 10)
        assert not validate_stream(s).ok

    def test_tie_break_order_enforced(self):
        # same t, y descending: violates (t, y, x, p)
        s = EventStream(np.array([5, 5]), np.array([0, 0]), np.array([2, 1]),
                        np.array([1, 1]), 4, 4, 0, 10)
        rep = validate_stream(s)
        assert not rep.ok and rep.index == 1

    def test_random_stream_ok(self, rng):
        assert validate_stream(random_stream(rng)).ok


class TestSliceByTime:
    def test_half_open_semantics(self):
        s = EventStream(np.array([1, 2, 3]), np.zeros(3, int), np.zeros(3, int),
                        np.ones(3, int), 4, 4, 0, 5)
        out = slice_by_time(s, 2, 3)
        assert len(out) == 1 and out[0].t == 2
        assert out.t_start == 2 and out.t_end == 3

    def test_identity_slice(self, rng):
        s = random_stream(rng)
        out = slice_by_time(s, s.t_start, s.t_end, include_end=True)
        assert out.same_events(s)

    def test_invalid_window_raises(self):
        s = EventStream.empty(4, 4, 0, 10)
        with pytest.raises(InvalidWindowError):
            slice_by_time(s, 5, 4)

    def test_partition_concatenation_equals_original(self, rng):
        # oracle: direct list filtering
        s = random_stream(rng, n=1000)
        m = int(rng.integers(s.t_start + 1, s.t_end))
        left = slice_by_time(s, s.t_start, m)
        right = slice_by_time(s, m, s.t_end, include_end=True)
        got_t = np.concatenate([left.t, right.t])
        assert np.array_equal(got_t, s.t)
        keep = [e for e in s if e.t < m]
        assert len(left) == len(keep)

    def test_idempotent(self, rng):
        s = random_stream(rng)
        once = slice_by_time(s, 1000, 50_000)
        twice = slice_by_time(once, 1000, 50_000)
        assert once.same_events(twice)

    @given(cuts=st.lists(st.integers(0, 100_000), min_size=1, max_size=6))
    @settings(max_examples=30, deadline=None)
    def test_any_partition_reassembles(self, cuts):
        rng = np.random.default_rng(7)
        s = random_stream(rng, n=400)
        bounds = sorted(set([s.t_start, s.t_end] + [c for c in cuts if s.t_start < c < s.t_end]))
        pieces = []
        for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
            pieces.append(slice_by_time(s, a, b, include_end=(i == len(bounds) - 2)))
        got = np.concatenate([p.t for p in pieces])
        assert np.array_equal(got, s.t)


class TestPose:
    def test_quaternion_norm_enforced(self):
        with pytest.raises(ValueError):
            Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 1e-4]))

    def test_identity_rotation(self):
        R = Pose.identity().rotation()
        assert np.allclose(R, np.eye(3))


class TestTrajectory:
    def _traj(self, times, positions, quats=None):
        k = len(times)
        if quats is None:
            quats = np.tile([1.0, 0, 0, 0], (k, 1))
        return Trajectory(np.asarray(times), np.asarray(positions, float), np.asarray(quats, float))

    def test_times_strictly_increasing(self):
        with pytest.raises(ValueError):
            self._traj([0, 0], [[0, 0, 0], [1, 0, 0]])

    def test_exact_at_waypoints(self):
        traj = self._traj([0, 10_000, 25_000], [[0, 0, 0], [1, 2, 0], [3, 1, 1]])
        for i, t in enumerate([0, 10_000, 25_000]):
            assert np.allclose(traj.pose_at(t).position, traj.positions[i], atol=1e-12)

    def test_two_waypoint_midpoint_is_arithmetic_mean(self):
        traj = self._traj([0, 10_000], [[0, 0, 0], [2, 4, 6]])
        mid = traj.pose_at(5_000).position
        assert np.allclose(mid, [1, 2, 3], atol=1e-12)

    def test_slerp_quarter_of_90_degrees(self):
        # oracle: closed-form slerp is a constant-rate rotation, so a quarter
        # of the way from 0 to 90 degrees about z is exactly 22.5 degrees
        q0 = np.array([1.0, 0, 0, 0])
        q1 = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        traj = self._traj([0, 100_000], [[0, 0, 0], [0, 0, 0]], np.stack([q0, q1]))
        got = traj.pose_at(25_000).orientation
        expected = quat_from_axis_angle([0, 0, 1], math.radians(22.5))
        assert np.allclose(got, expected, atol=1e-12)

    def test_out_of_range_raises(self):
        traj = self._traj([0, 10], [[0, 0, 0], [1, 0, 0]])
        with pytest.raises(ValueError):
            traj.pose_at(11)

    def test_c1_continuity_at_interior_waypoint(self):
        rng = np.random.default_rng(3)
        pos = rng.normal(size=(5, 3))
        traj = self._traj([0, 10_000, 20_000, 30_000, 40_000], pos)
        h = 1
        for t in (10_000, 20_000, 30_000):
            before = (traj.pose_at(t).position - traj.pose_at(t - h).position) / h
            after = (traj.pose_at(t + h).position - traj.pose_at(t).position) / h
            assert np.allclose(before, after, atol=1e-6)

    def test_immutable_event_access(self):
        s = EventStream(np.array([1]), np.array([2]), np.array([3]), np.array([-1]), 8, 8, 0, 10)
        assert s[0] == Event(x=2, y=3, t=1, p=-1)
        with pytest.raises(ValueError):
            s.t[0] = 99
