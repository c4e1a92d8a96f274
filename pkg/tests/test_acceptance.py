"""Acceptance suite: one test per release criterion, tolerances pinned.

Each test prints a [PASS] line with its measured figure (run with -s to
see them); a failure is a real contract violation, not a flaky check.
The heavyweight fixtures (the 50-video simulator corpus and the
100-sample 128x128 dataset) are shared across the criteria that need
them.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from evflow.core import EventStream, FlowField, Frame, Pose, quat_from_axis_angle
from evflow.io import (
    read_events,
    read_flow,
    read_pgm,
    read_voxel,
    write_events,
    write_flow,
    write_pgm,
    write_voxel,
)
from evflow.metrics import epe, outlier_pct
from evflow.pipeline import config_from_dict, run_pipeline
from evflow.representation import VoxelGrid, density, valid_mask, voxelize
from evflow.sampler import plan_schedule
from evflow.scene import (
    CameraIntrinsics,
    SceneConfig,
    TrajectoryConfig,
    analytic_flow,
    gen_scene,
    gen_trajectory,
    infinite_homography,
    max_displacement,
    plane_homography,
)
from evflow.simulator import SimulatorConfig, generate_events
from evflow.sampler import SampleSchedule

from conftest import random_stream
from oracles import (
    dense_stepping_events_multi,
    max_displacement_oracle,
    point_projection_flow,
    smooth_random_video,
)
from test_io import make_parts
from test_metrics import epe_oracle, outlier_oracle, flow_from, random_fields

THRESHOLDS = (0.1, 0.2, 0.4)
N_VIDEOS = 50
INTR = CameraIntrinsics(fx=48.0, fy=48.0, cx=15.5, cy=11.5, width=32, height=24)


def report(name, detail):
    print(f"[PASS] {name}: {detail}")


@pytest.fixture(scope="module")
def videos():
    rng = np.random.default_rng(20240608)
    out = []
    for _ in range(N_VIDEOS):
        video, times = smooth_random_video(rng, frames=20, h=16, w=16, duration_us=200)
        out.append((np.log(video + 0.01), times))
    return out


@pytest.fixture(scope="module")
def sim_streams(videos):
    out = {}
    for i, (stack, times) in enumerate(videos):
        sched = SampleSchedule(times)
        for c in THRESHOLDS:
            out[(i, c)] = generate_events(stack, sched, SimulatorConfig(threshold=c))
    return out


@pytest.fixture(scope="module")
def big_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset128")
    cfg = config_from_dict(
        {
            "samples": 100,
            "seed": 1,
            "width": 128,
            "height": 128,
            "thresholds": list(THRESHOLDS),
            "dt_rates": [1, 4],
        }
    )
    start = time.monotonic()
    summary = run_pipeline(cfg, root, jobs=2)
    wall = time.monotonic() - start
    return root, summary, wall


def _by_pixel(t, x, y, p):
    out = {}
    for ti, xi, yi, pi in zip(t, x, y, p):
        out.setdefault((int(yi), int(xi)), []).append((int(ti), int(pi)))
    return out


class TestAcceptance:
    def test_c1_simulator_oracle_equivalence(self, videos, sim_streams):
        """Closed-form events match the dense 1 ns stepping oracle:
        identical per-pixel counts/polarities, timestamps within 2 us,
        over 50 random smooth videos at C in {0.1, 0.2, 0.4}; < 60 s."""
        start = time.monotonic()
        worst_dt = 0
        total = 0
        for i, (stack, times) in enumerate(videos):
            oracle = dense_stepping_events_multi(stack, times, THRESHOLDS)
            for c in THRESHOLDS:
                stream = sim_streams[(i, c)]
                got = _by_pixel(stream.t, stream.x, stream.y, stream.p)
                want = _by_pixel(*oracle[c])
                assert set(got) == set(want), f"video {i} C={c}: active pixel sets differ"
                for key in want:
                    g, w = got[key], want[key]
                    assert len(g) == len(w), f"video {i} C={c} px {key}: count mismatch"
                    for (tg, pg), (tw, pw) in zip(g, w):
                        assert pg == pw, f"video {i} C={c} px {key}: polarity mismatch"
                        worst_dt = max(worst_dt, abs(tg - tw))
                        assert abs(tg - tw) <= 2
                total += len(stream)
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"oracle-equivalence check took {elapsed:.1f} s"
        report(
            "C1 simulator oracle equivalence",
            f"{N_VIDEOS} videos x {len(THRESHOLDS)} thresholds, {total} events, "
            f"worst |dt| = {worst_dt} us, {elapsed:.1f} s",
        )

    def test_c2_residual_invariant(self, videos, sim_streams):
        """After simulation every pixel satisfies |L_final - L_ref| < C."""
        violations = 0
        worst = 0.0
        for i, (stack, _) in enumerate(videos):
            for c in THRESHOLDS:
                stream = sim_streams[(i, c)]
                signed = np.zeros(stack.shape[1:], dtype=np.float64)
                np.add.at(signed, (stream.y, stream.x), stream.p)
                resid = np.abs(stack[-1] - (stack[0] + signed * c))
                worst = max(worst, float(resid.max() / c))
                violations += int((resid >= c).sum())
        assert violations == 0
        report(
            "C2 residual invariant",
            f"0 violations over {N_VIDEOS * len(THRESHOLDS)} runs, "
            f"worst residual = {worst:.6f} C",
        )

    def test_c3_sampling_guarantee(self):
        """Every plan_schedule interval moves at most 1.0 + 1e-3 px,
        re-verified analytically per interval on 100 random trajectories
        (plus oracle spot checks)."""
        rng = np.random.default_rng(99)
        worst = 0.0
        n_intervals = 0
        for seed in range(100):
            scene = gen_scene(SceneConfig(), seed=seed)
            traj = gen_trajectory(
                TrajectoryConfig(speed_max=4.0, rot_rate_max=1.5, duration_us=100_000),
                scene, seed=seed,
            )
            sched = plan_schedule(scene, traj, INTR, 0, 80_000, 1.0)
            pairs = list(sched.intervals())
            n_intervals += len(pairs)
            for a, b in pairs:
                d = max_displacement(scene, traj.pose_at(int(a)), traj.pose_at(int(b)), INTR)
                worst = max(worst, d)
                assert d <= 1.0 + 1e-3
            for idx in rng.choice(len(pairs), size=min(2, len(pairs)), replace=False):
                a, b = pairs[int(idx)]
                d = max_displacement_oracle(scene, traj.pose_at(int(a)), traj.pose_at(int(b)), INTR)
                assert d <= 1.0 + 1e-3
        report(
            "C3 sampling guarantee",
            f"100 trajectories, {n_intervals} intervals, worst displacement "
            f"{worst:.4f} px <= 1.001",
        )

    def test_c4_voxel_partition_of_unity(self):
        """Temporal kernel sums to 1 for 1e4 random s in [0, B-1] within
        1e-6, and density(grid) equals mean(valid_mask) exactly."""
        rng = np.random.default_rng(4)
        bins = 5
        s = rng.uniform(0, bins - 1, size=10_000)
        weights = np.maximum(0.0, 1.0 - np.abs(np.arange(bins)[:, None] - s[None, :]))
        err = np.abs(weights.sum(axis=0) - 1.0).max()
        assert err < 1e-6
        for n in (0, 1, 37, 500):
            stream = (
                random_stream(rng, n=n, width=9, height=7, t_end=4999)
                if n else EventStream.empty(9, 7, 0, 4999)
            )
            grid = voxelize(stream, 0, 4999, bins)
            assert density(grid) == valid_mask(grid).mean()
        report("C4 voxel partition of unity", f"max |sum - 1| = {err:.2e} over 1e4 samples")

    def test_c5_density_threshold_monotonicity(self, big_run):
        """Density is non-increasing in C on every one of 100 samples."""
        root, summary, _ = big_run
        from evflow.io import read_manifest

        violations = 0
        for sample in read_manifest(root):
            dens = dict(zip(sample.thresholds, sample.densities))
            seq = [dens[c] for c in sorted(dens)]
            if not all(a >= b - 1e-12 for a, b in zip(seq[:-1], seq[1:])):
                violations += 1
        assert violations == 0
        means = {c: round(summary.mean_density[c], 4) for c in sorted(summary.mean_density)}
        report("C5 density-threshold monotonicity", f"0 violations / 100 samples, means {means}")

    def test_c6_analytic_flow_correctness(self):
        """analytic_flow vs brute-force point projection < 1e-4 px at all
        valid pixels; forward-backward composition < 1e-3 px; 50 pairs."""
        rng = np.random.default_rng(6)
        worst_flow = 0.0
        worst_comp = 0.0
        for trial in range(50):
            scene = gen_scene(SceneConfig(), seed=300 + trial)
            pa = Pose(rng.uniform(-0.12, 0.12, 3) * [1, 1, 0.5],
                      quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.05)))
            pb = Pose(rng.uniform(-0.12, 0.12, 3) * [1, 1, 0.5],
                      quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.05)))
            flow = analytic_flow(scene, pa, pb, INTR)
            ou, ov, ovalid = point_projection_flow(scene, pa, pb, INTR)
            assert np.array_equal(flow.valid, ovalid)
            sel = flow.valid
            if sel.any():
                err = max(np.abs(flow.u[sel] - ou[sel]).max(), np.abs(flow.v[sel] - ov[sel]).max())
                worst_flow = max(worst_flow, float(err))
                assert err < 1e-4

            from evflow.scene import _cast

            idx, _, _, _ = _cast(scene, pa, INTR)
            uu, vv = np.meshgrid(np.arange(INTR.width, dtype=float),
                                 np.arange(INTR.height, dtype=float))
            mu, mv = uu + flow.u, vv + flow.v
            back = {k: plane_homography(p, pb, pa, INTR) for k, p in enumerate(scene.planes)}
            back[-1] = infinite_homography(pb, pa, INTR)
            for k, H in back.items():
                sel_k = flow.valid & (idx == k)
                if not sel_k.any():
                    continue
                x = H[0, 0] * mu[sel_k] + H[0, 1] * mv[sel_k] + H[0, 2]
                y = H[1, 0] * mu[sel_k] + H[1, 1] * mv[sel_k] + H[1, 2]
                z = H[2, 0] * mu[sel_k] + H[2, 1] * mv[sel_k] + H[2, 2]
                comp = max(np.abs(x / z - uu[sel_k]).max(), np.abs(y / z - vv[sel_k]).max())
                worst_comp = max(worst_comp, float(comp))
                assert comp < 1e-3
        report(
            "C6 analytic flow correctness",
            f"50 pose pairs, worst |flow err| = {worst_flow:.2e} px, "
            f"worst composition = {worst_comp:.2e} px",
        )

    def test_c7_metrics_against_oracles(self):
        """EPE and %Out equal the per-pixel loop oracles on 1000 random
        8x8 fields (within float summation order); the (3,4) shift gives
        EPE 5.00 exactly."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            pred, gt, mask = random_fields(rng)
            if not mask.any():
                continue
            got_epe = epe(pred, gt, mask)
            want_epe = epe_oracle(pred, gt, mask)
            assert got_epe == pytest.approx(want_epe, rel=1e-12, abs=1e-12)
            assert outlier_pct(pred, gt, mask) == outlier_oracle(pred, gt, mask)
        gt = flow_from(np.zeros((5, 5)), np.zeros((5, 5)))
        pred = flow_from(np.full((5, 5), 3.0), np.full((5, 5), 4.0))
        shift = epe(pred, gt, np.ones((5, 5), bool))
        assert shift == 5.0
        report("C7 metrics vs oracles", "1000 random fields agree; (3,4) shift EPE = 5.00")

    def test_c8_io_round_trips_and_pipeline_determinism(self, tmp_path, rng):
        """All four formats round-trip bit-exactly on 100 instances each;
        a full pipeline run repeated with the same seed produces a
        byte-identical tree."""
        for i in range(100):
            n = int(rng.integers(0, 500))
            s = random_stream(rng, n=n) if n else EventStream.empty(32, 24, 0, 100)
            path = tmp_path / "e.evs"
            write_events(path, s)
            assert read_events(path).same_events(s)

            u = rng.normal(size=(5, 7)).astype(np.float32).astype(np.float64)
            v = rng.normal(size=(5, 7)).astype(np.float32).astype(np.float64)
            m = rng.random((5, 7)) < 0.5
            fpath = tmp_path / "f.flo"
            write_flow(fpath, FlowField(u, v, m))
            back = read_flow(fpath)
            assert np.array_equal(back.u, u) and np.array_equal(back.v, v)
            assert np.array_equal(back.valid, m)

            q = rng.integers(0, 256, size=(6, 4)).astype(np.uint8)
            ppath = tmp_path / "p.pgm"
            write_pgm(ppath, Frame(q / 255.0, 0))
            assert np.array_equal(np.rint(read_pgm(ppath).intensities * 255).astype(np.uint8), q)

            vals = rng.normal(size=(5, 3, 4)).astype(np.float32).astype(np.float64)
            vpath = tmp_path / "v.vox"
            write_voxel(vpath, VoxelGrid(vals, 0, 10))
            assert np.array_equal(read_voxel(vpath).values, vals)

        cfg = config_from_dict(
            {"samples": 3, "seed": 11, "width": 32, "height": 32, "thresholds": [0.1, 0.3]}
        )
        run_pipeline(cfg, tmp_path / "runA")
        run_pipeline(cfg, tmp_path / "runB")
        files_a = {p.relative_to(tmp_path / "runA"): p for p in sorted((tmp_path / "runA").rglob("*")) if p.is_file()}
        files_b = {p.relative_to(tmp_path / "runB"): p for p in sorted((tmp_path / "runB").rglob("*")) if p.is_file()}
        assert files_a.keys() == files_b.keys()
        for rel in files_a:
            assert files_a[rel].read_bytes() == files_b[rel].read_bytes(), rel
        report(
            "C8 io round-trips / determinism",
            f"4 formats x 100 instances bit-exact; {len(files_a)} pipeline files byte-identical",
        )

    def test_c9_throughput(self, big_run):
        """100 samples at 128x128 with 3 thresholds and dt in {1,4}
        complete within the 10-minute budget."""
        root, summary, wall = big_run
        assert summary.sample_count == 100
        assert wall < 600.0, f"pipeline took {wall:.0f} s"
        from evflow.io import validate_dataset

        findings = validate_dataset(root)
        assert findings == []
        report("C9 throughput", f"100 samples in {wall:.1f} s (< 600 s), re-validation clean")
