"""End-to-end dataset generation and evaluation.

One sample = one label-window pair on one random scene/trajectory:
events for the two consecutive windows at every contrast threshold,
forward/backward flow ground truth for the second window, key frames,
and per-threshold densities. Label timestamps live on a 60 Hz grid;
dt=1 pairs consecutive grid times, dt=4 every fourth (15 Hz). Samples
cycle through the configured dt rates.

Everything is deterministic for a given (config, seed): per-sample seeds
are spawned from the master seed by sample index, so the output tree is
byte-identical regardless of worker count.
"""

from __future__ import annotations

import json
import multiprocessing
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as evio
from .core import Frame, slice_by_time
from .metrics import EvalReport, evaluate
from .representation import density, voxelize
from .sampler import plan_schedule
from .scene import (
    CameraIntrinsics,
    SceneConfig,
    TrajectoryConfig,
    analytic_flow,
    gen_scene,
    gen_trajectory,
    render_frame,
)
from .simulator import SimulatorConfig, log_transform, multi_density


class ConfigError(ValueError):
    """Pipeline configuration failed to parse or validate."""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    samples: int = 1
    width: int = 64
    height: int = 64
    fx: float | None = None       # default: 1.2 * width
    fy: float | None = None
    cx: float | None = None       # default: image center
    cy: float | None = None
    thresholds: tuple = (0.1, 0.2, 0.4)
    dt_rates: tuple = (1, 4)
    bins: int = 5
    max_disp: float = 1.0
    log_floor: float = 0.01
    label_hz: float = 60.0
    jobs: int = 1
    debug_images: bool = False
    # trigger non-idealities, config-file only; all off by default
    sigma_threshold: float = 0.0
    refractory_us: int = 0
    shot_noise_rate_hz: float = 0.0
    noise_seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)

    def intrinsics(self) -> CameraIntrinsics:
        fx = self.fx if self.fx is not None else 1.2 * self.width
        fy = self.fy if self.fy is not None else fx
        cx = self.cx if self.cx is not None else (self.width - 1) / 2.0
        cy = self.cy if self.cy is not None else (self.height - 1) / 2.0
        return CameraIntrinsics(fx, fy, cx, cy, self.width, self.height)

    def label_grid(self) -> np.ndarray:
        n = int(np.floor(self.trajectory.duration_us * self.label_hz / 1e6))
        return np.rint(np.arange(n + 1) * 1e6 / self.label_hz).astype(np.int64)

    def validate(self):
        if self.samples < 1:
            raise ConfigError("sample count must be >= 1")
        if not self.thresholds or any(c <= 0 for c in self.thresholds):
            raise ConfigError("thresholds must be a non-empty list of positive values")
        if len(set(self.thresholds)) != len(self.thresholds):
            raise ConfigError("thresholds must be distinct")
        if not self.dt_rates or any(int(d) < 1 for d in self.dt_rates):
            raise ConfigError("dt rates must be positive integers")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        if self.max_disp <= 0:
            raise ConfigError("max_disp must be positive")
        if self.width < 8 or self.height < 8:
            raise ConfigError("sensor must be at least 8x8")
        grid = self.label_grid()
        if len(grid) - 1 < 2 * max(self.dt_rates):
            raise ConfigError(
                "trajectory duration too short for the largest dt window pair"
            )
        lo, hi = self.scene.plane_count
        if not (1 <= lo <= hi <= 8):
            raise ConfigError("plane count range must lie within 1..8")
        try:
            self.intrinsics()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _merge_dataclass(cls, defaults, data: dict, path: str):
    known = {f.name for f in defaults.__dataclass_fields__.values()}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {path} keys: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return replace(defaults, **coerced)


def load_config(path) -> PipelineConfig:
    """Parse a JSON config; every field has a default."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    scene_data = data.pop("scene", {})
    traj_data = data.pop("trajectory", {})
    cfg = _merge_dataclass(PipelineConfig, PipelineConfig(), data, "config")
    scene_cfg = _merge_dataclass(SceneConfig, cfg.scene, scene_data, "scene")
    if "focal_px" not in scene_data:
        fx = cfg.fx if cfg.fx is not None else 1.2 * cfg.width
        scene_cfg = replace(scene_cfg, focal_px=float(fx))
    traj_cfg = _merge_dataclass(TrajectoryConfig, cfg.trajectory, traj_data, "trajectory")
    cfg = replace(cfg, scene=scene_cfg, trajectory=traj_cfg)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class PipelineSummary:
    sample_count: int
    mean_density: dict
    wall_s: float
    out_root: str

    def table(self) -> str:
        lines = [
            f"samples: {self.sample_count}",
            "mean density per threshold:",
        ]
        for c in sorted(self.mean_density):
            lines.append(f"  C={evio.threshold_tag(c):>6}  D={self.mean_density[c]:.4f}")
        lines.append(f"wall time: {self.wall_s:.1f} s")
        return "\n".join(lines)


def build_sample(cfg: PipelineConfig, index: int, out_root) -> evio.DatasetSample:
    """Generate and package sample <index>; pure given (cfg, index)."""
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(index,))
    scene_seed, traj_seed, pick_seed = ss.spawn(3)
    scene = gen_scene(cfg.scene, scene_seed)
    traj = gen_trajectory(cfg.trajectory, scene, traj_seed)
    intr = cfg.intrinsics()
    dt = int(cfg.dt_rates[index % len(cfg.dt_rates)])
    grid = cfg.label_grid()
    rng = np.random.default_rng(pick_seed)
    k = int(rng.integers(dt, len(grid) - dt))
    t_prev, t_mid, t_next = int(grid[k - dt]), int(grid[k]), int(grid[k + dt])

    schedule = plan_schedule(scene, traj, intr, t_prev, t_next, cfg.max_disp)
    frames = [render_frame(scene, traj.pose_at(int(t)), intr, int(t)) for t in schedule.times]
    logs = np.stack([log_transform(f, cfg.log_floor) for f in frames])
    sim_cfg = SimulatorConfig(
        log_floor=cfg.log_floor,
        sigma_threshold=cfg.sigma_threshold,
        refractory_us=cfg.refractory_us,
        shot_noise_rate_hz=cfg.shot_noise_rate_hz,
        noise_seed=cfg.noise_seed,
    )
    streams = multi_density(logs, schedule, cfg.thresholds, sim_cfg)

    events_prev, events_next, densities = {}, {}, {}
    for c, stream in streams:
        events_prev[c] = slice_by_time(stream, t_prev, t_mid)
        events_next[c] = slice_by_time(stream, t_mid, t_next, include_end=True)
        densities[c] = density(voxelize(events_next[c], t_mid, t_next, cfg.bins))

    pose_mid = traj.pose_at(t_mid)
    pose_next = traj.pose_at(t_next)
    flow_fw = analytic_flow(scene, pose_mid, pose_next, intr)
    flow_bw = analytic_flow(scene, pose_next, pose_mid, intr)
    key_frames = [
        (t_prev, frames[0]),
        (t_mid, render_frame(scene, pose_mid, intr, t_mid)),
        (t_next, frames[-1]),
    ]
    sample = evio.package_sample(
        out_root,
        f"{index:05d}",
        events_prev=events_prev,
        events_next=events_next,
        flow_fw=flow_fw,
        flow_bw=flow_bw,
        frames=key_frames,
        window=(t_prev, t_mid, t_next),
        dt=dt,
        seed=cfg.seed,
        bins=cfg.bins,
        densities=densities,
    )
    if cfg.debug_images:
        _write_debug_images(out_root, sample, events_next)
    return sample


def _write_debug_images(out_root, sample, events_next):
    base = evio.sample_dir(out_root, sample.sample_id)
    for c, stream in events_next.items():
        counts = np.zeros((stream.height, stream.width))
        np.add.at(counts, (stream.y, stream.x), 1.0)
        peak = counts.max() if counts.max() > 0 else 1.0
        img = Frame(counts / peak, stream.t_end)
        evio.write_pgm(base / f"debug_events_C{evio.threshold_tag(c)}.pgm", img)


def _worker(args):
    cfg, index, out_root = args
    return index, build_sample(cfg, index, out_root)


def run_pipeline(cfg: PipelineConfig, out_root, jobs: int | None = None) -> PipelineSummary:
    cfg.validate()
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = jobs if jobs is not None else cfg.jobs
    start = time.monotonic()
    tasks = [(cfg, i, out_root) for i in range(cfg.samples)]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            indexed = pool.map(_worker, tasks)
    else:
        indexed = [_worker(t) for t in tasks]
    samples = [s for _, s in sorted(indexed, key=lambda pair: pair[0])]
    evio.write_manifest(out_root, samples)
    by_c = {}
    for s in samples:
        for c, d in zip(s.thresholds, s.densities):
            by_c.setdefault(c, []).append(d)
    mean_density = {c: float(np.mean(v)) for c, v in by_c.items()}
    return PipelineSummary(len(samples), mean_density, time.monotonic() - start, str(out_root))


# ---------------------------------------------------------------------------
# evaluation over packaged datasets


@dataclass(frozen=True)
class EvalOutcome:
    per_sample: list        # (sample_id, EvalReport)
    missing: list           # sample ids without predictions
    aggregate: EvalReport

    def lines(self):
        out = []
        for sid, rep in self.per_sample:
            out.append(
                f"{sid}  mode={rep.mode}  EPE={rep.epe:.4f}  %Out={rep.out_pct:.2f}  n={rep.n_pixels}"
            )
        for sid in self.missing:
            out.append(f"{sid}  MISSING prediction")
        agg = self.aggregate
        out.append(
            f"aggregate  mode={agg.mode}  EPE={agg.epe:.4f}  %Out={agg.out_pct:.2f}  n={agg.n_pixels}"
        )
        return out


def eval_command(pred_dir, gt_root, mode: str = "dense", threshold: float | None = None) -> EvalOutcome:
    """Compare <pred_dir>/<sample_id>.flo files against a packaged dataset.

    Sparse mode voxelizes the sample's next-window events at the chosen
    threshold (default: the first threshold in the manifest). Aggregate
    metrics are pixel-weighted across samples.
    """
    pred_dir = Path(pred_dir)
    samples = evio.read_manifest(gt_root)
    per_sample, missing = [], []
    err_sum = 0.0
    out_sum = 0.0
    n_total = 0
    for sample in samples:
        pred_path = pred_dir / f"{sample.sample_id}.flo"
        if not pred_path.exists():
            missing.append(sample.sample_id)
            continue
        pred = evio.read_flow(pred_path)
        base = Path(gt_root) / sample.directory
        gt = evio.read_flow(base / "flow_fw.flo")
        grid = None
        if mode == "sparse":
            c = threshold if threshold is not None else sample.thresholds[0]
            if c not in sample.thresholds:
                raise ConfigError(f"threshold {c} not present in sample {sample.sample_id}")
            stream = evio.read_events(base / f"events_C{evio.threshold_tag(c)}_next.evs")
            grid = voxelize(stream, sample.window[1], sample.window[2], sample.bins)
        rep = evaluate(pred, gt, mode, grid)
        per_sample.append((sample.sample_id, rep))
        err_sum += rep.epe * rep.n_pixels
        out_sum += rep.out_pct * rep.n_pixels
        n_total += rep.n_pixels
    if n_total:
        aggregate = EvalReport(err_sum / n_total, out_sum / n_total, n_total, mode)
    else:
        aggregate = EvalReport(0.0, 0.0, 0, mode, degenerate=True)
    return EvalOutcome(per_sample, missing, aggregate)
