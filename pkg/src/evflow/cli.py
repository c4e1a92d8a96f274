"""Command-line entry points.

Subcommands mirror the pipeline stages so every intermediate artifact can
be produced or inspected standalone:

  generate   run the full pipeline from a JSON config into a dataset tree
  simulate   events from a rendered frame directory (frames.csv + PGMs)
  voxelize   event file -> voxel grid file
  density    report the density of a voxel or event file
  package    assemble a sample directory from a parts manifest
  validate   re-check every invariant of a packaged dataset
  eval       score flow predictions against a packaged dataset

Exit codes: 0 ok, 2 config error, 3 generation failure, 4 evaluation or
validation mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as evio
from .core import EventStream
from .pipeline import (
    ConfigError,
    PipelineConfig,
    config_from_dict,
    eval_command,
    load_config,
    run_pipeline,
)
from .representation import density, voxelize
from .sampler import PathologicalMotionError, SampleSchedule
from .scene import GenerationError
from .simulator import SimulatorConfig, log_transform, multi_density

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_MISMATCH = 4


def _parse_thresholds(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad threshold list {text!r}") from exc
    if not vals:
        raise ConfigError("threshold list is empty")
    return tuple(vals)


def _cmd_generate(args) -> int:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.thresholds is not None:
        overrides["thresholds"] = _parse_thresholds(args.thresholds)
    if args.bins is not None:
        overrides["bins"] = args.bins
    if args.max_disp is not None:
        overrides["max_disp"] = args.max_disp
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.debug_images:
        overrides["debug_images"] = True
    if overrides:
        cfg = config_from_dict({**_cfg_dict(cfg), **overrides})
    try:
        summary = run_pipeline(cfg, args.out)
    except (GenerationError, PathologicalMotionError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    print(summary.table())
    return EXIT_OK


def _cfg_dict(cfg: PipelineConfig) -> dict:
    from dataclasses import asdict

    data = asdict(cfg)
    data["scene"] = {k: list(v) if isinstance(v, tuple) else v for k, v in data["scene"].items()}
    data["trajectory"] = {
        k: list(v) if isinstance(v, tuple) else v for k, v in data["trajectory"].items()
    }
    for key in ("thresholds", "dt_rates"):
        data[key] = list(data[key])
    return data


def _cmd_simulate(args) -> int:
    frames_dir = Path(args.frames)
    csv = frames_dir / "frames.csv"
    if not csv.exists():
        raise ConfigError(f"no frames.csv in {frames_dir}")
    rows = [line.split(",") for line in csv.read_text().splitlines()[1:] if line.strip()]
    times = np.array([int(t) for _, t in rows], dtype=np.int64)
    frames = [evio.read_pgm(frames_dir / f"frame_{int(k)}.pgm", int(t)) for k, t in rows]
    logs = np.stack([log_transform(f, args.log_floor) for f in frames])
    schedule = SampleSchedule(times, max_disp=np.inf)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SimulatorConfig(log_floor=args.log_floor)
    for c, stream in multi_density(logs, schedule, _parse_thresholds(args.thresholds), cfg):
        evio.write_events(out / f"events_C{evio.threshold_tag(c)}.evs", stream)
        print(f"C={evio.threshold_tag(c)}: {len(stream)} events")
    return EXIT_OK


def _cmd_voxelize(args) -> int:
    stream = evio.read_events(args.events)
    t0 = args.t0 if args.t0 is not None else stream.t_start
    t1 = args.t1 if args.t1 is not None else stream.t_end
    grid = voxelize(stream, t0, t1, args.bins)
    evio.write_voxel(args.out, grid)
    print(f"wrote {args.out}: bins={grid.bins} density={density(grid):.4f}")
    return EXIT_OK


def _cmd_density(args) -> int:
    if args.voxel:
        grid = evio.read_voxel(args.voxel)
    else:
        stream = evio.read_events(args.events)
        grid = voxelize(stream, stream.t_start, stream.t_end, args.bins)
    print(f"{density(grid):.6f}")
    return EXIT_OK


def _cmd_package(args) -> int:
    parts = json.loads(Path(args.parts).read_text())
    events_prev = {float(c): evio.read_events(p) for c, p in parts["events_prev"].items()}
    events_next = {float(c): evio.read_events(p) for c, p in parts["events_next"].items()}
    sample = evio.package_sample(
        args.out,
        parts["id"],
        events_prev=events_prev,
        events_next=events_next,
        flow_fw=evio.read_flow(parts["flow_fw"]),
        flow_bw=evio.read_flow(parts["flow_bw"]),
        frames=[(int(t), evio.read_pgm(p, int(t))) for t, p in parts["frames"]],
        window=tuple(parts["window"]),
        dt=int(parts.get("dt", 1)),
        seed=int(parts.get("seed", 0)),
        bins=int(parts.get("bins", 5)),
    )
    manifest_path = Path(args.out) / "manifest.jsonl"
    existing = evio.read_manifest(args.out) if manifest_path.exists() else []
    existing = [s for s in existing if s.sample_id != sample.sample_id]
    evio.write_manifest(args.out, existing + [sample])
    print(f"packaged {sample.sample_id} into {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    findings = evio.validate_dataset(args.root)
    for f in findings:
        print(f)
    print(f"{len(findings)} finding(s)")
    return EXIT_OK if not findings else EXIT_MISMATCH


def _cmd_eval(args) -> int:
    outcome = eval_command(args.pred, args.gt, args.mode, args.threshold)
    lines = outcome.lines()
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK if not outcome.missing else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run the full generation pipeline")
    p.add_argument("--config", help="JSON config file (all fields optional)")
    p.add_argument("--out", required=True, help="dataset output root")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--thresholds", help="comma-separated contrast thresholds")
    p.add_argument("--bins", type=int)
    p.add_argument("--max-disp", type=float, dest="max_disp")
    p.add_argument("--jobs", type=int)
    p.add_argument("--debug-images", action="store_true", dest="debug_images")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("simulate", help="events from a rendered frame directory")
    p.add_argument("--frames", required=True, help="directory with frames.csv and frame_<k>.pgm")
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", default="0.2")
    p.add_argument("--log-floor", type=float, default=0.01, dest="log_floor")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("voxelize", help="event file -> voxel file")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--t0", type=int)
    p.add_argument("--t1", type=int)
    p.set_defaults(func=_cmd_voxelize)

    p = sub.add_parser("density", help="density of a voxel or event file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--voxel")
    g.add_argument("--events")
    p.add_argument("--bins", type=int, default=5)
    p.set_defaults(func=_cmd_density)

    p = sub.add_parser("package", help="assemble a sample from a parts manifest")
    p.add_argument("--parts", required=True, help="JSON file naming the sample parts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_package)

    p = sub.add_parser("validate", help="re-check a packaged dataset")
    p.add_argument("--root", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("eval", help="score predictions against a dataset")
    p.add_argument("--pred", required=True, help="directory of <sample_id>.flo predictions")
    p.add_argument("--gt", required=True, help="dataset root")
    p.add_argument("--mode", choices=("dense", "sparse"), default="dense")
    p.add_argument("--threshold", type=float, help="event threshold for the sparse mask")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, evio.FormatError, evio.CorruptFileError, evio.PackagingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GenerationError, PathologicalMotionError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION


if __name__ == "__main__":
    sys.exit(main())
