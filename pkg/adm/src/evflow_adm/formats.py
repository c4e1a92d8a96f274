"""Readers for the engine's on-disk dataset contract.

This package talks to the data engine only through its files: the event
container (.evs), the voxel container (.vox), Middlebury flow plus mask
sidecar (.flo/.mask), and the manifest.jsonl dataset index. The layouts
are re-implemented here on purpose; nothing imports the engine.

events (.evs)  "EVS1", u32 version=1, u32 width, u32 height, i64 t_start,
               i64 t_end, u64 count, then {i64 t, u16 x, u16 y, i8 p,
               3 pad bytes} per record, little-endian.
voxels (.vox)  "VOX1", u32 bins, u32 height, u32 width, f32 row-major.
flow (.flo)    f32 202021.25, i32 w, i32 h, interleaved f32 (u, v);
               validity in "<stem>.mask", one byte per pixel.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_EVENT_HEADER = struct.Struct("<4sIIIqqQ")
_EVENT_RECORD = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1", (3,))])


@dataclass(frozen=True)
class EventWindow:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t_start: int
    t_end: int


def read_events(path) -> EventWindow:
    raw = Path(path).read_bytes()
    magic, version, width, height, t_start, t_end, count = _EVENT_HEADER.unpack_from(raw)
    if magic != b"EVS1" or version != 1:
        raise ValueError(f"{path}: not a version-1 EVS1 file")
    records = np.frombuffer(raw, dtype=_EVENT_RECORD, offset=_EVENT_HEADER.size, count=count)
    return EventWindow(
        records["t"].astype(np.int64), records["x"].astype(np.int64),
        records["y"].astype(np.int64), records["p"].astype(np.float64),
        width, height, t_start, t_end,
    )


def read_voxel(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != b"VOX1":
        raise ValueError(f"{path}: not a VOX1 file")
    b, h, w = struct.unpack_from("<III", raw, 4)
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(b, h, w).astype(np.float64)


def read_flow(path):
    raw = Path(path).read_bytes()
    magic, w, h = struct.unpack_from("<fii", raw)
    if abs(magic - 202021.25) > 1e-3:
        raise ValueError(f"{path}: bad flow magic")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float64)
    mask_path = Path(path).with_suffix(".mask")
    if mask_path.exists():
        valid = np.frombuffer(mask_path.read_bytes(), dtype=np.uint8).reshape(h, w).astype(bool)
    else:
        valid = np.ones((h, w), dtype=bool)
    return data[..., 0], data[..., 1], valid


def voxelize(window: EventWindow, bins: int = 5) -> np.ndarray:
    """Polarity-weighted bilinear temporal binning of one event window."""
    h, w = window.height, window.width
    grid = np.zeros(bins * h * w)
    if len(window.t):
        span = float(window.t_end - window.t_start)
        s = (window.t - window.t_start) / span * (bins - 1)
        b0 = np.floor(s).astype(np.int64)
        frac = s - b0
        flat = window.y * w + window.x
        ok = b0 <= bins - 1
        np.add.at(grid, b0[ok] * h * w + flat[ok], window.p[ok] * (1 - frac[ok]))
        ok = b0 + 1 <= bins - 1
        np.add.at(grid, (b0[ok] + 1) * h * w + flat[ok], window.p[ok] * frac[ok])
    return grid.reshape(bins, h, w)


@dataclass(frozen=True)
class ManifestSample:
    sample_id: str
    directory: str
    dt: int
    window: tuple
    thresholds: tuple
    densities: tuple
    bins: int

    def events_path(self, root, c: float, which: str) -> Path:
        return Path(root) / self.directory / f"events_C{c:g}_{which}.evs"

    def flow_path(self, root) -> Path:
        return Path(root) / self.directory / "flow_fw.flo"


def read_manifest(root):
    path = Path(root) / "manifest.jsonl"
    out = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(
            ManifestSample(
                sample_id=rec["id"], directory=rec["dir"], dt=int(rec["dt"]),
                window=tuple(rec["window"]), thresholds=tuple(rec["thresholds"]),
                densities=tuple(rec["densities"]), bins=int(rec["bins"]),
            )
        )
    return out
