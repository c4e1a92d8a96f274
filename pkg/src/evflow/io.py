"""Bit-exact binary formats and dataset packaging.

All multi-byte fields are little-endian regardless of host. Four formats:

events (.evs)   magic "EVS1", u32 version=1, u32 width, u32 height,
                i64 t_start, i64 t_end, u64 count, then count records of
                {i64 t, u16 x, u16 y, i8 p, 3 zero pad bytes} (16 B each).
flow (.flo)     Middlebury-compatible: f32 202021.25, i32 width,
                i32 height, row-major interleaved f32 (u, v). Validity
                lives in a sidecar "<stem>.mask" (one byte per pixel) so
                the main file stays readable by third-party viewers.
frames (.pgm)   binary 8-bit PGM (P5); timestamps go to a frames.csv.
voxels (.vox)   magic "VOX1", u32 bins, u32 height, u32 width, row-major
                f32 values. (Window bounds are not part of the format.)

A packaged sample directory holds the event windows per threshold, the
forward/backward flow labels, the key frames, and a JSON meta record;
the dataset manifest (manifest.jsonl, one JSON record per line) carries
enough to re-validate every sample without regeneration.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EventStream, FlowField, Frame, validate_stream
from .representation import VoxelGrid, density, voxelize

EVENT_MAGIC = b"EVS1"
EVENT_VERSION = 1
VOXEL_MAGIC = b"VOX1"
FLOW_MAGIC = 202021.25

_EVENT_HEADER = struct.Struct("<4sIIIqqQ")
_EVENT_RECORD = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1", (3,))])


class FormatError(ValueError):
    """File does not match the declared layout (magic, version, shape)."""


class CorruptFileError(ValueError):
    """File parses but violates a data invariant (ordering, bounds)."""


class PackagingError(RuntimeError):
    """A sample part is missing or inconsistent at packaging time."""


# ---------------------------------------------------------------------------
# events


def write_events(path, stream: EventStream):
    path = Path(path)
    if stream.width >= 1 << 16 or stream.height >= 1 << 16:
        raise FormatError("event format supports sensors up to 65535 px per side")
    header = _EVENT_HEADER.pack(
        EVENT_MAGIC, EVENT_VERSION, stream.width, stream.height,
        stream.t_start, stream.t_end, len(stream),
    )
    records = np.zeros(len(stream), dtype=_EVENT_RECORD)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_events(path) -> EventStream:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _EVENT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, width, height, t_start, t_end, count = _EVENT_HEADER.unpack_from(raw)
    if magic != EVENT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EVENT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = raw[_EVENT_HEADER.size:]
    if len(body) != count * _EVENT_RECORD.itemsize:
        raise FormatError(f"{path}: expected {count} records, payload is {len(body)} bytes")
    records = np.frombuffer(body, dtype=_EVENT_RECORD)
    stream = EventStream(
        records["t"].astype(np.int64), records["x"].astype(np.int32),
        records["y"].astype(np.int32), records["p"].astype(np.int8),
        width, height, t_start, t_end,
    )
    report = validate_stream(stream)
    if not report.ok:
        raise CorruptFileError(f"{path}: {report.reason} at index {report.index}")
    return stream


# ---------------------------------------------------------------------------
# flow


def _mask_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".mask")


def write_flow(path, flow: FlowField):
    path = Path(path)
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow.u
    data[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLOW_MAGIC, w, h))
        fh.write(data.tobytes())
    _mask_path(path).write_bytes(flow.valid.astype(np.uint8).tobytes())


def read_flow(path) -> FlowField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    magic, w, h = struct.unpack_from("<fii", raw)
    if abs(magic - FLOW_MAGIC) > 1e-3:
        raise FormatError(f"{path}: bad magic {magic}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    mask_file = _mask_path(path)
    if mask_file.exists():
        valid = np.frombuffer(mask_file.read_bytes(), dtype=np.uint8)
        if valid.size != h * w:
            raise FormatError(f"{mask_file}: mask size does not match flow shape")
        valid = valid.reshape(h, w).astype(bool)
    else:
        valid = np.ones((h, w), dtype=bool)  # plain third-party .flo
    return FlowField(data[..., 0].astype(np.float64), data[..., 1].astype(np.float64), valid)


# ---------------------------------------------------------------------------
# frames


def write_pgm(path, frame: Frame):
    data = np.rint(frame.intensities * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path, t: int = 0) -> Frame:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if data.size != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, got {data.size}")
    return Frame(data.reshape(h, w).astype(np.float64) / 255.0, t)


# ---------------------------------------------------------------------------
# voxels


def write_voxel(path, grid: VoxelGrid):
    b, h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(VOXEL_MAGIC)
        fh.write(struct.pack("<III", b, h, w))
        fh.write(grid.values.astype("<f4").tobytes())


def read_voxel(path) -> VoxelGrid:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != VOXEL_MAGIC:
        raise FormatError(f"{path}: bad voxel header")
    b, h, w = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * b * h * w
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(b, h, w)
    # window bounds are not part of the format; nominal [0, 1] is used
    return VoxelGrid(values.astype(np.float64), 0, 1)


# ---------------------------------------------------------------------------
# sample packaging


def threshold_tag(c: float) -> str:
    return f"{c:g}"


@dataclass(frozen=True)
class DatasetSample:
    """Manifest view of one packaged sample."""

    sample_id: str
    directory: str
    dt: int
    seed: int
    window: tuple          # (t_prev, t_mid, t_next) microseconds
    thresholds: tuple
    densities: tuple       # aligned with thresholds
    bins: int
    frame_times: tuple

    def record(self) -> dict:
        return {
            "id": self.sample_id,
            "dir": self.directory,
            "dt": self.dt,
            "seed": self.seed,
            "window": list(self.window),
            "thresholds": list(self.thresholds),
            "densities": list(self.densities),
            "bins": self.bins,
            "frame_times": list(self.frame_times),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DatasetSample":
        return cls(
            sample_id=rec["id"], directory=rec["dir"], dt=int(rec["dt"]), seed=int(rec["seed"]),
            window=tuple(rec["window"]), thresholds=tuple(rec["thresholds"]),
            densities=tuple(rec["densities"]), bins=int(rec["bins"]),
            frame_times=tuple(rec["frame_times"]),
        )


def sample_dir(root, sample_id) -> Path:
    return Path(root) / "samples" / str(sample_id)


def package_sample(
    root,
    sample_id: str,
    *,
    events_prev: dict,
    events_next: dict,
    flow_fw: FlowField,
    flow_bw: FlowField,
    frames,
    window,
    dt: int,
    seed: int,
    bins: int = 5,
    densities: dict | None = None,
) -> DatasetSample:
    """Write one sample directory and return its manifest entry.

    events_prev/events_next map threshold -> EventStream for the two
    consecutive windows; frames is a list of (t_us, Frame) key frames.
    Densities are recorded from the voxelized next window (recomputed
    here when not supplied) so the manifest can always be re-checked.
    """
    if set(events_prev) != set(events_next) or not events_prev:
        raise PackagingError("need matching, non-empty threshold sets for both windows")
    if flow_fw is None or flow_bw is None:
        raise PackagingError("missing flow labels")
    if not frames:
        raise PackagingError("missing key frames")
    t_prev, t_mid, t_next = window
    for c, s in events_prev.items():
        if (s.t_start, s.t_end) != (t_prev, t_mid):
            raise PackagingError(f"prev window mismatch for C={c}")
    for c, s in events_next.items():
        if (s.t_start, s.t_end) != (t_mid, t_next):
            raise PackagingError(f"next window mismatch for C={c}")

    out = sample_dir(root, sample_id)
    out.mkdir(parents=True, exist_ok=True)
    thresholds = sorted(events_prev)
    dens = []
    for c in thresholds:
        write_events(out / f"events_C{threshold_tag(c)}_prev.evs", events_prev[c])
        write_events(out / f"events_C{threshold_tag(c)}_next.evs", events_next[c])
        if densities is not None and c in densities:
            dens.append(float(densities[c]))
        else:
            dens.append(density(voxelize(events_next[c], t_mid, t_next, bins)))
    write_flow(out / "flow_fw.flo", flow_fw)
    write_flow(out / "flow_bw.flo", flow_bw)
    frame_times = []
    with open(out / "frames.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("index,t_us\n")
        for k, (t_us, frame) in enumerate(frames):
            write_pgm(out / f"frame_{k}.pgm", frame)
            fh.write(f"{k},{t_us}\n")
            frame_times.append(int(t_us))

    sample = DatasetSample(
        sample_id=str(sample_id), directory=str(Path("samples") / str(sample_id)),
        dt=dt, seed=seed, window=(t_prev, t_mid, t_next),
        thresholds=tuple(float(c) for c in thresholds), densities=tuple(dens),
        bins=bins, frame_times=tuple(frame_times),
    )
    (out / "meta").write_text(
        json.dumps(sample.record(), sort_keys=True, indent=2) + "\n", encoding="ascii"
    )
    return sample


def write_manifest(root, samples):
    lines = [json.dumps(s.record(), sort_keys=True) for s in samples]
    (Path(root) / "manifest.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="ascii")


def read_manifest(root):
    path = Path(root) / "manifest.jsonl"
    if not path.exists():
        raise FormatError(f"no manifest at {path}")
    out = []
    for line in path.read_text(encoding="ascii").splitlines():
        if line.strip():
            out.append(DatasetSample.from_record(json.loads(line)))
    return out


def validate_dataset(root) -> list:
    """Re-check every invariant of every packaged sample; returns findings."""
    root = Path(root)
    findings = []
    try:
        samples = read_manifest(root)
    except (FormatError, json.JSONDecodeError) as exc:
        return [str(exc)]
    for sample in samples:
        base = root / sample.directory
        t_prev, t_mid, t_next = sample.window
        if not (t_prev < t_mid < t_next):
            findings.append(f"{sample.sample_id}: window not increasing")
        for c, recorded in zip(sample.thresholds, sample.densities):
            tag = threshold_tag(c)
            try:
                prev = read_events(base / f"events_C{tag}_prev.evs")
                nxt = read_events(base / f"events_C{tag}_next.evs")
            except (OSError, FormatError, CorruptFileError) as exc:
                findings.append(f"{sample.sample_id}: {exc}")
                continue
            if (prev.t_start, prev.t_end) != (t_prev, t_mid):
                findings.append(f"{sample.sample_id}: prev window mismatch at C={tag}")
            if (nxt.t_start, nxt.t_end) != (t_mid, t_next):
                findings.append(f"{sample.sample_id}: next window mismatch at C={tag}")
            recomputed = density(voxelize(nxt, t_mid, t_next, sample.bins))
            if abs(recomputed - recorded) > 1e-6:
                findings.append(
                    f"{sample.sample_id}: density mismatch at C={tag}: "
                    f"{recorded} recorded vs {recomputed} recomputed"
                )
        for name in ("flow_fw.flo", "flow_bw.flo"):
            try:
                read_flow(base / name)
            except (OSError, FormatError) as exc:
                findings.append(f"{sample.sample_id}: {exc}")
        for k, t_us in enumerate(sample.frame_times):
            if not (base / f"frame_{k}.pgm").exists():
                findings.append(f"{sample.sample_id}: missing frame_{k}.pgm")
    return findings
