"""Procedural planar scenes: rendering, analytic flow, spline trajectories.

A scene is a depth-ordered set of finite textured planes in front of the
camera plus a uniform background at infinity. Planes make both rendering
and optical-flow ground truth exact: the pixel motion between two camera
poses viewing the same plane is the plane-induced homography

    H = K (R_ji + t_ji n_i^T / d_i) K^-1

so flow labels are closed-form, and occlusion can be decided by exact
ray-plane tests instead of depth-buffer comparisons.

Coordinate conventions: world points X satisfy n . X = d for a plane with
unit normal n and offset d > 0. A pose holds the camera center C and the
camera-to-world rotation R; camera coordinates are X_c = R^T (X - C) with
+z in front, and pixels follow u = fx * x/z + cx, v = fy * y/z + cy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    FlowField,
    Frame,
    Pose,
    Trajectory,
    quat_angle,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
)

_PARALLEL_EPS = 1e-12
_OCCLUSION_EPS = 1e-6


class GenerationError(RuntimeError):
    """No valid trajectory found within the rejection-sampling budget."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def matrix_inv(self):
        return np.array(
            [[1.0 / self.fx, 0, -self.cx / self.fx], [0, 1.0 / self.fy, -self.cy / self.fy], [0, 0, 1.0]]
        )


@dataclass(frozen=True)
class PlaneTexture:
    """Band-limited periodic intensity: sinusoids + bilinear random lattice.

    Values stay inside [0.5 - budget, 0.5 + budget] by construction (the
    amplitude budget is enforced at generation time), which keeps log
    intensities finite and avoids clipping kinks. Bounded spatial
    frequency keeps sub-pixel sampling of the rendered video meaningful.
    """

    amplitudes: np.ndarray          # (n,)
    frequencies: np.ndarray         # (n, 2) cycles per scene unit
    phases: np.ndarray              # (n,)
    lattice: np.ndarray             # (gh, gw) values, tiled periodically
    lattice_cell: float             # lattice cell size in scene units
    lattice_amp: float
    base: float = 0.5

    def sample(self, u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        val = np.full(u.shape, self.base)
        for a, (fu, fv), ph in zip(self.amplitudes, self.frequencies, self.phases):
            val = val + a * np.sin(2.0 * math.pi * (fu * u + fv * v) + ph)
        if self.lattice_amp > 0:
            gh, gw = self.lattice.shape
            gu = u / self.lattice_cell
            gv = v / self.lattice_cell
            i0 = np.floor(gv).astype(np.int64)
            j0 = np.floor(gu).astype(np.int64)
            fv_ = gv - i0
            fu_ = gu - j0
            i0m = np.mod(i0, gh)
            j0m = np.mod(j0, gw)
            i1m = np.mod(i0 + 1, gh)
            j1m = np.mod(j0 + 1, gw)
            lat = (
                self.lattice[i0m, j0m] * (1 - fv_) * (1 - fu_)
                + self.lattice[i0m, j1m] * (1 - fv_) * fu_
                + self.lattice[i1m, j0m] * fv_ * (1 - fu_)
                + self.lattice[i1m, j1m] * fv_ * fu_
            )
            val = val + self.lattice_amp * lat
        return val

    @classmethod
    def constant(cls, value=0.5):
        return cls(
            amplitudes=np.zeros(0),
            frequencies=np.zeros((0, 2)),
            phases=np.zeros(0),
            lattice=np.zeros((1, 1)),
            lattice_cell=1.0,
            lattice_amp=0.0,
            base=value,
        )

    def __post_init__(self):
        for name in ("amplitudes", "frequencies", "phases", "lattice"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class ScenePlane:
    """Finite textured plane n . X = d with an in-plane orthonormal basis."""

    normal: np.ndarray      # unit 3-vector
    offset: float           # d > 0
    basis_u: np.ndarray
    basis_v: np.ndarray
    extent: tuple           # (u_min, u_max, v_min, v_max) in plane coords
    texture: PlaneTexture

    def __post_init__(self):
        n = np.ascontiguousarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if self.offset <= 0:
            raise ValueError("plane offset must be positive")
        for name in ("normal", "basis_u", "basis_v"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def anchor(self):
        """The plane point closest to the world origin."""
        return self.offset * self.normal

    def contains(self, pu, pv):
        u0, u1, v0, v1 = self.extent
        return (pu >= u0) & (pu <= u1) & (pv >= v0) & (pv <= v1)


def plane_basis(normal):
    """Deterministic orthonormal in-plane basis for a unit normal."""
    n = np.asarray(normal, dtype=np.float64)
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass(frozen=True)
class PlanarScene:
    """Depth-ordered textured planes plus a uniform background at infinity.

    Generated scenes always carry 1..8 planes; the zero-plane degenerate
    case is accepted so renders of an empty scene reduce to the uniform
    background.
    """

    planes: tuple
    background: float = 0.5

    def __post_init__(self):
        if len(self.planes) > 8:
            raise ValueError("at most 8 planes")
        if not (0.0 <= self.background <= 1.0):
            raise ValueError("background intensity must be in [0, 1]")
        object.__setattr__(self, "planes", tuple(self.planes))


# ---------------------------------------------------------------------------
# ray casting


def _pixel_dirs(intr: CameraIntrinsics):
    """Unnormalized camera-frame ray directions, z component = 1."""
    u = np.arange(intr.width, dtype=np.float64)
    v = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    return np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)


def _cast(scene: PlanarScene, pose: Pose, intr: CameraIntrinsics):
    """Per-pixel nearest plane: returns (plane_idx, depth, pu, pv).

    plane_idx is -1 for background; depth is the camera-frame z of the
    hit (the ray parameter, since ray dirs have z=1 in camera frame);
    (pu, pv) are plane coordinates of the hit for texture lookup.
    """
    R = pose.rotation()
    C = pose.position
    dirs = _pixel_dirs(intr) @ R.T       # world-frame directions
    h, w = dirs.shape[:2]
    depth = np.full((h, w), np.inf)
    idx = np.full((h, w), -1, dtype=np.int32)
    pu = np.zeros((h, w))
    pv = np.zeros((h, w))
    for k, plane in enumerate(scene.planes):
        denom = dirs @ plane.normal
        ok = np.abs(denom) > _PARALLEL_EPS
        tstar = np.where(ok, (plane.offset - plane.normal @ C) / np.where(ok, denom, 1.0), np.inf)
        ok &= tstar > _OCCLUSION_EPS
        hit = C + tstar[..., None] * dirs
        rel = hit - plane.anchor
        hu = rel @ plane.basis_u
        hv = rel @ plane.basis_v
        ok &= plane.contains(hu, hv)
        closer = ok & (tstar < depth)
        depth[closer] = tstar[closer]
        idx[closer] = k
        pu[closer] = hu[closer]
        pv[closer] = hv[closer]
    return idx, depth, pu, pv


def render_frame(scene: PlanarScene, pose: Pose, intr: CameraIntrinsics, t: int = 0) -> Frame:
    """Ray-cast the scene into an intensity frame (deterministic, exact)."""
    idx, _, pu, pv = _cast(scene, pose, intr)
    img = np.full((intr.height, intr.width), scene.background)
    for k, plane in enumerate(scene.planes):
        sel = idx == k
        if sel.any():
            img[sel] = plane.texture.sample(pu[sel], pv[sel])
    return Frame(np.clip(img, 0.0, 1.0), t)


# ---------------------------------------------------------------------------
# plane-induced homographies and analytic flow


def plane_homography(plane: ScenePlane, pose_i: Pose, pose_j: Pose, intr: CameraIntrinsics):
    """Pixel map view i -> view j induced by one plane."""
    Ri, Ci = pose_i.rotation(), pose_i.position
    Rj, Cj = pose_j.rotation(), pose_j.position
    n_i = Ri.T @ plane.normal
    d_i = plane.offset - plane.normal @ Ci
    R_ji = Rj.T @ Ri
    t_ji = Rj.T @ (Ci - Cj)
    K = intr.matrix()
    return K @ (R_ji + np.outer(t_ji, n_i) / d_i) @ intr.matrix_inv()


def infinite_homography(pose_i: Pose, pose_j: Pose, intr: CameraIntrinsics):
    """Pixel map for points at infinity (rotation-only)."""
    R_ji = pose_j.rotation().T @ pose_i.rotation()
    return intr.matrix() @ R_ji @ intr.matrix_inv()


def _apply_homography(H, uu, vv):
    x = H[0, 0] * uu + H[0, 1] * vv + H[0, 2]
    y = H[1, 0] * uu + H[1, 1] * vv + H[1, 2]
    z = H[2, 0] * uu + H[2, 1] * vv + H[2, 2]
    return x / z, y / z, z


def analytic_flow(
    scene: PlanarScene,
    pose_i: Pose,
    pose_j: Pose,
    intr: CameraIntrinsics,
    check_occlusion: bool = True,
) -> FlowField:
    """Exact optical flow from pose_i to pose_j with occlusion-aware mask.

    Each pixel is mapped through the homography of the plane visible at
    pose_i (background pixels use the rotation-only map of the plane at
    infinity, so translation leaves them still). The mask is False where
    the mapped point leaves the image, lands behind the second camera,
    or is blocked at pose_j by a strictly nearer plane; the blocking test
    is an exact ray-plane intersection, not a depth-buffer lookup.

    With check_occlusion=False only the flow values are computed (same
    numbers, cheaper mask); used for displacement bounds where occlusion
    does not change pixel motion.
    """
    idx, depth, _, _ = _cast(scene, pose_i, intr)
    h, w = idx.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    mu = np.zeros((h, w))
    mv = np.zeros((h, w))
    wsign = np.zeros((h, w))

    groups = [(-1, infinite_homography(pose_i, pose_j, intr))]
    groups += [(k, plane_homography(p, pose_i, pose_j, intr)) for k, p in enumerate(scene.planes)]
    for k, H in groups:
        sel = idx == k
        if not sel.any():
            continue
        x, y, z = _apply_homography(H, uu[sel], vv[sel])
        mu[sel] = x
        mv[sel] = y
        wsign[sel] = z

    valid = wsign > 0
    valid &= (mu >= 0) & (mu <= w - 1) & (mv >= 0) & (mv <= h - 1)

    if check_occlusion and len(scene.planes) > 0:
        valid &= ~_occluded_at_target(scene, pose_i, pose_j, intr, idx, depth)

    flow_u = mu - uu
    flow_v = mv - vv
    bad = ~np.isfinite(flow_u) | ~np.isfinite(flow_v)
    flow_u[bad] = 0.0
    flow_v[bad] = 0.0
    valid &= ~bad
    return FlowField(flow_u, flow_v, valid)


def _occluded_at_target(scene, pose_i, pose_j, intr, idx, depth):
    """True where the surface point seen at pose_i is blocked at pose_j.

    For plane pixels the world point X is finite: plane m blocks it iff
    the segment C_j -> X crosses m strictly inside (0, 1) within m's
    extent. Background pixels are directions: any forward in-extent hit
    blocks them.
    """
    Ri, Ci = pose_i.rotation(), pose_i.position
    Cj = pose_j.position
    dirs_w = _pixel_dirs(intr) @ Ri.T
    h, w = idx.shape
    occluded = np.zeros((h, w), dtype=bool)

    finite = idx >= 0
    X = Ci + np.where(finite[..., None], depth[..., None], 0.0) * dirs_w
    seg = X - Cj
    for m, plane in enumerate(scene.planes):
        # finite points on other planes
        denom = seg @ plane.normal
        ok = finite & (idx != m) & (np.abs(denom) > _PARALLEL_EPS)
        s = np.where(ok, (plane.offset - plane.normal @ Cj) / np.where(ok, denom, 1.0), -1.0)
        ok &= (s > _OCCLUSION_EPS) & (s < 1.0 - _OCCLUSION_EPS)
        hit = Cj + s[..., None] * seg
        rel = hit - plane.anchor
        ok &= plane.contains(rel @ plane.basis_u, rel @ plane.basis_v)
        occluded |= ok

        # background rays: any forward hit occludes the point at infinity
        denom_b = dirs_w @ plane.normal
        okb = ~finite & (np.abs(denom_b) > _PARALLEL_EPS)
        sb = np.where(okb, (plane.offset - plane.normal @ Cj) / np.where(okb, denom_b, 1.0), -1.0)
        okb &= sb > _OCCLUSION_EPS
        hitb = Cj + sb[..., None] * dirs_w
        relb = hitb - plane.anchor
        okb &= plane.contains(relb @ plane.basis_u, relb @ plane.basis_v)
        occluded |= okb
    return occluded


def max_displacement(scene, pose_a, pose_b, intr) -> float:
    """Largest pixel motion between two poses, forward and backward.

    Taken over all pixels (occlusion does not change how far a surface
    point moves, so the mask is skipped).
    """
    fw = analytic_flow(scene, pose_a, pose_b, intr, check_occlusion=False)
    bw = analytic_flow(scene, pose_b, pose_a, intr, check_occlusion=False)
    return float(max(fw.magnitude().max(), bw.magnitude().max()))


def pose_at(traj: Trajectory, t: int) -> Pose:
    """Evaluate the trajectory: cubic position, slerp orientation."""
    return traj.pose_at(t)


# ---------------------------------------------------------------------------
# procedural generation


@dataclass(frozen=True)
class SceneConfig:
    plane_count: tuple = (2, 6)
    depth_range: tuple = (2.0, 6.0)
    tilt_max: float = 0.45            # max |normal xy| component
    pixel_freq_range: tuple = (0.04, 0.16)   # texture frequency in cycles/pixel
    sinusoids: tuple = (2, 8)
    amplitude_budget: float = 0.45    # total texture swing around 0.5
    background_range: tuple = (0.25, 0.75)
    # reference focal length used to convert pixel frequencies to scene units
    focal_px: float = 96.0


def gen_scene(cfg: SceneConfig, seed) -> PlanarScene:
    """Random depth-ordered planar scene, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    n_planes = int(rng.integers(cfg.plane_count[0], cfg.plane_count[1] + 1))
    if not (1 <= n_planes <= 8):
        raise ValueError("generated plane count must be in 1..8")
    depths = np.sort(rng.uniform(*cfg.depth_range, size=n_planes))[::-1]  # far to near
    planes = []
    for z in depths:
        nxy = rng.uniform(-cfg.tilt_max, cfg.tilt_max, size=2)
        normal = np.array([nxy[0], nxy[1], 1.0])
        normal /= np.linalg.norm(normal)
        offset = float(normal @ np.array([0.0, 0.0, z]))
        e1, e2 = plane_basis(normal)

        view_span = z * 1.4  # roughly the visible width at this depth
        half_u = rng.uniform(0.35, 1.0) * view_span
        half_v = rng.uniform(0.35, 1.0) * view_span
        cu = rng.uniform(-0.5, 0.5) * view_span
        cv = rng.uniform(-0.5, 0.5) * view_span
        extent = (cu - half_u, cu + half_u, cv - half_v, cv + half_v)

        n_sin = int(rng.integers(cfg.sinusoids[0], cfg.sinusoids[1] + 1))
        lattice_amp = rng.uniform(0.2, 0.4) * cfg.amplitude_budget
        sin_budget = cfg.amplitude_budget - lattice_amp
        raw = rng.uniform(0.5, 1.0, size=n_sin)
        amps = raw / raw.sum() * sin_budget
        fpx = rng.uniform(*cfg.pixel_freq_range, size=n_sin)
        funit = fpx * cfg.focal_px / z
        ang = rng.uniform(0, 2 * math.pi, size=n_sin)
        freqs = np.stack([funit * np.cos(ang), funit * np.sin(ang)], axis=1)
        phases = rng.uniform(0, 2 * math.pi, size=n_sin)
        gh = int(rng.integers(5, 9))
        lattice = rng.uniform(-1.0, 1.0, size=(gh, gh))
        cell = max(2 * half_u, 2 * half_v) / gh

        planes.append(
            ScenePlane(
                normal=normal,
                offset=offset,
                basis_u=e1,
                basis_v=e2,
                extent=extent,
                texture=PlaneTexture(
                    amplitudes=amps,
                    frequencies=freqs,
                    phases=phases,
                    lattice=lattice,
                    lattice_cell=cell,
                    lattice_amp=lattice_amp,
                ),
            )
        )
    background = float(rng.uniform(*cfg.background_range))
    return PlanarScene(tuple(planes), background)


@dataclass(frozen=True)
class TrajectoryConfig:
    duration_us: int = 250_000
    start: tuple = (0.0, 0.0, 0.0)
    end: Optional[tuple] = None       # None: random drift from start
    speed_max: float = 6.0            # scene units / second
    rot_rate_max: float = 2.0         # rad / second
    waypoints: tuple = (4, 12)
    clearance: float = 0.35           # min distance kept to every plane
    check_step_us: int = 1000
    max_rounds: int = 40


def _sample_waypoints(cfg: TrajectoryConfig, rng, shrink):
    k = int(rng.integers(cfg.waypoints[0], cfg.waypoints[1] + 1))
    times = np.linspace(0, cfg.duration_us, k).round().astype(np.int64)
    times[0], times[-1] = 0, cfg.duration_us
    start = np.asarray(cfg.start, dtype=np.float64)
    duration_s = cfg.duration_us * 1e-6
    if cfg.end is not None:
        end = np.asarray(cfg.end, dtype=np.float64)
    else:
        drift = rng.normal(size=3)
        nd = np.linalg.norm(drift)
        direction = drift / nd if nd > 0 else np.zeros(3)
        end = start + direction * 0.45 * cfg.speed_max * duration_s * shrink

    seg_dt = duration_s / max(k - 1, 1)
    alphas = np.linspace(0.0, 1.0, k)[:, None]
    positions = start[None, :] * (1 - alphas) + end[None, :] * alphas
    sigma = 0.22 * cfg.speed_max * seg_dt * shrink
    if sigma > 0 and k > 2:
        positions[1:-1] += rng.normal(scale=sigma, size=(k - 2, 3))

    quats = [np.array([1.0, 0.0, 0.0, 0.0])]
    for _ in range(k - 1):
        axis = rng.normal(size=3)
        angle = rng.uniform(0, 0.7 * cfg.rot_rate_max * seg_dt * shrink)
        step = quat_from_axis_angle(axis, angle)
        quats.append(quat_normalize(quat_multiply(quats[-1], step)))
    return Trajectory(times, positions, np.array(quats))


def _trajectory_ok(traj: Trajectory, cfg: TrajectoryConfig, scene: PlanarScene):
    ts = np.arange(traj.t_first, traj.t_last + 1, cfg.check_step_us, dtype=np.int64)
    if ts[-1] != traj.t_last:
        ts = np.append(ts, traj.t_last)
    poses = [traj.pose_at(int(t)) for t in ts]
    pts = np.array([p.position for p in poses])
    dt_s = np.diff(ts) * 1e-6
    speeds = np.linalg.norm(np.diff(pts, axis=0), axis=1) / dt_s
    if speeds.size and speeds.max() > cfg.speed_max * (1 + 1e-9) + 1e-12:
        return False
    rates = np.array(
        [quat_angle(a.orientation, b.orientation) for a, b in zip(poses[:-1], poses[1:])]
    ) / dt_s
    if rates.size and rates.max() > cfg.rot_rate_max * (1 + 1e-9) + 1e-12:
        return False
    for plane in scene.planes:
        clear = plane.offset - pts @ plane.normal
        if clear.min() < cfg.clearance:
            return False
    return True


def gen_trajectory(cfg: TrajectoryConfig, scene: PlanarScene, seed) -> Trajectory:
    """Random smooth camera path that respects speed, rotation-rate and
    plane-clearance bounds.

    Candidates are drawn and verified by dense 1 ms sampling; the
    perturbation scale shrinks every rejection round. Deterministic for
    a given (cfg, seed).
    """
    if cfg.speed_max == 0.0 and cfg.rot_rate_max == 0.0:
        times = np.array([0, cfg.duration_us], dtype=np.int64)
        start = np.asarray(cfg.start, dtype=np.float64)
        pos = np.stack([start, start])
        quats = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (2, 1))
        return Trajectory(times, pos, quats)
    rng = np.random.default_rng(seed)
    shrink = 1.0
    for _ in range(cfg.max_rounds):
        traj = _sample_waypoints(cfg, rng, shrink)
        if _trajectory_ok(traj, cfg, scene):
            return traj
        shrink *= 0.7
    raise GenerationError(f"no valid trajectory after {cfg.max_rounds} rounds (seed={seed})")
