"""Online semantic localization.

Per frame: chain the odometry increment onto the previous estimate to get a
prior pose, lift lane-contour pixels to the vehicle frame with the enhanced
IPM, accumulate them in a sliding window, associate the window and the
projected map poles with the semantic map, and refine the pose with
Levenberg-Marquardt over a 6-DoF right perturbation of the prior.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NonFinite
from .geometry import ImageLine, Line3D, Pose
from .ipm import (OK, AttitudeAngles, CameraIntrinsics, MountCalibration,
                  camera_rotation, ipm_enhanced_many)
from .semantic_map import SemanticMap, TileCache

log = logging.getLogger(__name__)

# pixel-to-metre scale of pole residuals against lane residuals
DEFAULT_POLE_WEIGHT = 0.1
# a cost this small is a perfect fit and needs no iteration
EXACT_COST = 1e-20


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

class PoleLineObservation(NamedTuple):
    line: ImageLine
    v_min: float
    v_max: float


@dataclass
class SegmentationObservation:
    frame_id: int
    timestamp: float
    lane_pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    pole_lines: list = field(default_factory=list)

    def __post_init__(self):
        self.lane_pixels = np.asarray(self.lane_pixels, dtype=float).reshape(-1, 2)


@dataclass
class OdometryFrame:
    timestamp: float
    pose: Pose
    attitude: AttitudeAngles = field(default_factory=AttitudeAngles)


@dataclass
class SolverConfig:
    max_iterations: int = 20
    initial_damping: float = 1e-4
    cost_tol: float = 1e-4
    step_tol: float = 1e-5
    lane_gate: float = 1.0
    k_line: int = 5
    pole_gate_px: float = 30.0
    pole_weight: float = DEFAULT_POLE_WEIGHT
    huber_scale: float | None = None
    use_point_point: bool = True
    use_point_line: bool = True
    use_lanes: bool = True
    use_poles: bool = True
    # rerun from the prior with the smooth terms first; the rerun is kept
    # only if it lowers the objective by this factor
    restart: bool = True
    restart_gain: float = 10.0
    window: int = 10
    max_span: float = 50.0
    max_range: float = 30.0
    pole_range: float = 50.0
    map_radius: float = 75.0
    fd_step: float = 1e-6
    jacobian: str = "fd"
    degeneracy_ratio: float = 1e-10
    null_ratio: float = 1e-8
    roll_center: str = "principal"

    def __post_init__(self):
        for name in ("max_iterations", "initial_damping", "lane_gate", "k_line", "pole_gate_px",
                     "pole_weight", "window", "max_span", "max_range", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.jacobian not in ("fd", "analytic"):
            raise ValueError("jacobian must be 'fd' or 'analytic'")


# ---------------------------------------------------------------------------
# Prior pose and lifting
# ---------------------------------------------------------------------------

def prior_pose(T_prev: Pose, That_prev: Pose, That_k: Pose) -> Pose:
    """Chain the odometry increment onto the previous estimate:
    ``T_prev @ inv(That_prev) @ That_k``."""
    if (np.array_equal(T_prev.rotation, That_prev.rotation)
            and np.array_equal(T_prev.translation, That_prev.translation)):
        return That_k
    return T_prev @ That_prev.inverse() @ That_k


def lift_lane_pixels(obs: SegmentationObservation, calib: MountCalibration, K: CameraIntrinsics,
                     attitude: AttitudeAngles = AttitudeAngles(), *, max_range: float = 30.0,
                     roll_center: str = "principal") -> tuple[np.ndarray, int]:
    """Vehicle-frame ground points for the observation's contour pixels.

    Pixels above the horizon or beyond ``max_range`` are dropped; the second
    return value counts them.
    """
    if len(obs.lane_pixels) == 0:
        return np.zeros((0, 3)), 0
    pts, status = ipm_enhanced_many(obs.lane_pixels, K, calib, attitude,
                                    max_range=max_range, roll_center=roll_center)
    good = status == OK
    return calib.extrinsic.apply(pts[good]), int((~good).sum())


# ---------------------------------------------------------------------------
# Sliding-window local map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _WindowEntry:
    points: np.ndarray      # in the entry's own vehicle frame
    to_newest: Pose         # entry frame -> newest frame
    step: float             # path length from this entry to the next newer one


@dataclass(frozen=True)
class LocalLaneMap:
    """Lane points of the most recent frames, expressed in the newest frame."""

    entries: tuple = ()
    capacity: int = 10
    max_span: float = 50.0

    @property
    def span(self) -> float:
        return float(sum(e.step for e in self.entries[:-1]))

    def __len__(self):
        return len(self.entries)

    def points(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 3))
        parts = [e.to_newest.apply(e.points) for e in self.entries if len(e.points)]
        return np.concatenate(parts) if parts else np.zeros((0, 3))


def push_local_map(lm: LocalLaneMap, new_points: np.ndarray, motion: Pose) -> LocalLaneMap:
    """Append a frame. ``motion`` is the new frame's pose in the previous
    newest frame. Oldest entries are evicted until the window holds at most
    ``capacity`` frames spanning at most ``max_span`` meters."""
    inv = motion.inverse()
    step = float(np.linalg.norm(motion.translation))
    entries = []
    for i, e in enumerate(lm.entries):
        last = i == len(lm.entries) - 1
        entries.append(_WindowEntry(e.points, inv @ e.to_newest, step if last else e.step))
    pts = np.asarray(new_points, dtype=float).reshape(-1, 3)
    entries.append(_WindowEntry(pts, Pose.identity(), 0.0))
    while len(entries) > lm.capacity:
        entries.pop(0)
    while len(entries) > 1 and sum(e.step for e in entries[:-1]) > lm.max_span:
        entries.pop(0)
    return LocalLaneMap(tuple(entries), lm.capacity, lm.max_span)


# ---------------------------------------------------------------------------
# Correspondences
# ---------------------------------------------------------------------------

class Correspondence(NamedTuple):
    kind: str            # lane_point_point | lane_point_line | pole_endpoint_line
    source: np.ndarray   # vehicle-frame point, or world pole endpoint
    target: object       # map point, Line3D or ImageLine
    gate: float


@dataclass
class Correspondences:
    """Vectorised correspondence set.

    ``pp_src``/``pl_src`` are vehicle-frame local points; ``pole_pts`` are
    world endpoints with their observed image line coefficients.
    """

    pp_src: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pp_tgt: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pl_src: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pl_point: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pl_dir: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pole_pts: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pole_lines: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pole_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    lane_unmatched: int = 0
    pole_unmatched: int = 0
    lane_gate: float = 1.0
    pole_gate: float = 30.0

    def __len__(self):
        return len(self.pp_src) + len(self.pl_src) + len(self.pole_pts)

    def lanes_only(self) -> "Correspondences":
        return replace(self, pole_pts=np.zeros((0, 3)), pole_lines=np.zeros((0, 3)),
                       pole_ids=np.zeros(0, dtype=np.int64))

    def without_point_point(self) -> "Correspondences":
        return replace(self, pp_src=np.zeros((0, 3)), pp_tgt=np.zeros((0, 3)))

    def as_list(self) -> list[Correspondence]:
        out = [Correspondence("lane_point_point", s, t, self.lane_gate)
               for s, t in zip(self.pp_src, self.pp_tgt)]
        out += [Correspondence("lane_point_line", s, Line3D(p, d), self.lane_gate)
                for s, p, d in zip(self.pl_src, self.pl_point, self.pl_dir)]
        out += [Correspondence("pole_endpoint_line", s, ImageLine(*c), self.pole_gate)
                for s, c in zip(self.pole_pts, self.pole_lines)]
        return out


def _principal_directions(nbrs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched centroid/direction of ``(M, k, 3)`` neighbour sets; third
    return flags non-degenerate sets."""
    c = nbrs.mean(axis=1)
    Q = nbrs - c[:, None, :]
    cov = Q.transpose(0, 2, 1) @ Q
    w, v = np.linalg.eigh(cov)
    ok = w[:, 2] > 1e-18
    return c, v[:, :, 2], ok


def associate_lanes(local_points: np.ndarray, prior: Pose, m: SemanticMap,
                    cfg: SolverConfig = SolverConfig()) -> Correspondences:
    """Gated nearest-neighbour association of local lane points (vehicle
    frame) with map lane points, plus a line through the ``k_line`` nearest
    map points for each gated point."""
    L = np.asarray(local_points, dtype=float).reshape(-1, 3)
    out = Correspondences(lane_gate=cfg.lane_gate, pole_gate=cfg.pole_gate_px)
    if len(L) == 0 or len(m) == 0:
        out.lane_unmatched = len(L)
        return out
    W = prior.apply(L)
    k = min(cfg.k_line, len(m))
    d, idx = m.nearest(W, k=k)
    gated = d[:, 0] <= cfg.lane_gate
    out.lane_unmatched = int((~gated).sum())
    src = L[gated]
    if cfg.use_point_point:
        out.pp_src = src
        out.pp_tgt = m.lane_points[idx[gated, 0]]
    if cfg.use_point_line and k >= 2:
        c, direction, ok = _principal_directions(m.lane_points[idx[gated]])
        out.pl_src = src[ok]
        out.pl_point = c[ok]
        out.pl_dir = direction[ok]
    return out


def camera_extrinsic(calib: MountCalibration, attitude: AttitudeAngles = AttitudeAngles()) -> Pose:
    """Actual camera-to-vehicle transform: level extrinsic times the camera
    deflection (mount deviation + attitude)."""
    R = camera_rotation(calib.deviation + attitude)
    return calib.extrinsic @ Pose.from_rt(R)


def _project(P_world: np.ndarray, cam_to_world: Pose, K: CameraIntrinsics):
    Pc = cam_to_world.inverse().apply(P_world)
    z = Pc[:, 2]
    zs = np.where(z > 0, z, 1.0)
    u = (K.fx * Pc[:, 0] + K.s * Pc[:, 1]) / zs + K.cx
    v = K.fy * Pc[:, 1] / zs + K.cy
    return np.stack([u, v], axis=1), z


class ProjectedPole(NamedTuple):
    pole_id: int
    endpoints: np.ndarray   # (2, 2) pixels, low then high
    visible: np.ndarray     # (2,) bool
    world: np.ndarray       # (2, 3)


def project_poles(poles: np.ndarray, prior: Pose, calib: MountCalibration, K: CameraIntrinsics,
                  attitude: AttitudeAngles = AttitudeAngles(), max_range: float | None = None
                  ) -> list[ProjectedPole]:
    """Project pole endpoints into the image at the prior pose.

    Endpoints with non-positive camera depth or outside the image bounds are
    marked invisible; poles with no visible endpoint are omitted.
    """
    poles = np.asarray(poles, dtype=float).reshape(-1, 4)
    if len(poles) == 0:
        return []
    cam = prior @ camera_extrinsic(calib, attitude)
    ends = np.empty((2 * len(poles), 3))
    ends[0::2] = np.column_stack([poles[:, 0], poles[:, 1], poles[:, 2]])
    ends[1::2] = np.column_stack([poles[:, 0], poles[:, 1], poles[:, 3]])
    uv, z = _project(ends, cam, K)
    vis = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= K.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= K.height)
    if max_range is not None:
        vis &= z <= max_range
    out = []
    for i in range(len(poles)):
        v = vis[2 * i:2 * i + 2]
        if v.any():
            out.append(ProjectedPole(i, uv[2 * i:2 * i + 2], v.copy(), ends[2 * i:2 * i + 2]))
    return out


def associate_poles(projected: Sequence[ProjectedPole], lines: Sequence, gate: float = 30.0,
                    weight_src: Correspondences | None = None) -> Correspondences:
    """Pair each visible projected endpoint with its nearest observed line.

    All visible endpoints of a pole must pick the same line within ``gate``
    pixels, otherwise the pole is dropped.
    """
    out = weight_src if weight_src is not None else Correspondences(pole_gate=gate)
    coeffs = np.array([(ln.line if isinstance(ln, PoleLineObservation) else ln).coeffs()
                       for ln in lines]).reshape(-1, 3)
    pts, lns, ids = [], [], []
    unmatched = 0
    for pp in projected:
        n_vis = int(pp.visible.sum())
        if len(coeffs) == 0:
            unmatched += n_vis
            continue
        uv = pp.endpoints[pp.visible]
        dist = np.abs(uv @ coeffs[:, :2].T + coeffs[:, 2])
        best = dist.argmin(axis=1)
        if (best == best[0]).all() and (dist[np.arange(len(best)), best] < gate).all():
            for w in pp.world[pp.visible]:
                pts.append(w)
                lns.append(coeffs[best[0]])
                ids.append(pp.pole_id)
        else:
            unmatched += n_vis
    out.pole_pts = np.array(pts, dtype=float).reshape(-1, 3)
    out.pole_lines = np.array(lns, dtype=float).reshape(-1, 3)
    out.pole_ids = np.array(ids, dtype=np.int64)
    out.pole_unmatched = unmatched
    return out


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------

def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.column_stack([a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
                            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
                            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]])


def _residuals_T(corr: Correspondences, T: np.ndarray, cam_T: np.ndarray | None,
                 K: CameraIntrinsics | None, pole_weight: float) -> np.ndarray:
    R = T[:3, :3]
    t = T[:3, 3]
    parts = []
    if len(corr.pp_src):
        parts.append((corr.pp_src @ R.T + t - corr.pp_tgt).ravel())
    if len(corr.pl_src):
        w = corr.pl_src @ R.T + t - corr.pl_point
        parts.append(_cross(w, corr.pl_dir).ravel())
    if len(corr.pole_pts):
        if cam_T is None or K is None:
            raise ValueError("pole residuals need the camera extrinsic and intrinsics")
        C = T @ cam_T
        Pc = (corr.pole_pts - C[:3, 3]) @ C[:3, :3]
        z = Pc[:, 2]
        u = (K.fx * Pc[:, 0] + K.s * Pc[:, 1]) / z + K.cx
        v = K.fy * Pc[:, 1] / z + K.cy
        L = corr.pole_lines
        parts.append(pole_weight * (L[:, 0] * u + L[:, 1] * v + L[:, 2]))
    return np.concatenate(parts) if parts else np.zeros(0)


def residuals(corr: Correspondences, pose: Pose, cam_ext: Pose | None = None,
              K: CameraIntrinsics | None = None, pole_weight: float = DEFAULT_POLE_WEIGHT) -> np.ndarray:
    """Stacked residual vector: point-point (3 per pair), point-line (3 per
    pair, the cross product whose norm is the distance), pole (1 per endpoint,
    signed pixel distance times ``pole_weight``)."""
    cam_T = None if cam_ext is None else cam_ext.matrix()
    return _residuals_T(corr, pose.matrix(), cam_T, K, pole_weight)


def total_cost(corr: Correspondences, pose: Pose, cam_ext: Pose | None = None,
               K: CameraIntrinsics | None = None, pole_weight: float = DEFAULT_POLE_WEIGHT) -> tuple[float, np.ndarray]:
    """Sum of squared point-point distances, squared point-line distances and
    weighted squared pole endpoint-to-line distances at ``pose``."""
    r = residuals(corr, pose, cam_ext, K, pole_weight)
    return float(r @ r), r


@lru_cache(maxsize=8)
def _fd_perturbations(step: float) -> tuple:
    return tuple((Pose.exp(step * e).matrix(), Pose.exp(-step * e).matrix()) for e in np.eye(6))


def fd_jacobian(corr: Correspondences, pose: Pose, cam_ext=None, K=None, pole_weight=DEFAULT_POLE_WEIGHT,
                step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian w.r.t. the right twist ``pose @ exp(xi)``,
    ``xi = (omega, v)``."""
    T = pose.matrix()
    cam_T = None if cam_ext is None else cam_ext.matrix()
    cols = []
    for Ep, Em in _fd_perturbations(float(step)):
        rp = _residuals_T(corr, T @ Ep, cam_T, K, pole_weight)
        rm = _residuals_T(corr, T @ Em, cam_T, K, pole_weight)
        cols.append((rp - rm) / (2.0 * step))
    return np.stack(cols, axis=1) if cols[0].size else np.zeros((0, 6))


def _skew_rows(p: np.ndarray) -> np.ndarray:
    S = np.zeros((len(p), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -p[:, 2], p[:, 1]
    S[:, 1, 0], S[:, 1, 2] = p[:, 2], -p[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -p[:, 1], p[:, 0]
    return S


def analytic_jacobian(corr: Correspondences, pose: Pose, cam_ext=None, K=None,
                      pole_weight=DEFAULT_POLE_WEIGHT) -> np.ndarray:
    """Closed-form Jacobian matching :func:`fd_jacobian`."""
    R = pose.R
    blocks = []

    def world_block(p):
        J = np.empty((len(p), 3, 6))
        J[:, :, :3] = -R @ _skew_rows(p)
        J[:, :, 3:] = R
        return J

    if len(corr.pp_src):
        blocks.append(world_block(corr.pp_src).reshape(-1, 6))
    if len(corr.pl_src):
        blocks.append((-_skew_rows(corr.pl_dir) @ world_block(corr.pl_src)).reshape(-1, 6))
    if len(corr.pole_pts):
        q = pose.inverse().apply(corr.pole_pts)
        Re, te = cam_ext.R, cam_ext.translation
        Pc = (q - te) @ Re
        dq = np.empty((len(q), 3, 6))
        dq[:, :, :3] = _skew_rows(q)
        dq[:, :, 3:] = -np.eye(3)
        dP = Re.T @ dq
        X, Y, Z = Pc.T
        du = np.column_stack([K.fx / Z, K.s / Z, -(K.fx * X + K.s * Y) / Z**2])
        dv = np.column_stack([np.zeros_like(Z), K.fy / Z, -K.fy * Y / Z**2])
        L = corr.pole_lines
        g = pole_weight * (L[:, :1] * du + L[:, 1:2] * dv)
        blocks.append(np.einsum("ni,nij->nj", g, dP))
    return np.concatenate(blocks) if blocks else np.zeros((0, 6))


def _jacobian(corr, pose, cam_ext, K, cfg: "SolverConfig") -> np.ndarray:
    if cfg.jacobian == "analytic":
        return analytic_jacobian(corr, pose, cam_ext, K, cfg.pole_weight)
    return fd_jacobian(corr, pose, cam_ext, K, cfg.pole_weight, cfg.fd_step)


def gauss_newton_hessian(corr: Correspondences, pose: Pose, cam_ext=None, K=None,
                         pole_weight=DEFAULT_POLE_WEIGHT, step=1e-6) -> np.ndarray:
    J = fd_jacobian(corr, pose, cam_ext, K, pole_weight, step)
    return J.T @ J


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

@dataclass
class SolveStats:
    iterations: int = 0
    cost_trace: list = field(default_factory=list)
    initial_cost: float = 0.0
    final_cost: float = 0.0
    objective_prior: float = 0.0
    objective_final: float = 0.0
    n_point_point: int = 0
    n_point_line: int = 0
    n_pole: int = 0
    no_constraints: bool = False
    degenerate: bool = False
    hessian_ratio: float = 0.0
    null_direction: np.ndarray | None = None
    converged: bool = False
    restarted: bool = False


class FrameContext(NamedTuple):
    """Everything the solver needs to (re-)associate one frame."""

    local_points: np.ndarray
    pole_lines: list
    map: SemanticMap
    calib: MountCalibration
    K: CameraIntrinsics
    attitude: AttitudeAngles


def _associate(ctx: FrameContext, pose: Pose, cfg: SolverConfig) -> Correspondences:
    if cfg.use_lanes:
        corr = associate_lanes(ctx.local_points, pose, ctx.map, cfg)
    else:
        corr = Correspondences(lane_gate=cfg.lane_gate, pole_gate=cfg.pole_gate_px)
    if cfg.use_poles and len(ctx.map.poles):
        proj = project_poles(ctx.map.poles, pose, ctx.calib, ctx.K, ctx.attitude, cfg.pole_range)
        associate_poles(proj, ctx.pole_lines, cfg.pole_gate_px, weight_src=corr)
    return corr


def _objective(corr: Correspondences, pose: Pose, cam_ext, K, cfg: SolverConfig) -> float:
    # unmatched items pay the gate so leaving the gate is never a free win
    cost, _ = total_cost(corr, pose, cam_ext, K, cfg.pole_weight)
    per_lane = (cfg.lane_gate ** 2) * (int(cfg.use_point_point) + int(cfg.use_point_line))
    per_pole = (cfg.pole_weight * cfg.pole_gate_px) ** 2
    return cost + per_lane * corr.lane_unmatched + per_pole * corr.pole_unmatched


def _robust_weights(r: np.ndarray, scale: float | None) -> np.ndarray:
    if scale is None:
        return np.ones_like(r)
    a = np.abs(r)
    return np.where(a <= scale, 1.0, np.sqrt(scale / np.maximum(a, 1e-300)))


def optimize_pose(prior: Pose, ctx: FrameContext, cfg: SolverConfig = SolverConfig()
                  ) -> tuple[Pose, SolveStats]:
    """Levenberg-Marquardt refinement of ``prior`` against the semantic map.

    Correspondences are rebuilt after every accepted step. The returned pose
    never has a higher (gate-penalised) objective than the prior. With no
    correspondences at all the prior is returned with ``no_constraints`` set.

    Raises:
        NonFinite: residuals or Jacobian become NaN/inf.
    """
    cam_ext = camera_extrinsic(ctx.calib, ctx.attitude)
    stats = SolveStats()
    corr = _associate(ctx, prior, cfg)
    stats.objective_prior = _objective(corr, prior, cam_ext, ctx.K, cfg)
    if len(corr) == 0:
        stats.no_constraints = True
        stats.objective_final = stats.objective_prior
        return prior, stats

    stats.initial_cost = total_cost(corr, prior, cam_ext, ctx.K, cfg.pole_weight)[0]
    pose, corr, cost = _lm(prior, ctx, cfg, cam_ext, corr, stats)
    if cfg.restart and cfg.use_point_point and cfg.use_point_line and len(corr.pole_pts):
        # the point-point terms have discrete targets, so their cost is
        # periodic along the lane and the solve may stop in a neighbouring
        # basin; retry from the prior settling the smooth terms first
        alt = SolveStats(iterations=stats.iterations)
        smooth = replace(cfg, use_point_point=False)
        p2, _, _ = _lm(prior, ctx, smooth, cam_ext, _associate(ctx, prior, smooth), alt)
        p2, c2, cost2 = _lm(p2, ctx, cfg, cam_ext, _associate(ctx, p2, cfg), alt)
        best = _objective(corr, pose, cam_ext, ctx.K, cfg)
        if _objective(c2, p2, cam_ext, ctx.K, cfg) * cfg.restart_gain < best:
            pose, corr, cost = p2, c2, cost2
            stats.iterations = alt.iterations
            stats.cost_trace = alt.cost_trace
            stats.converged = alt.converged
        stats.restarted = True

    stats.final_cost = cost
    stats.objective_final = _objective(corr, pose, cam_ext, ctx.K, cfg)
    if stats.objective_final > stats.objective_prior:
        pose = prior
        corr = _associate(ctx, prior, cfg)
        stats.objective_final = stats.objective_prior
        stats.final_cost = total_cost(corr, prior, cam_ext, ctx.K, cfg.pole_weight)[0]
    stats.n_point_point = len(corr.pp_src)
    stats.n_point_line = len(corr.pl_src)
    stats.n_pole = len(corr.pole_pts)
    _flag_degeneracy(corr, pose, cam_ext, ctx.K, cfg, stats)
    return pose, stats


def _lm(pose: Pose, ctx: FrameContext, cfg: SolverConfig, cam_ext: Pose, corr: Correspondences,
        stats: SolveStats) -> tuple[Pose, Correspondences, float]:
    """LM iterations from ``pose``, sharing the iteration budget in ``stats``."""
    lam = cfg.initial_damping
    cost, r = total_cost(corr, pose, cam_ext, ctx.K, cfg.pole_weight)
    stats.cost_trace.append(cost)
    if cost <= EXACT_COST:
        stats.converged = True
        return pose, corr, cost
    while stats.iterations < cfg.max_iterations and len(corr):
        if not np.isfinite(r).all():
            raise NonFinite("non-finite residuals")
        J = _jacobian(corr, pose, cam_ext, ctx.K, cfg)
        if not np.isfinite(J).all():
            raise NonFinite("non-finite Jacobian")
        w = _robust_weights(r, cfg.huber_scale)
        Jw = J * w[:, None]
        H = Jw.T @ Jw
        g = Jw.T @ (w * r)
        solve = _damped_solver(H, g, cfg.null_ratio)
        stats.iterations += 1
        accepted = False
        while not accepted:
            delta = solve(lam)
            cand = pose @ Pose.exp(delta)
            c_new, r_new = total_cost(corr, cand, cam_ext, ctx.K, cfg.pole_weight)
            if np.isfinite(c_new) and c_new <= cost:
                accepted = True
                lam = max(lam / 3.0, 1e-12)
            else:
                lam *= 4.0
                if lam > 1e12:
                    break
        if not accepted:
            stats.converged = True
            break
        step_norm = float(np.linalg.norm(delta))
        drop = cost - c_new
        pose = cand
        corr = _associate(ctx, pose, cfg)
        cost, r = total_cost(corr, pose, cam_ext, ctx.K, cfg.pole_weight)
        stats.cost_trace.append(cost)
        if step_norm < cfg.step_tol or drop <= cfg.cost_tol * cost:
            stats.converged = True
            break
    return pose, corr, cost


def _damped_solver(H: np.ndarray, g: np.ndarray, null_ratio: float):
    """Marquardt step ``-(H + lam*diag(H))^-1 g`` computed in the diagonally
    scaled eigenbasis. Directions whose scaled eigenvalue is below
    ``null_ratio`` times the largest carry no information and get no step,
    so an unobservable direction keeps its prior value instead of drifting
    with the noise."""
    d = np.sqrt(np.maximum(np.diag(H), 1e-12 * max(float(np.diag(H).max()), 1e-300)))
    w, V = np.linalg.eigh(H / np.outer(d, d))
    keep = w > null_ratio * max(float(w[-1]), 1e-300)
    Vk = V[:, keep]
    proj = Vk.T @ (g / d)
    wk = w[keep]
    # the scaled solve is minimum-norm in the scaled metric, which can still
    # move along the null space; project that motion out in twist coordinates
    Q = np.linalg.qr(V[:, ~keep] / d[:, None])[0] if (~keep).any() else None

    def solve(lam: float) -> np.ndarray:
        step = -(Vk @ (proj / (wk + lam))) / d
        if Q is not None:
            step = step - Q @ (Q.T @ step)
        return step

    return solve


def _flag_degeneracy(corr, pose, cam_ext, K, cfg, stats):
    # point-point targets are discrete samples and would mask the along-lane
    # null space, so the rank test looks at the line and pole terms only
    structural = corr.without_point_point()
    if len(structural) == 0:
        stats.degenerate = True
        return
    H = gauss_newton_hessian(structural, pose, cam_ext, K, cfg.pole_weight, cfg.fd_step)
    _, s, vt = np.linalg.svd(H)
    stats.hessian_ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    if stats.hessian_ratio < cfg.degeneracy_ratio:
        stats.degenerate = True
        stats.null_direction = vt[-1]


# ---------------------------------------------------------------------------
# Sequence loop
# ---------------------------------------------------------------------------

@dataclass
class DatasetFrame:
    frame_id: int
    timestamp: float
    odometry: Pose
    attitude: AttitudeAngles
    lane_pixels: np.ndarray
    pole_lines: list

    def observation(self) -> SegmentationObservation:
        return SegmentationObservation(self.frame_id, self.timestamp, self.lane_pixels, self.pole_lines)


@dataclass
class FrameDiagnostics:
    frame_id: int
    timestamp: float
    lane_points: int
    rejected_pixels: int
    point_point: int
    point_line: int
    pole: int
    iterations: int
    initial_cost: float
    final_cost: float
    degraded: bool
    degenerate: bool


@dataclass
class LocalizationResult:
    timestamps: list
    poses: list
    diagnostics: list


def localize_sequence(frames: Sequence[DatasetFrame], m: SemanticMap, K: CameraIntrinsics,
                      calib: MountCalibration, cfg: SolverConfig = SolverConfig()) -> LocalizationResult:
    """Run the per-frame loop over a time-ordered dataset.

    A frame without usable constraints keeps its odometry prior and is marked
    ``degraded``; the sequence never aborts.
    """
    tiles = TileCache(m, cfg.map_radius)
    lm = LocalLaneMap(capacity=cfg.window, max_span=cfg.max_span)
    poses, stamps, diags = [], [], []
    T_prev = That_prev = None
    for fr in frames:
        if T_prev is None:
            prior = fr.odometry
            motion = Pose.identity()
        else:
            prior = prior_pose(T_prev, That_prev, fr.odometry)
            motion = That_prev.inverse() @ fr.odometry
        pts, rejected = lift_lane_pixels(fr.observation(), calib, K, fr.attitude,
                                         max_range=cfg.max_range, roll_center=cfg.roll_center)
        lm = push_local_map(lm, pts, motion)
        active = tiles.active(prior)
        ctx = FrameContext(lm.points(), list(fr.pole_lines), active, calib, K, fr.attitude)
        try:
            pose, st = optimize_pose(prior, ctx, cfg)
        except NonFinite as exc:
            log.warning("frame %s: %s; keeping prior", fr.frame_id, exc)
            pose, st = prior, SolveStats(no_constraints=True)
        poses.append(pose)
        stamps.append(fr.timestamp)
        diags.append(FrameDiagnostics(fr.frame_id, fr.timestamp, len(pts), rejected,
                                      st.n_point_point, st.n_point_line, st.n_pole, st.iterations,
                                      st.initial_cost, st.final_cost, st.no_constraints, st.degenerate))
        T_prev, That_prev = pose, fr.odometry
    return LocalizationResult(stamps, poses, diags)
