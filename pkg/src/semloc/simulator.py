"""Deterministic synthetic worlds and sensor data.

A world is a road centerline made of straight and circular-arc segments with
lane-marking lines at fixed lateral offsets, optionally dashed, and vertical
poles beside the road. From it the simulator derives the ground-truth
semantic map, a labeled point cloud for the map builder, a vehicle
trajectory, per-frame segmentation observations rendered with the exact
rotated-camera model, and drifting odometry.

All randomness comes from ``numpy.random.default_rng`` seeded with explicit
integer tuples, so identical specs give identical outputs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInput
from .geometry import Pose, fit_line_lsq_2d
from .ipm import AttitudeAngles, CameraIntrinsics, MountCalibration, camera_rotation
from .localizer import DatasetFrame, OdometryFrame, PoleLineObservation, SegmentationObservation
from .map_builder import GROUND, OTHER, POLE, LabeledCloud
from .semantic_map import SemanticMap


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

class Segment(NamedTuple):
    """Centerline piece. ``radius`` is signed: positive turns left, 0 is straight."""

    length: float
    radius: float = 0.0

    @property
    def curvature(self) -> float:
        return 0.0 if self.radius == 0 else 1.0 / self.radius


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    segments: tuple = (Segment(100.0),)
    closed: bool = False
    lane_width: float = 3.5
    point_spacing: float = 0.5
    # dashing: lines are indexed 0 = left, 1 = right
    dash_period: float = 9.0
    dash_length: float = 3.0
    dashed_lines: tuple = ()
    dashed_segments: tuple | None = None
    pole_spacing: float = 20.0
    pole_height: tuple = (4.0, 8.0)
    pole_clearance: float = 1.5
    pole_sides: str = "alternate"
    pole_radius: float = 0.08
    # labeled cloud
    stripe_width: float = 0.15
    cloud_spacing: float = 0.1
    # finer sampling within ``marking_band`` of each line; 0 disables
    marking_spacing: float = 0.05
    marking_band: float = 0.3
    road_margin: float = 0.5
    clutter_points: int = 200

    def __post_init__(self):
        if self.point_spacing <= 0 or self.cloud_spacing <= 0 or self.pole_spacing <= 0:
            raise ValueError("spacings must be positive")
        if self.marking_spacing < 0 or self.marking_band < 0:
            raise ValueError("marking_spacing and marking_band must be non-negative")
        if self.lane_width <= 0 or self.dash_period <= 0:
            raise ValueError("lane_width and dash_period must be positive")
        if any(s.length < 0 for s in self.segments):
            raise ValueError("segment lengths must be non-negative")
        if self.pole_sides not in ("alternate", "both", "left", "right"):
            raise ValueError(f"unknown pole_sides {self.pole_sides!r}")

    @property
    def extent(self) -> float:
        return float(sum(s.length for s in self.segments))

    @property
    def line_offsets(self) -> tuple:
        return (self.lane_width / 2.0, -self.lane_width / 2.0)


@dataclass(frozen=True)
class NoiseSpec:
    pixel_sigma: float = 0.0
    dropout: float = 0.0
    odo_trans_sigma: float = 0.0    # per meter travelled, per axis
    odo_rot_sigma: float = 0.0      # yaw, radians per frame
    odo_scale_bias: float = 0.0     # fractional length error
    attitude_sigma: float = 0.0     # true camera jitter, radians
    attitude_report_sigma: float = 0.0  # extra noise on the reported angles

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v >= 0:
                raise ValueError(f"{k} must be non-negative")
        if self.dropout >= 1:
            raise ValueError("dropout must be below 1")


def stadium_segments(total: float = 1000.0, radius: float = 60.0) -> tuple:
    """Closed loop of two straights and two left half-turns of ``radius``."""
    straight = (total - 2 * math.pi * radius) / 2.0
    if straight <= 0:
        raise ValueError("loop too short for the radius")
    return (Segment(straight), Segment(math.pi * radius, radius),
            Segment(straight), Segment(math.pi * radius, radius))


def benchmark_world(seed: int = 7) -> WorldSpec:
    """1 km stadium loop, solid right line, left line dashed along the first
    straight, poles every 20 m on alternating sides."""
    return WorldSpec(seed=seed, segments=stadium_segments(), closed=True, point_spacing=0.1,
                     dashed_lines=(0,), dashed_segments=(0,))


# ---------------------------------------------------------------------------
# Centerline geometry
# ---------------------------------------------------------------------------

class RoadPath:
    """Arc-length parametrised centerline starting at the origin heading +x."""

    def __init__(self, segments: Sequence[Segment]):
        self.segments = tuple(Segment(*s) for s in segments)
        starts = [(0.0, 0.0, 0.0)]
        for seg in self.segments:
            x, y, h = starts[-1]
            starts.append(self._advance(x, y, h, seg.curvature, seg.length))
        self.starts = np.array(starts)
        self.s0 = np.concatenate([[0.0], np.cumsum([s.length for s in self.segments])])

    @property
    def length(self) -> float:
        return float(self.s0[-1])

    @staticmethod
    def _advance(x, y, h, k, s):
        if k == 0:
            return x + s * np.cos(h), y + s * np.sin(h), h + 0 * s
        return (x + (np.sin(h + k * s) - np.sin(h)) / k,
                y - (np.cos(h + k * s) - np.cos(h)) / k,
                h + k * s)

    def segment_index(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.s0, s, side="right") - 1
        return np.clip(idx, 0, max(len(self.segments) - 1, 0))

    def at(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(x, y, heading)`` at arc length ``s`` (array)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if not self.segments:
            z = np.zeros_like(s)
            return z, z.copy(), z.copy()
        i = self.segment_index(s)
        ds = s - self.s0[i]
        k = np.array([seg.curvature for seg in self.segments])[i]
        x0, y0, h0 = self.starts[i, 0], self.starts[i, 1], self.starts[i, 2]
        straight = k == 0
        ks = np.where(straight, 1.0, k)
        x = np.where(straight, x0 + ds * np.cos(h0), x0 + (np.sin(h0 + k * ds) - np.sin(h0)) / ks)
        y = np.where(straight, y0 + ds * np.sin(h0), y0 - (np.cos(h0 + k * ds) - np.cos(h0)) / ks)
        return x, y, h0 + k * ds

    def offset_points(self, s, offset) -> np.ndarray:
        x, y, h = self.at(s)
        offset = np.asarray(offset, dtype=float)
        return np.stack([x - offset * np.sin(h), y + offset * np.cos(h), np.zeros_like(x)], axis=1)

    def line_lengths(self, offset: float) -> np.ndarray:
        """Per-segment length of the marking line at lateral ``offset``."""
        return np.array([seg.length * (1.0 - seg.curvature * offset) for seg in self.segments])

    def line_to_center(self, t, offset: float) -> tuple[np.ndarray, np.ndarray]:
        """Map arc length ``t`` along an offset line to centerline arc length;
        also returns the segment index."""
        t = np.asarray(t, dtype=float)
        ll = self.line_lengths(offset)
        t0 = np.concatenate([[0.0], np.cumsum(ll)])
        i = np.clip(np.searchsorted(t0, t, side="right") - 1, 0, len(ll) - 1)
        scale = np.array([1.0 - seg.curvature * offset for seg in self.segments])[i]
        return self.s0[i] + (t - t0[i]) / scale, i


def _painted(spec: WorldSpec, line: int, t: np.ndarray, seg: np.ndarray) -> np.ndarray:
    if line not in spec.dashed_lines:
        return np.ones(t.shape, dtype=bool)
    # closed interval so that samples land on both dash ends
    on = np.mod(t + 1e-9, spec.dash_period) <= spec.dash_length + 2e-9
    if spec.dashed_segments is None:
        return on
    dashed_here = np.isin(seg, np.asarray(spec.dashed_segments, dtype=int))
    return on | ~dashed_here


def marking_samples(spec: WorldSpec, spacing: float, phase: float = 0.0,
                    path: RoadPath | None = None) -> np.ndarray:
    """Points on the painted parts of every marking line, ``spacing`` apart
    along each line starting at arc length ``phase``."""
    path = path or RoadPath(spec.segments)
    if path.length <= 0:
        return np.zeros((0, 3))
    out = []
    for li, off in enumerate(spec.line_offsets):
        total = float(path.line_lengths(off).sum())
        n = int(math.floor((total - phase) / spacing + 1e-9)) + 1
        t = phase + spacing * np.arange(max(n, 0))
        if spec.closed:
            t = t[t < total - 1e-9]
        s, seg = path.line_to_center(t, off)
        keep = _painted(spec, li, t, seg)
        out.append(path.offset_points(s[keep], off))
    return np.concatenate(out) if out else np.zeros((0, 3))


# ---------------------------------------------------------------------------
# World generation
# ---------------------------------------------------------------------------

def _pole_rows(spec: WorldSpec, path: RoadPath, rng: np.random.Generator) -> np.ndarray:
    if path.length <= 0:
        return np.zeros((0, 4))
    n = int(math.floor(path.length / spec.pole_spacing + 1e-9))
    if not spec.closed:
        n += 1
    s = spec.pole_spacing * (np.arange(n) + (0.5 if spec.closed else 0.0))
    s = s[s <= path.length]
    off = spec.lane_width / 2.0 + spec.pole_clearance
    if spec.pole_sides == "alternate":
        sides = [np.where(np.arange(len(s)) % 2 == 0, 1.0, -1.0)]
    elif spec.pole_sides == "both":
        sides = [np.ones(len(s)), -np.ones(len(s))]
    else:
        sides = [np.full(len(s), 1.0 if spec.pole_sides == "left" else -1.0)]
    rows = []
    for side in sides:
        p = path.offset_points(s, side * off)
        hi = rng.uniform(spec.pole_height[0], spec.pole_height[1], len(s))
        rows.append(np.column_stack([p[:, 0], p[:, 1], np.zeros(len(s)), hi]))
    return np.concatenate(rows)


def _jittered_grid(s_max: float, offsets: np.ndarray, sp: float, closed: bool,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_s = int(math.floor(s_max / sp)) + (0 if closed else 1)
    S, O = np.meshgrid(sp * np.arange(n_s), offsets, indexing="ij")
    S = S.ravel() + rng.uniform(-0.3, 0.3, S.size) * sp
    O = O.ravel() + rng.uniform(-0.3, 0.3, O.size) * sp
    return np.clip(S, 0.0, s_max), O


def _ground_cloud(spec: WorldSpec, path: RoadPath, rng: np.random.Generator):
    half = spec.lane_width / 2.0 + spec.road_margin
    sp = spec.cloud_spacing
    o = np.arange(-half, half + 1e-9, sp)
    fine = spec.marking_spacing > 0 and spec.marking_band > 0
    if fine:
        near = np.zeros(o.shape, dtype=bool)
        for off in spec.line_offsets:
            near |= np.abs(o - off) < spec.marking_band
        o = o[~near]
    S, O = _jittered_grid(path.length, o, sp, spec.closed, rng)
    if fine:
        fs, band = spec.marking_spacing, spec.marking_band
        for off in spec.line_offsets:
            fo = off + np.arange(-band + fs / 2.0, band, fs)
            S2, O2 = _jittered_grid(path.length, fo, fs, spec.closed, rng)
            S, O = np.concatenate([S, S2]), np.concatenate([O, O2])
    P = path.offset_points(S, O)
    intensity = np.clip(rng.normal(30.0, 5.0, len(P)), 0.0, 255.0)
    seg = path.segment_index(S)
    k = np.array([g.curvature for g in path.segments])[seg]
    for li, off in enumerate(spec.line_offsets):
        on_stripe = np.abs(O - off) <= spec.stripe_width / 2.0
        # arc length along the marking line of each sample
        ll = path.line_lengths(off)
        t0 = np.concatenate([[0.0], np.cumsum(ll)])
        t = t0[seg] + (S - path.s0[seg]) * (1.0 - k * off)
        paint = on_stripe & _painted(spec, li, t, seg)
        intensity[paint] = np.clip(rng.normal(200.0, 10.0, int(paint.sum())), 0.0, 255.0)
    return P, intensity


def _pole_cloud(spec: WorldSpec, poles: np.ndarray):
    pts = []
    ang = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
    ring = spec.pole_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    for x, y, lo, hi in poles:
        n = int(math.ceil((hi - lo) / 0.05)) + 1
        z = np.linspace(lo, hi, n)
        xy = np.tile(ring, (n, 1)) + (x, y)
        pts.append(np.column_stack([xy, np.repeat(z, len(ring))]))
    return np.concatenate(pts) if pts else np.zeros((0, 3))


def generate_world(spec: WorldSpec) -> tuple[SemanticMap, LabeledCloud]:
    """Ground-truth semantic map and a matching labeled cloud."""
    rng = np.random.default_rng((spec.seed, 0))
    path = RoadPath(spec.segments)
    if path.length <= 0:
        return SemanticMap(), LabeledCloud()
    lanes = marking_samples(spec, spec.point_spacing, 0.0, path)
    poles = _pole_rows(spec, path, rng)

    G, gi = _ground_cloud(spec, path, rng)
    Pp = _pole_cloud(spec, poles)
    # clutter: bushes well off the road
    n_c = spec.clutter_points
    sc = rng.uniform(0.0, path.length, n_c)
    oc = rng.choice([-1.0, 1.0], n_c) * rng.uniform(spec.lane_width / 2 + 4.0, spec.lane_width / 2 + 8.0, n_c)
    C = path.offset_points(sc, oc)
    C[:, 2] = rng.uniform(0.2, 2.0, n_c)
    positions = np.concatenate([G, Pp, C])
    intensity = np.concatenate([gi, np.full(len(Pp), 80.0), rng.uniform(0.0, 100.0, n_c)])
    labels = np.concatenate([np.full(len(G), GROUND), np.full(len(Pp), POLE), np.full(n_c, OTHER)])
    return SemanticMap(lanes, poles), LabeledCloud(positions, intensity, labels)


def generate_trajectory(spec: WorldSpec, speed: float, rate: float, noise: NoiseSpec = NoiseSpec(),
                        seed: int | None = None) -> list[tuple[Pose, AttitudeAngles]]:
    """Vehicle poses along the centerline at ``speed / rate`` spacing, with
    per-frame Gaussian camera attitude jitter."""
    if speed <= 0 or rate <= 0:
        raise ValueError("speed and rate must be positive")
    path = RoadPath(spec.segments)
    step = speed / rate
    if path.length <= 0:
        return []
    n = int(math.floor(path.length / step + 1e-9))
    if not spec.closed:
        n += 1
    s = step * np.arange(n)
    x, y, h = path.at(s)
    rng = np.random.default_rng((spec.seed if seed is None else seed, 1))
    jit = rng.normal(0.0, noise.attitude_sigma, (n, 3)) if noise.attitude_sigma > 0 else np.zeros((n, 3))
    return [(Pose.from_xyz_yaw(x[i], y[i], h[i]), AttitudeAngles(*jit[i])) for i in range(n)]


# ---------------------------------------------------------------------------
# Sensors
# ---------------------------------------------------------------------------

def camera_pose(pose: Pose, calib: MountCalibration, attitude: AttitudeAngles) -> tuple[np.ndarray, np.ndarray]:
    """World rotation and position of the deflected camera."""
    R = pose.R @ calib.extrinsic.R @ camera_rotation(calib.deviation + attitude)
    return R, pose.apply(calib.extrinsic.translation)


def _to_camera(P, R, t):
    return (np.asarray(P, dtype=float).reshape(-1, 3) - t) @ R


def _pixels(Pc, K: CameraIntrinsics):
    z = Pc[:, 2]
    return np.column_stack([(K.fx * Pc[:, 0] + K.s * Pc[:, 1]) / z + K.cx, K.fy * Pc[:, 1] / z + K.cy])


def _in_image(uv, K: CameraIntrinsics):
    return (uv[:, 0] >= 0) & (uv[:, 0] < K.width) & (uv[:, 1] >= 0) & (uv[:, 1] < K.height)


def synthesize_observation(m: SemanticMap, pose: Pose, attitude: AttitudeAngles, K: CameraIntrinsics,
                           calib: MountCalibration, noise: NoiseSpec = NoiseSpec(), seed=0, *,
                           lane_points: np.ndarray | None = None, max_range: float = 30.0,
                           pole_range: float = 50.0, min_pole_px: float = 15.0,
                           frame_id: int = 0, timestamp: float = 0.0) -> SegmentationObservation:
    """Render one segmentation frame with the exact camera model.

    Lane pixels come from ``lane_points`` (default: the map's lane points)
    whose level-frame forward distance is below ``max_range``. Each visible
    pole is sampled along its axis, the samples are perturbed and a line is
    fitted to them.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    R, t = camera_pose(pose, calib, attitude)
    deflect = camera_rotation(calib.deviation + attitude)

    W = m.lane_points if lane_points is None else np.asarray(lane_points, dtype=float).reshape(-1, 3)
    # cheap horizontal pre-filter before the projection
    if len(W):
        near = np.hypot(W[:, 0] - t[0], W[:, 1] - t[1]) <= max_range + 5.0
        W = W[near]
    Pc = _to_camera(W, R, t)
    forward = Pc @ deflect[2]        # level-frame z
    keep = (Pc[:, 2] > 0.1) & (forward < max_range - 1e-6)
    uv = _pixels(Pc[keep], K) if keep.any() else np.zeros((0, 2))
    uv = uv[_in_image(uv, K)]
    if noise.pixel_sigma > 0 and len(uv):
        uv = uv + rng.normal(0.0, noise.pixel_sigma, uv.shape)
    if noise.dropout > 0 and len(uv):
        uv = uv[rng.random(len(uv)) >= noise.dropout]
    uv = uv[_in_image(uv, K)]

    lines = []
    for x, y, lo, hi in m.poles:
        if math.hypot(x - t[0], y - t[1]) > pole_range + 1.0:
            continue
        n = max(2, int(math.ceil((hi - lo) / 0.1)) + 1)
        axis = np.column_stack([np.full(n, x), np.full(n, y), np.linspace(lo, hi, n)])
        Pa = _to_camera(axis, R, t)
        ok = (Pa[:, 2] > 0.5) & (Pa[:, 2] <= pole_range)
        if ok.sum() < 2:
            continue
        px = _pixels(Pa[ok], K)
        px = px[_in_image(px, K)]
        if len(px) < 2 or np.linalg.norm(px[-1] - px[0]) < min_pole_px:
            continue
        if noise.pixel_sigma > 0:
            px = px + rng.normal(0.0, noise.pixel_sigma, px.shape)
        try:
            line = fit_line_lsq_2d(px)
        except DegenerateInput:
            continue
        lines.append(PoleLineObservation(line, float(px[:, 1].min()), float(px[:, 1].max())))
    return SegmentationObservation(frame_id, timestamp, uv, lines)


def synthesize_odometry(gt: Sequence[Pose], noise: NoiseSpec = NoiseSpec(), seed=0,
                        timestamps: Sequence[float] | None = None,
                        attitudes: Sequence[AttitudeAngles] | None = None) -> list[OdometryFrame]:
    """Drifting odometry: each relative GT motion is scaled by the bias,
    perturbed in x/y (sigma proportional to the step length) and yaw, then
    re-composed from the GT start pose. Reported attitudes get their own
    noise when ``attitude_report_sigma > 0``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(gt)
    ts = list(timestamps) if timestamps is not None else [float(i) for i in range(n)]
    att = list(attitudes) if attitudes is not None else [AttitudeAngles()] * n
    out = []
    cur = None
    for k in range(n):
        if k == 0:
            cur = gt[0]
        else:
            d = gt[k - 1].inverse() @ gt[k]
            step = float(np.linalg.norm(d.translation))
            tr = d.translation * (1.0 + noise.odo_scale_bias)
            if noise.odo_trans_sigma > 0:
                tr = tr + np.r_[rng.normal(0.0, noise.odo_trans_sigma * step, 2), 0.0]
            dyaw = rng.normal(0.0, noise.odo_rot_sigma) if noise.odo_rot_sigma > 0 else 0.0
            rot = d.R @ Pose.from_xyz_yaw(0.0, 0.0, dyaw).R
            cur = cur @ Pose.from_rt(rot, tr)
        a = att[k]
        if noise.attitude_report_sigma > 0:
            a = a + AttitudeAngles(*rng.normal(0.0, noise.attitude_report_sigma, 3))
        out.append(OdometryFrame(ts[k], cur, a))
    return out


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationSpec:
    world: WorldSpec = field(default_factory=WorldSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    speed: float = 10.0
    rate: float = 10.0
    camera: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(1000.0, 1000.0, 640.0, 360.0))
    height: float = 1.5
    deviation: AttitudeAngles = field(default_factory=AttitudeAngles)
    # > 0: lane pixels come from markings resampled at this spacing with a
    # random phase each frame; 0: the map's own lane points are projected
    observation_spacing: float = 0.0
    max_range: float = 30.0
    pole_range: float = 50.0
    seed: int = 0

    def calibration(self) -> MountCalibration:
        return MountCalibration.standard(self.height, deviation=self.deviation)


def benchmark_spec(seed: int = 7) -> SimulationSpec:
    """Closed-loop benchmark: 1 km loop, 2 px pixel noise, 0.5 % odometry
    scale drift plus random odometry noise and small attitude jitter."""
    noise = NoiseSpec(pixel_sigma=2.0, dropout=0.1, odo_trans_sigma=0.002, odo_rot_sigma=2e-4,
                      odo_scale_bias=0.005, attitude_sigma=math.radians(0.2))
    return SimulationSpec(world=benchmark_world(seed), noise=noise,
                          deviation=AttitudeAngles(*np.radians([0.3, -0.5, 0.4])),
                          observation_spacing=0.4, seed=seed)


@dataclass
class GroundTruthBundle:
    map: SemanticMap
    cloud: LabeledCloud
    timestamps: list
    poses: list
    attitudes: list
    frames: list          # DatasetFrame, as the localizer sees them
    camera: CameraIntrinsics
    calib: MountCalibration


def simulate(spec: SimulationSpec) -> GroundTruthBundle:
    m, cloud = generate_world(spec.world)
    traj = generate_trajectory(spec.world, spec.speed, spec.rate, spec.noise, seed=spec.seed)
    poses = [p for p, _ in traj]
    atts = [a for _, a in traj]
    stamps = [round(k / spec.rate, 6) for k in range(len(traj))]
    calib = spec.calibration()
    odo = synthesize_odometry(poses, spec.noise, np.random.default_rng((spec.seed, 2)), stamps, atts)
    path = RoadPath(spec.world.segments)
    frames = []
    for k, (pose, att) in enumerate(traj):
        rng = np.random.default_rng((spec.seed, 3, k))
        lanes = None
        if spec.observation_spacing > 0:
            phase = float(rng.uniform(0.0, spec.observation_spacing))
            lanes = marking_samples(spec.world, spec.observation_spacing, phase, path)
        obs = synthesize_observation(m, pose, att, spec.camera, calib, spec.noise, rng,
                                     lane_points=lanes, max_range=spec.max_range,
                                     pole_range=spec.pole_range, frame_id=k, timestamp=stamps[k])
        frames.append(DatasetFrame(k, stamps[k], odo[k].pose, odo[k].attitude, obs.lane_pixels,
                                   obs.pole_lines))
    return GroundTruthBundle(m, cloud, stamps, poses, atts, frames, spec.camera, calib)


def export_dataset(bundle: GroundTruthBundle, destination: os.PathLike | str,
                   solver_config: dict | None = None) -> dict:
    """Write ``dataset.txt``, ``map.semmap``, ``cloud.txt``, ``gt.txt`` and
    ``config.cfg`` (camera and mount) into ``destination``. Returns the paths."""
    from .config import dump_config
    from .dataset import save_dataset, save_trajectory
    from .map_builder import save_cloud
    from .semantic_map import map_save

    out = Path(destination)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"dataset": out / "dataset.txt", "map": out / "map.semmap", "cloud": out / "cloud.txt",
             "gt": out / "gt.txt", "config": out / "config.cfg"}
    save_dataset(bundle.frames, paths["dataset"])
    map_save(bundle.map, paths["map"])
    save_cloud(bundle.cloud, paths["cloud"])
    save_trajectory(bundle.timestamps, bundle.poses, paths["gt"])
    cfg = camera_config(bundle.camera, bundle.calib)
    cfg.update(solver_config or {})
    paths["config"].write_text(dump_config(cfg))
    return paths


def camera_config(K: CameraIntrinsics, calib: MountCalibration) -> dict:
    dev = calib.deviation
    return {"camera.fx": K.fx, "camera.fy": K.fy, "camera.cx": K.cx, "camera.cy": K.cy,
            "camera.s": K.s, "camera.width": K.width, "camera.height": K.height,
            "mount.height": calib.height, "mount.roll": dev.roll, "mount.pitch": dev.pitch,
            "mount.yaw": dev.yaw}
