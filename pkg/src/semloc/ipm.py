"""Pixel-to-ground reconstruction.

Camera frame: x right, y down, z forward. The "level" frame shares the camera
origin but has its y axis pointing straight down at the ground, which lies at
``y = h``. Ground points are returned in the level frame, so ``y == h``.

Angle conventions (all radians):

* pitch > 0 tilts the optical axis upward,
* yaw > 0 turns the optical axis to the right (toward +x),
* roll > 0 turns the camera body counter-clockwise as seen from behind, so
  image content appears rotated clockwise.

With these signs the compensation formulas keep the ``+`` signs of the
classic derivation: the level-frame ray of a camera ray ``r`` is
``Ry(yaw) @ Rx(pitch) @ Rz(-roll) @ r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import AboveHorizon, BehindCamera, NoIntersection, RangeExceeded
from .geometry import PixelPoint, Pose, rot_x, rot_y, rot_z

HORIZON_EPS = 1.0
MAX_RANGE = 30.0

# Nominal camera-to-vehicle rotation: camera z -> vehicle x (forward),
# camera x -> vehicle -y (right), camera y -> vehicle -z (down).
R_CAM_TO_VEHICLE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

OK, ABOVE_HORIZON, RANGE_EXCEEDED = 0, 1, 2


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    s: float = 0.0
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.s, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def principal_point(self) -> PixelPoint:
        return PixelPoint(self.cx, self.cy)


@dataclass(frozen=True)
class AttitudeAngles:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            if not abs(getattr(self, name)) < math.pi / 2:
                raise ValueError(f"{name} must lie in (-pi/2, pi/2)")

    def __add__(self, other: "AttitudeAngles") -> "AttitudeAngles":
        return AttitudeAngles(self.roll + other.roll, self.pitch + other.pitch, self.yaw + other.yaw)

    @classmethod
    def degrees(cls, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> "AttitudeAngles":
        return cls(math.radians(roll), math.radians(pitch), math.radians(yaw))


@dataclass(frozen=True)
class MountCalibration:
    """Camera mounting: height above ground, fixed angular deviations and the
    level camera-to-vehicle extrinsic."""

    height: float
    deviation: AttitudeAngles = field(default_factory=AttitudeAngles)
    extrinsic: Pose = None

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError("camera height must be positive")
        if self.extrinsic is None:
            object.__setattr__(self, "extrinsic",
                               Pose.from_rt(R_CAM_TO_VEHICLE, (0.0, 0.0, self.height)))

    @classmethod
    def standard(cls, height: float = 1.5, forward: float = 0.0,
                 deviation: AttitudeAngles | None = None) -> "MountCalibration":
        ext = Pose.from_rt(R_CAM_TO_VEHICLE, (forward, 0.0, height))
        return cls(height, deviation or AttitudeAngles(), ext)


class GroundPoint(NamedTuple):
    x: float
    y: float
    z: float


def camera_rotation(angles: AttitudeAngles) -> np.ndarray:
    """Rotation taking camera-frame rays into the level frame."""
    return rot_y(angles.yaw) @ rot_x(angles.pitch) @ rot_z(-angles.roll)


# ---------------------------------------------------------------------------
# Forward projection
# ---------------------------------------------------------------------------

def project_pinhole_many(P: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project ``(N, 3)`` camera-frame points; returns ``(uv, in_front)``."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    z = P[:, 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    u = (K.fx * P[:, 0] + K.s * P[:, 1]) / zs + K.cx
    v = K.fy * P[:, 1] / zs + K.cy
    uv = np.stack([u, v], axis=1)
    uv[~ok] = np.nan
    return uv, ok


def project_pinhole(p, K: CameraIntrinsics) -> PixelPoint:
    """Pinhole projection of a camera-frame point.

    Raises:
        BehindCamera: ``p[2] <= 0``.
    """
    x, y, z = (float(c) for c in p)
    if z <= 0:
        raise BehindCamera(f"depth {z} is not positive")
    return PixelPoint((K.fx * x + K.s * y) / z + K.cx, K.fy * y / z + K.cy)


# ---------------------------------------------------------------------------
# Vanilla IPM
# ---------------------------------------------------------------------------

def ipm_vanilla_many(uv: np.ndarray, K: CameraIntrinsics, h: float,
                     horizon_eps: float = HORIZON_EPS) -> tuple[np.ndarray, np.ndarray]:
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    du = uv[:, 0] - K.cx
    dv = uv[:, 1] - K.cy
    ok = dv > horizon_eps
    dvs = np.where(ok, dv, 1.0)
    z = h * K.fy / dvs
    tan_u = (K.fy * du - K.s * dv) / (K.fx * K.fy)
    out = np.stack([z * tan_u, np.full_like(z, h), z], axis=1)
    out[~ok] = np.nan
    return out, ok


def ipm_vanilla(px, K: CameraIntrinsics, h: float, horizon_eps: float = HORIZON_EPS) -> GroundPoint:
    """Flat-ground IPM for a level camera at height ``h``.

    Raises:
        AboveHorizon: ``v <= c_y + horizon_eps``.
    """
    out, ok = ipm_vanilla_many(np.array([px], dtype=float), K, h, horizon_eps)
    if not ok[0]:
        raise AboveHorizon(f"pixel {tuple(px)} is at or above the horizon")
    return GroundPoint(*out[0])


# ---------------------------------------------------------------------------
# Enhanced IPM with attitude compensation
# ---------------------------------------------------------------------------

def compensate_roll_many(uv: np.ndarray, roll_total: float, center=(0.0, 0.0)) -> np.ndarray:
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    if roll_total == 0.0:
        return uv.copy()
    c, s = math.cos(roll_total), math.sin(roll_total)
    du = uv[:, 0] - center[0]
    dv = uv[:, 1] - center[1]
    return np.stack([c * du + s * dv + center[0], -s * du + c * dv + center[1]], axis=1)


def compensate_roll(px, roll_total: float, center=(0.0, 0.0)) -> PixelPoint:
    """Rotate ``px`` about ``center`` by the matrix ``[[cos, sin], [-sin, cos]]``."""
    out = compensate_roll_many(np.array([px], dtype=float), roll_total, center)
    return PixelPoint(*out[0])


def ipm_enhanced_many(uv: np.ndarray, K: CameraIntrinsics, calib: MountCalibration,
                      angles: AttitudeAngles, *, max_range: float = MAX_RANGE,
                      roll_center: str = "principal",
                      horizon_eps: float = HORIZON_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised enhanced IPM.

    Returns ``(points, status)`` with status ``OK``, ``ABOVE_HORIZON`` or
    ``RANGE_EXCEEDED`` per pixel; rejected rows are NaN.
    """
    total = calib.deviation + angles
    center = (K.cx, K.cy) if roll_center == "principal" else (0.0, 0.0)
    uv2 = compensate_roll_many(uv, total.roll, center)
    du = uv2[:, 0] - K.cx
    dv = uv2[:, 1] - K.cy
    h = calib.height

    tan_u = (K.fy * du - K.s * dv) / (K.fx * K.fy)
    # z' = h * tan(theta(v') + pitch) with tan(theta(v')) = f_y / (v' - c_y),
    # multiplied through by (v' - c_y) so the horizon is a sign test.
    tp = math.tan(total.pitch)
    num = K.fy + dv * tp
    den = dv - K.fy * tp
    ok = (den > horizon_eps) & (num > 0)
    z = h * num / np.where(ok, den, 1.0)

    ty = math.tan(total.yaw)
    yaw_den = 1.0 - ty * tan_u
    ok &= yaw_den > 0
    x = z * (ty + tan_u) / np.where(yaw_den > 0, yaw_den, 1.0)

    status = np.where(ok, OK, ABOVE_HORIZON)
    far = ok & (z > max_range)
    status[far] = RANGE_EXCEEDED
    out = np.stack([x, np.full_like(z, h), z], axis=1)
    out[status != OK] = np.nan
    return out, status


def ipm_enhanced(px, K: CameraIntrinsics, calib: MountCalibration, angles: AttitudeAngles,
                 *, max_range: float = MAX_RANGE, roll_center: str = "principal",
                 horizon_eps: float = HORIZON_EPS) -> GroundPoint:
    """IPM with roll, pitch and yaw compensation (mount deviation + attitude).

    Roll is undone by rotating the pixel in the image plane, pitch enters the
    depth through ``tan(theta(v') + pitch)`` and yaw the lateral offset through
    ``tan(theta(u') + yaw)``. With every angle zero this is exactly
    :func:`ipm_vanilla`.

    ``roll_center="origin"`` rotates about pixel ``(0, 0)`` instead of the
    principal point.

    Raises:
        AboveHorizon: the compensated ray does not reach the ground ahead.
        RangeExceeded: the ground point lies farther than ``max_range``.
    """
    out, status = ipm_enhanced_many(np.array([px], dtype=float), K, calib, angles,
                                    max_range=max_range, roll_center=roll_center,
                                    horizon_eps=horizon_eps)
    if status[0] == ABOVE_HORIZON:
        raise AboveHorizon(f"pixel {tuple(px)} does not reach the ground ahead")
    if status[0] == RANGE_EXCEEDED:
        raise RangeExceeded(f"pixel {tuple(px)} maps beyond {max_range} m")
    return GroundPoint(*out[0])


# ---------------------------------------------------------------------------
# Exact ray/plane oracle
# ---------------------------------------------------------------------------

def _as_rotation_matrix(rotation) -> np.ndarray:
    if isinstance(rotation, Pose):
        return rotation.R
    if isinstance(rotation, AttitudeAngles):
        return camera_rotation(rotation)
    R = np.asarray(rotation, dtype=float)
    if R.shape == (4,):
        return Pose(R, np.zeros(3)).R
    return R


def ipm_exact_many(uv: np.ndarray, K: CameraIntrinsics, h: float, rotation) -> tuple[np.ndarray, np.ndarray]:
    R = _as_rotation_matrix(rotation)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    y_n = (uv[:, 1] - K.cy) / K.fy
    x_n = (uv[:, 0] - K.cx - K.s * y_n) / K.fx
    rays = np.stack([x_n, y_n, np.ones_like(x_n)], axis=1) @ R.T
    ok = rays[:, 1] > 1e-12
    t = h / np.where(ok, rays[:, 1], 1.0)
    out = rays * t[:, None]
    ok &= out[:, 2] > 0
    out[:, 1] = h
    out[~ok] = np.nan
    return out, ok


def ipm_exact_oracle(px, K: CameraIntrinsics, h: float, rotation) -> GroundPoint:
    """Exact ground intersection of the pixel ray for a rotated camera.

    ``rotation`` (a :class:`Pose`, quaternion, 3x3 matrix or
    :class:`AttitudeAngles`) maps camera rays into the level frame.

    Raises:
        NoIntersection: the ray does not meet the ground in front of the camera.
    """
    out, ok = ipm_exact_many(np.array([px], dtype=float), K, h, rotation)
    if not ok[0]:
        raise NoIntersection(f"pixel {tuple(px)} ray misses the ground")
    return GroundPoint(*out[0])


def project_ground_exact(P_level: np.ndarray, K: CameraIntrinsics, rotation) -> tuple[np.ndarray, np.ndarray]:
    """Forward direction of the oracle: level-frame points to pixels."""
    R = _as_rotation_matrix(rotation)
    P_cam = np.asarray(P_level, dtype=float).reshape(-1, 3) @ R
    return project_pinhole_many(P_cam, K)


# ---------------------------------------------------------------------------
# Oracle sweeps
# ---------------------------------------------------------------------------

def pixel_grid(K: CameraIntrinsics, n: int = 100, v_start: float | None = None) -> np.ndarray:
    """``n x n`` grid over the image below the horizon band."""
    v0 = K.cy + 40.0 if v_start is None else v_start
    us = np.linspace(0.0, K.width - 1.0, n)
    vs = np.linspace(v0, K.height - 1.0, n)
    U, V = np.meshgrid(us, vs)
    return np.stack([U.ravel(), V.ravel()], axis=1)


def enhanced_vs_oracle_error(uv: np.ndarray, K: CameraIntrinsics, h: float,
                             angles: AttitudeAngles, max_range: float = 1e9) -> tuple[float, float]:
    """Max relative and absolute ground discrepancy between the enhanced model
    and the exact oracle over the pixels both accept."""
    calib = MountCalibration.standard(h)
    enh, status = ipm_enhanced_many(uv, K, calib, angles, max_range=max_range)
    ex, ok = ipm_exact_many(uv, K, h, camera_rotation(angles))
    both = (status == OK) & ok
    if not both.any():
        return 0.0, 0.0
    diff = np.linalg.norm(enh[both] - ex[both], axis=1)
    rng = np.linalg.norm(ex[both][:, [0, 2]], axis=1)
    return float((diff / rng).max()), float(diff.max())


def combined_error_at_range(K: CameraIntrinsics, h: float, angles: AttitudeAngles,
                            range_m: float = 20.0, lateral: float = 5.0, n: int = 41) -> float:
    """Max enhanced-vs-exact discrepancy, as a fraction of ``range_m``, for
    ground points ``range_m`` ahead with lateral offsets in ``[-lateral, lateral]``."""
    xs = np.linspace(-lateral, lateral, n)
    P = np.stack([xs, np.full(n, h), np.full(n, range_m)], axis=1)
    uv, front = project_ground_exact(P, K, camera_rotation(angles))
    calib = MountCalibration.standard(h)
    enh, status = ipm_enhanced_many(uv[front], K, calib, angles, max_range=1e9)
    good = status == OK
    diff = np.linalg.norm(enh[good] - P[front][good], axis=1)
    return float(diff.max() / range_m) if diff.size else 0.0


def oracle_sweep(K: CameraIntrinsics, h: float, *, grid_n: int = 100,
                 single_axis_deg: Iterable[float] = np.arange(-5.0, 5.0001, 0.5),
                 combined_deg: float = 2.0) -> dict:
    """Run the enhanced-vs-exact comparison sweeps and report max deviations."""
    uv = pixel_grid(K, grid_n)
    calib = MountCalibration.standard(h)
    van, ok_v = ipm_vanilla_many(uv, K, h)
    enh, st = ipm_enhanced_many(uv, K, calib, AttitudeAngles(), max_range=1e9)
    both = ok_v & (st == OK)
    report = {"zero_angle_abs": float(np.abs(van[both] - enh[both]).max()) if both.any() else 0.0}
    for axis in ("roll", "pitch", "yaw"):
        worst = 0.0
        for deg in single_axis_deg:
            rel, _ = enhanced_vs_oracle_error(uv, K, h, AttitudeAngles.degrees(**{axis: float(deg)}))
            worst = max(worst, rel)
        report[f"{axis}_rel"] = worst
    worst = 0.0
    for r in (-combined_deg, 0.0, combined_deg):
        for p in (-combined_deg, 0.0, combined_deg):
            for y in (-combined_deg, 0.0, combined_deg):
                worst = max(worst, combined_error_at_range(K, h, AttitudeAngles.degrees(r, p, y)))
    report["combined_frac_at_20m"] = worst
    return report


# ---------------------------------------------------------------------------
# BEV raster
# ---------------------------------------------------------------------------

def render_bev(points, resolution: float = 0.1, extent: float = 40.0) -> np.ndarray:
    """Top-down raster of ground points centred on the origin.

    ``points`` is an ``(N, 3)`` array of level-frame ground points (or
    ``(N, 2)`` of ``(x, z)``). Row 0 is the farthest forward range. Lit cells
    are 255 on a 0 background.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    half = int(round(extent / (2.0 * resolution)))
    size = 2 * half + 1
    img = np.zeros((size, size), dtype=np.uint8)
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return img
    P = P.reshape(len(P), -1)
    x, z = (P[:, 0], P[:, 2]) if P.shape[1] == 3 else (P[:, 0], P[:, 1])
    col = half + np.round(x / resolution).astype(np.int64)
    row = half - np.round(z / resolution).astype(np.int64)
    keep = (col >= 0) & (col < size) & (row >= 0) & (row < size)
    img[row[keep], col[keep]] = 255
    return img


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit binary PGM (P5)."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace byte before the raster
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
