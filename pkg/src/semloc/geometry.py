"""Rigid transforms, line primitives, distances and robust line fitting.

Rotations are stored as unit quaternions in ``(x, y, z, w)`` order. Every
type here is immutable; functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInput

_EPS = 1e-12


# ---------------------------------------------------------------------------
# Quaternion / rotation helpers
# ---------------------------------------------------------------------------

def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product ``q1 * q2`` of two xyzw quaternions."""
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to a unit xyzw quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    return q / np.linalg.norm(q)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation vector to xyzw quaternion."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < 1e-8:
        # second-order series keeps the result unit-norm after normalisation
        q = np.array([0.5 * omega[0], 0.5 * omega[1], 0.5 * omega[2], 1.0 - theta * theta / 8.0])
        return q / np.linalg.norm(q)
    axis = omega / theta
    s = np.sin(0.5 * theta)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(0.5 * theta)])


def so3_log(q: np.ndarray) -> np.ndarray:
    """xyzw quaternion to rotation vector with angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[3] < 0:
        q = -q
    v = q[:3]
    n = np.linalg.norm(v)
    if n < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(n, q[3])
    return v / n * angle


def rotation_angle(q: np.ndarray) -> float:
    """Geodesic angle (radians) of the rotation encoded by ``q``."""
    q = np.asarray(q, dtype=float)
    return float(2.0 * np.arctan2(np.linalg.norm(q[:3]), abs(q[3])))


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid 3D transform mapping points from a child frame into a parent frame.

    ``rotation`` is a unit quaternion ``(x, y, z, w)``; ``translation`` is in
    meters. ``a @ b`` applies ``b`` first, then ``a``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < _EPS:
            raise DegenerateInput("rotation quaternion has zero norm")
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        q = q / n
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R: np.ndarray, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        half = 0.5 * yaw
        return cls(np.array([0.0, 0.0, np.sin(half), np.cos(half)]), np.array([x, y, z]))

    @classmethod
    def exp(cls, xi: np.ndarray) -> "Pose":
        """SE(3) exponential of a twist ``(omega, v)`` (rotation first)."""
        xi = np.asarray(xi, dtype=float)
        omega, v = xi[:3], xi[3:]
        theta = np.linalg.norm(omega)
        W = skew(omega)
        if theta < 1e-8:
            V = np.eye(3) + 0.5 * W
        else:
            V = (np.eye(3) + (1.0 - np.cos(theta)) / theta**2 * W
                 + (theta - np.sin(theta)) / theta**3 * (W @ W))
        return cls(so3_exp(omega), V @ v)

    def log(self) -> np.ndarray:
        omega = so3_log(self.rotation)
        theta = np.linalg.norm(omega)
        W = skew(omega)
        if theta < 1e-8:
            V_inv = np.eye(3) - 0.5 * W
        else:
            half = 0.5 * theta
            V_inv = (np.eye(3) - 0.5 * W
                     + (1.0 - half * np.cos(half) / np.sin(half)) / theta**2 * (W @ W))
        return np.concatenate([omega, V_inv @ self.translation])

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def yaw(self) -> float:
        R = self.R
        return float(np.arctan2(R[1, 0], R[0, 0]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        q = self.rotation
        q_inv = np.array([-q[0], -q[1], -q[2], q[3]])
        return Pose(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        if not isinstance(other, Pose):
            return NotImplemented
        t = self.R @ other.translation + self.translation
        return Pose(quat_multiply(self.rotation, other.rotation), t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector) of points."""
        P = np.asarray(points, dtype=float)
        return P @ self.R.T + self.translation

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(q=[{q}], t=[{t}])"


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Return ``a @ b``: apply ``b`` then ``a``."""
    return a @ b


def pose_inverse(p: Pose) -> Pose:
    return p.inverse()


def pose_difference(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance (m) and geodesic rotation angle (rad) between two poses."""
    rel = a.inverse() @ b
    return float(np.linalg.norm(a.translation - b.translation)), rotation_angle(rel.rotation)


# ---------------------------------------------------------------------------
# Lines
# ---------------------------------------------------------------------------

class PixelPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class Line3D:
    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float).reshape(3).copy()
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if n < _EPS:
            raise DegenerateInput("line direction has zero length")
        d = d / n
        p.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class ImageLine:
    """Image line ``a*u + b*v + c = 0`` with ``a**2 + b**2 == 1``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        n = float(np.hypot(self.a, self.b))
        if n < _EPS:
            raise DegenerateInput("image line normal has zero length")
        object.__setattr__(self, "a", float(self.a) / n)
        object.__setattr__(self, "b", float(self.b) / n)
        object.__setattr__(self, "c", float(self.c) / n)

    @classmethod
    def through(cls, p1, p2) -> "ImageLine":
        (u1, v1), (u2, v2) = p1, p2
        if u1 == u2 and v1 == v2:
            raise DegenerateInput("coincident points")
        return cls(v1 - v2, u2 - u1, u1 * v2 - u2 * v1)

    def coeffs(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])


def point_to_line_distance_3d(p, line: Line3D) -> float:
    d = np.asarray(p, dtype=float) - line.point
    return float(np.linalg.norm(np.cross(d, line.direction)))


def point_to_line_distance_2d(p, line: ImageLine) -> float:
    u, v = p
    return abs(line.a * u + line.b * v + line.c)


def _canonical_sign(vec: np.ndarray) -> np.ndarray:
    # deterministic orientation: largest-magnitude component positive
    i = int(np.argmax(np.abs(vec)))
    return -vec if vec[i] < 0 else vec


def fit_line_lsq_2d(points: Sequence) -> ImageLine:
    """Total-least-squares image line through ``points``.

    The normal is the minor principal axis of the centered points, so the fit
    minimises perpendicular rather than vertical residuals.

    Raises:
        DegenerateInput: fewer than two points, or all points coincide.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(P) < 2:
        raise DegenerateInput("need at least two points")
    centroid = P.mean(axis=0)
    Q = P - centroid
    scale = np.abs(Q).max()
    if scale <= _EPS * max(1.0, np.abs(centroid).max()):
        raise DegenerateInput("all points coincide")
    _, _, vt = np.linalg.svd(Q / scale, full_matrices=False)
    normal = _canonical_sign(vt[-1])
    return ImageLine(normal[0], normal[1], -float(normal @ centroid))


def fit_line_lsq_3d(points: Sequence) -> Line3D:
    """Line through the centroid along the principal direction of ``points``.

    Raises:
        DegenerateInput: fewer than two points, or all points coincide.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < 2:
        raise DegenerateInput("need at least two points")
    centroid = P.mean(axis=0)
    Q = P - centroid
    scale = np.abs(Q).max()
    if scale <= _EPS * max(1.0, np.abs(centroid).max()):
        raise DegenerateInput("all points coincide")
    _, _, vt = np.linalg.svd(Q / scale, full_matrices=False)
    return Line3D(centroid, _canonical_sign(vt[0]))


def distances_to_line_3d(P: np.ndarray, line: Line3D) -> np.ndarray:
    d = np.asarray(P, dtype=float) - line.point
    return np.linalg.norm(np.cross(d, line.direction), axis=1)


def ransac_line_3d(points, iterations: int = 100, inlier_threshold: float = 0.1,
                   seed: int = 0) -> tuple[Line3D, np.ndarray]:
    """RANSAC 3D line: 2-point hypotheses, one least-squares refinement.

    The hypothesis with the most inliers wins (earliest on ties). The returned
    inlier indices are those within ``inlier_threshold`` of the refined line.

    Raises:
        DegenerateInput: fewer than two points, all coincident, or
            non-positive threshold.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < 2:
        raise DegenerateInput("need at least two points")
    if inlier_threshold <= 0:
        raise DegenerateInput("inlier threshold must be positive")
    rng = np.random.default_rng(seed)
    n = len(P)
    best_count = -1
    best_mask = None
    for _ in range(max(1, int(iterations))):
        i, j = rng.choice(n, size=2, replace=False)
        d = P[j] - P[i]
        length = np.linalg.norm(d)
        if length < _EPS:
            continue
        d = d / length
        dist = np.linalg.norm(np.cross(P - P[i], d), axis=1)
        mask = dist <= inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None:
        raise DegenerateInput("no non-degenerate hypothesis found")
    if best_count < 2:
        best_mask = np.ones(n, dtype=bool)
    line = fit_line_lsq_3d(P[best_mask])
    inliers = np.flatnonzero(distances_to_line_3d(P, line) <= inlier_threshold)
    return line, inliers
