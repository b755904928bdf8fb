"""Trajectory error metrics and report formatting.

All metrics compare poses in the shared map frame without any alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NoOverlap, TooShort
from .geometry import Pose, quat_to_matrix

DEFAULT_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))
MATCH_TOLERANCE = 1e-3


class Trajectory:
    """Time-ordered poses with strictly increasing timestamps."""

    def __init__(self, timestamps: Sequence[float], poses: Sequence[Pose]):
        ts = np.asarray(timestamps, dtype=float).reshape(-1)
        if len(ts) != len(poses):
            raise ValueError("timestamps and poses differ in length")
        if len(ts) > 1 and not (np.diff(ts) > 0).all():
            raise ValueError("timestamps must be strictly increasing")
        self.timestamps = ts
        self.poses = list(poses)

    def __len__(self):
        return len(self.poses)

    @property
    def translations(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    @property
    def quaternions(self) -> np.ndarray:
        return np.array([p.rotation for p in self.poses]).reshape(-1, 4)


def match(est: Trajectory, gt: Trajectory, tol: float = MATCH_TOLERANCE) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of frames whose timestamps agree within ``tol`` seconds.

    Raises:
        NoOverlap: nothing matches.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoOverlap("empty trajectory")
    j = np.searchsorted(gt.timestamps, est.timestamps)
    lo = np.clip(j - 1, 0, len(gt) - 1)
    hi = np.clip(j, 0, len(gt) - 1)
    d_lo = np.abs(gt.timestamps[lo] - est.timestamps)
    d_hi = np.abs(gt.timestamps[hi] - est.timestamps)
    nearest = np.where(d_hi < d_lo, hi, lo)
    ok = np.minimum(d_lo, d_hi) <= tol
    ie = np.flatnonzero(ok)
    if ie.size == 0:
        raise NoOverlap("no timestamps match within tolerance")
    return ie, nearest[ie]


def _rel_angles(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    # geodesic angle of qa^-1 qb: 2*acos(|<qa, qb>|)
    dot = np.abs(np.einsum("ij,ij->i", qa, qb))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def _yaws(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q.T
    return np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _rmse(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(math.sqrt(np.mean(v * v))) if v.size else 0.0


def frame_errors(est: Trajectory, gt: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame translation error (m) and geodesic rotation error (deg)."""
    ie, ig = match(est, gt)
    dt = np.linalg.norm(est.translations[ie] - gt.translations[ig], axis=1)
    dr = np.degrees(_rel_angles(est.quaternions[ie], gt.quaternions[ig]))
    return dt, dr


def ate(est: Trajectory, gt: Trajectory) -> tuple[float, float]:
    """Absolute trajectory error: (translation RMSE m, rotation RMSE deg)."""
    dt, dr = frame_errors(est, gt)
    return _rmse(dt), _rmse(dr)


def ate_yaw(est: Trajectory, gt: Trajectory) -> float:
    """RMSE of the heading (yaw) difference in degrees."""
    ie, ig = match(est, gt)
    return _rmse(np.degrees(_wrap(_yaws(est.quaternions[ie]) - _yaws(gt.quaternions[ig]))))


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1) -> float:
    """Translation RMSE of relative motions ``inv(E_k) E_{k+delta}`` against
    the ground-truth counterparts, over matched frames.

    Raises:
        TooShort: not more than ``delta`` matched frames.
    """
    if delta < 1:
        raise ValueError("delta must be at least 1")
    ie, ig = match(est, gt)
    if len(ie) <= delta:
        raise TooShort(f"{len(ie)} matched frames, delta {delta}")
    errs = []
    for k in range(len(ie) - delta):
        de = est.poses[ie[k]].inverse() @ est.poses[ie[k + delta]]
        dg = gt.poses[ig[k]].inverse() @ gt.poses[ig[k + delta]]
        errs.append(np.linalg.norm((dg.inverse() @ de).translation))
    return _rmse(errs)


def recall_at(est: Trajectory, gt: Trajectory, thresholds=DEFAULT_THRESHOLDS) -> list[float]:
    """Percentage of frames with translation error ``<= m`` and rotation
    error ``<= deg`` for each ``(m, deg)`` threshold."""
    dt, dr = frame_errors(est, gt)
    return [100.0 * float(np.mean((dt <= m) & (dr <= d))) for m, d in thresholds]


def error_decomposition(est: Trajectory, gt: Trajectory) -> np.ndarray:
    """Per-frame ``(lateral m, longitudinal m, heading deg)``.

    The translation error is expressed in the ground-truth vehicle frame
    (x forward, y left): longitudinal is along x, lateral along y (positive
    to the left). Heading is the wrapped yaw difference ``est - gt``.
    """
    ie, ig = match(est, gt)
    out = np.empty((len(ie), 3))
    for n, (a, b) in enumerate(zip(ie, ig)):
        R = quat_to_matrix(gt.quaternions[b])
        e = R.T @ (est.translations[a] - gt.translations[b])
        out[n, 0] = e[1]
        out[n, 1] = e[0]
    out[:, 2] = np.degrees(_wrap(_yaws(est.quaternions[ie]) - _yaws(gt.quaternions[ig])))
    return out


@dataclass
class MetricsReport:
    frames: int
    ate_trans: float
    ate_rot: float
    ate_yaw: float
    rpe_trans: float
    recall: list = field(default_factory=list)          # (m, deg, percent)
    lateral_rmse: float = 0.0
    longitudinal_rmse: float = 0.0
    heading_rmse: float = 0.0
    decomposition: np.ndarray | None = None

    def values(self) -> list[tuple[str, float]]:
        rows = [("frames", self.frames), ("ate_trans_m", self.ate_trans), ("ate_rot_deg", self.ate_rot),
                ("ate_yaw_deg", self.ate_yaw), ("rpe_trans_m", self.rpe_trans)]
        rows += [(f"recall_{m:g}m_{d:g}deg_pct", p) for m, d, p in self.recall]
        rows += [("lateral_rmse_m", self.lateral_rmse), ("longitudinal_rmse_m", self.longitudinal_rmse),
                 ("heading_rmse_deg", self.heading_rmse)]
        return rows


def compute_report(est: Trajectory, gt: Trajectory, thresholds=DEFAULT_THRESHOLDS,
                   delta: int = 1) -> MetricsReport:
    ie, _ = match(est, gt)
    t, r = ate(est, gt)
    dec = error_decomposition(est, gt)
    try:
        rp = rpe(est, gt, delta)
    except TooShort:
        rp = float("nan")
    rec = recall_at(est, gt, thresholds)
    return MetricsReport(len(ie), t, r, ate_yaw(est, gt), rp,
                         [(m, d, p) for (m, d), p in zip(thresholds, rec)],
                         _rmse(dec[:, 0]), _rmse(dec[:, 1]), _rmse(dec[:, 2]), dec)


def format_table(rep: MetricsReport) -> str:
    rows = rep.values()
    w = max(len(k) for k, _ in rows)
    lines = [f"{'metric':<{w}}  value", f"{'-' * w}  ------------"]
    for k, v in rows:
        lines.append(f"{k:<{w}}  {v}" if isinstance(v, int) else f"{k:<{w}}  {v:.6f}")
    return "\n".join(lines) + "\n"


def format_tsv(rep: MetricsReport) -> str:
    return "".join(f"{k}\t{v}\n" if isinstance(v, int) else f"{k}\t{v:.9f}\n" for k, v in rep.values())


def format_report(rep: MetricsReport) -> str:
    """Human-readable table as ``#`` comment lines, then ``name<TAB>value``."""
    table = "".join(f"# {ln}\n" for ln in format_table(rep).splitlines())
    return table + format_tsv(rep)


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        k, v = line.split("\t")
        out[k] = float(v)
    return out
