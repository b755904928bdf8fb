import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_pose
from semloc.errors import NoOverlap, TooShort
from semloc.geometry import Pose
from semloc.metrics import (Trajectory, ate, ate_yaw, compute_report, error_decomposition,
                            format_report, parse_report, recall_at, rpe)

seeds = st.integers(0, 2**31 - 1)


def traj(*poses, t0=0.0):
    return Trajectory([t0 + k for k in range(len(poses))], list(poses))


def xyyaw(x, y, deg=0.0):
    return Pose.from_xyz_yaw(x, y, math.radians(deg))


@pytest.fixture
def toy():
    gt = traj(xyyaw(0, 0), xyyaw(1, 0), xyyaw(2, 0))
    est = traj(xyyaw(0, 0), xyyaw(1, 0.3), xyyaw(2, 0, 8.0))
    return est, gt


# ---------------------------------------------------------------------------
# Hand-worked three-pose fixture
# ---------------------------------------------------------------------------

def test_toy_ate(toy):
    t, r = ate(*toy)
    assert abs(t - math.sqrt(0.09 / 3)) < 1e-9
    assert abs(r - math.sqrt(64.0 / 3)) < 1e-9
    assert abs(ate_yaw(*toy) - math.sqrt(64.0 / 3)) < 1e-9


def test_toy_rpe(toy):
    # both relative motions are off by 0.3 m sideways in the GT step frame
    assert abs(rpe(*toy) - 0.3) < 1e-9
    # over two frames: est motion (2, 0) vs gt (2, 0)
    assert abs(rpe(*toy, delta=2)) < 1e-9


def test_toy_recall(toy):
    got = recall_at(*toy)
    assert got == pytest.approx([100 / 3, 200 / 3, 100.0], abs=1e-9)


def test_toy_decomposition(toy):
    d = error_decomposition(*toy)
    np.testing.assert_allclose(d, [[0, 0, 0], [0.3, 0, 0], [0, 0, 8.0]], atol=1e-9)


# ---------------------------------------------------------------------------
# Trivial cases
# ---------------------------------------------------------------------------

def test_identical_trajectories():
    rng = np.random.default_rng(0)
    gt = traj(*(random_pose(rng) for _ in range(10)))
    assert ate(gt, gt) == (0.0, 0.0)
    assert rpe(gt, gt) < 1e-12
    assert recall_at(gt, gt) == [100.0, 100.0, 100.0]
    assert np.abs(error_decomposition(gt, gt)).max() < 1e-12


def test_constant_offset():
    gt = traj(*(xyyaw(k, 0.0, 10.0 * k) for k in range(5)))
    est = traj(*(Pose.from_xyz_yaw(1.0, 0.0, 0.0) @ p for p in gt.poses))
    t, r = ate(est, gt)
    assert t == pytest.approx(1.0, abs=1e-12) and r < 1e-6


def test_single_frame_bracketing():
    gt = traj(xyyaw(0, 0))
    est = traj(xyyaw(0.3, 0, 1.0))
    assert recall_at(est, gt) == [0.0, 100.0, 100.0]


def test_cross_track_on_north_bound():
    gt = traj(xyyaw(0, 0, 90.0), xyyaw(0, 5, 90.0))
    est = traj(xyyaw(-0.5, 0, 90.0), xyyaw(-0.5, 5, 90.0))
    d = error_decomposition(est, gt)
    np.testing.assert_allclose(d[:, :2], [[0.5, 0.0], [0.5, 0.0]], atol=1e-12)


def test_45_degree_decomposition():
    gt = traj(xyyaw(3, 4, 45.0))
    est = traj(xyyaw(4, 4, 45.0))
    lat, lon, head = error_decomposition(est, gt)[0]
    assert lon == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert lat == pytest.approx(-math.sqrt(0.5), abs=1e-12)
    assert head == pytest.approx(0.0, abs=1e-12)


def test_errors():
    a = traj(xyyaw(0, 0))
    with pytest.raises(NoOverlap):
        ate(a, traj(xyyaw(0, 0), t0=5.0))
    with pytest.raises(TooShort):
        rpe(a, a)
    with pytest.raises(ValueError):
        Trajectory([1.0, 1.0], [Pose.identity()] * 2)


def test_timestamp_matching_tolerance():
    gt = Trajectory([0.0, 1.0], [xyyaw(0, 0), xyyaw(1, 0)])
    est = Trajectory([0.0005, 1.0], [xyyaw(0, 0), xyyaw(1, 0)])
    assert ate(est, gt) == (0.0, 0.0)
    with pytest.raises(NoOverlap):
        ate(Trajectory([0.5], [xyyaw(0, 0)]), gt)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

def random_pair(rng, n=30):
    gt = []
    p = Pose.identity()
    for _ in range(n):
        p = p @ Pose.from_xyz_yaw(rng.uniform(0.5, 2.0), rng.normal(0, 0.1), rng.normal(0, 0.1))
        gt.append(p)
    est = [g @ Pose.exp(np.r_[rng.normal(0, 0.05, 3), rng.normal(0, 0.5, 3)]) for g in gt]
    return traj(*est), traj(*gt)


def test_rpe_offset_invariant_and_ate_not():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        est, gt = random_pair(rng)
        G = random_pose(rng)
        moved = Trajectory(est.timestamps, [G @ p for p in est.poses])
        assert abs(rpe(moved, gt) - rpe(est, gt)) < 1e-9
        assert abs(ate(moved, gt)[0] - ate(est, gt)[0]) > 1e-3


def test_recall_monotone():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        est, gt = random_pair(rng)
        # nested thresholds from loose to tight
        nested = list(zip(sorted(rng.uniform(0, 2, 5), reverse=True),
                          sorted(rng.uniform(0, 10, 5), reverse=True)))
        rec = recall_at(est, gt, nested)
        assert all(b <= a for a, b in zip(rec, rec[1:]))
        assert all(0 <= r <= 100 for r in rec)


@given(seeds)
def test_recall_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    est, gt = random_pair(rng, 20)
    th = [(float(m), float(d)) for m, d in zip(rng.uniform(0, 2, 3), rng.uniform(0, 10, 3))]
    got = recall_at(est, gt, th)
    for (m, d), pct in zip(th, got):
        hits = 0
        for e, g in zip(est.poses, gt.poses):
            dt = float(np.linalg.norm(e.translation - g.translation))
            R = e.R.T @ g.R
            ang = math.degrees(math.acos(max(-1.0, min(1.0, (np.trace(R) - 1) / 2))))
            hits += dt <= m and ang <= d
        assert pct == pytest.approx(100.0 * hits / len(gt), abs=1e-9)


@given(seeds)
def test_decomposition_norm_matches_planar_error(seed):
    rng = np.random.default_rng(seed)
    gt = traj(*(Pose.from_xyz_yaw(*rng.uniform(-50, 50, 2), rng.uniform(-np.pi, np.pi)) for _ in range(10)))
    est = traj(*(Pose.from_xyz_yaw(*(g.translation[:2] + rng.normal(0, 1, 2)), g.yaw) for g in gt.poses))
    d = error_decomposition(est, gt)
    planar = np.linalg.norm(est.translations[:, :2] - gt.translations[:, :2], axis=1)
    np.testing.assert_allclose(np.hypot(d[:, 0], d[:, 1]), planar, atol=1e-9)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def test_report_round_trip(toy):
    rep = compute_report(*toy)
    text = format_report(rep)
    vals = parse_report(text)
    assert vals["frames"] == 3
    assert vals["ate_trans_m"] == pytest.approx(math.sqrt(0.03), abs=1e-9)
    assert vals["recall_0.25m_2deg_pct"] == pytest.approx(100 / 3, abs=1e-6)
    assert all(ln.startswith("#") or "\t" in ln for ln in text.splitlines())
