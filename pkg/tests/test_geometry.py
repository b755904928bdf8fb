import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from conftest import homogeneous, random_pose
from semloc.errors import DegenerateInput
from semloc.geometry import (ImageLine, Line3D, Pose, fit_line_lsq_2d, fit_line_lsq_3d,
                             point_to_line_distance_2d, point_to_line_distance_3d, pose_compose,
                             pose_difference, pose_inverse, ransac_line_3d, rotation_angle)

seeds = st.integers(0, 2**31 - 1)


def assert_pose_close(a: Pose, b: Pose, tol=1e-9):
    dt, dr = pose_difference(a, b)
    assert dt < tol and dr < tol


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

def test_compose_identity():
    p = random_pose(np.random.default_rng(1))
    assert_pose_close(pose_compose(Pose.identity(), p), p)
    assert_pose_close(pose_compose(p, Pose.identity()), p)


def test_compose_with_inverse_is_identity():
    p = random_pose(np.random.default_rng(2))
    assert_pose_close(pose_compose(p, pose_inverse(p)), Pose.identity())
    assert_pose_close(pose_compose(pose_inverse(p), p), Pose.identity())


@given(seeds)
def test_compose_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    np.testing.assert_allclose(homogeneous(pose_compose(a, b)), homogeneous(a) @ homogeneous(b),
                               atol=1e-9)


def test_inverse_identity_and_translation():
    assert_pose_close(pose_inverse(Pose.identity()), Pose.identity())
    inv = pose_inverse(Pose(np.array([0, 0, 0, 1.0]), np.array([1.0, 2.0, 3.0])))
    np.testing.assert_allclose(inv.translation, [-1, -2, -3], atol=1e-15)
    assert rotation_angle(inv.rotation) < 1e-15


@given(seeds)
def test_inverse_matches_matrix_inverse(seed):
    p = random_pose(np.random.default_rng(seed))
    np.testing.assert_allclose(homogeneous(pose_inverse(p)), np.linalg.inv(homogeneous(p)), atol=1e-9)


@given(seeds)
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    assert_pose_close((a @ b) @ c, a @ (b @ c))


@given(seeds)
def test_orientation_unit_norm(seed):
    rng = np.random.default_rng(seed)
    p = Pose(rng.normal(size=4) * 7.0, rng.normal(size=3))
    assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9
    assert abs(np.linalg.norm((p @ p.inverse() @ p).rotation) - 1.0) < 1e-9


def test_zero_quaternion_rejected():
    with pytest.raises(DegenerateInput):
        Pose(np.zeros(4), np.zeros(3))


@given(seeds)
def test_exp_log_round_trip(seed):
    rng = np.random.default_rng(seed)
    xi = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-5, 5, 3)])
    np.testing.assert_allclose(Pose.exp(xi).log(), xi, atol=1e-9)


def test_exp_matches_scipy_rotation():
    w = np.array([0.3, -0.2, 0.5])
    np.testing.assert_allclose(Pose.exp(np.r_[w, 0, 0, 0]).R, Rotation.from_rotvec(w).as_matrix(),
                               atol=1e-12)


def test_apply_matches_matrix():
    rng = np.random.default_rng(3)
    p = random_pose(rng)
    P = rng.normal(size=(20, 3))
    H = homogeneous(p)
    np.testing.assert_allclose(p.apply(P), P @ H[:3, :3].T + H[:3, 3], atol=1e-12)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def test_distance_3d_trivial():
    line = Line3D(np.zeros(3), np.array([0, 0, 1.0]))
    assert point_to_line_distance_3d([0, 0, 7.0], line) == 0.0
    assert point_to_line_distance_3d([0, 1.0, 0], line) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_distance_3d_dense_sampling_oracle(seed):
    rng = np.random.default_rng(seed)
    line = Line3D(rng.uniform(-1, 1, 3), rng.normal(size=3))
    p = rng.uniform(-1, 1, 3)
    s = np.linspace(-5.0, 5.0, 1_000_001)
    samples = line.point + s[:, None] * line.direction
    oracle = np.sqrt(((samples - p) ** 2).sum(axis=1)).min()
    assert abs(point_to_line_distance_3d(p, line) - oracle) < 1e-4


def test_distance_2d_trivial():
    assert point_to_line_distance_2d((5.0, 9.0), ImageLine(1.0, 0.0, 0.0)) == 5.0
    line = ImageLine.through((0.0, 0.0), (3.0, 4.0))
    assert point_to_line_distance_2d((6.0, 8.0), line) == pytest.approx(0.0, abs=1e-12)


@given(seeds)
def test_distance_2d_matches_3d_in_plane(seed):
    rng = np.random.default_rng(seed)
    p1, p2, q = rng.uniform(-100, 100, (3, 2))
    if np.linalg.norm(p1 - p2) < 1e-3:
        return
    d2 = point_to_line_distance_2d(q, ImageLine.through(p1, p2))
    d3 = point_to_line_distance_3d(np.r_[q, 0.0], Line3D(np.r_[p1, 0.0], np.r_[p2 - p1, 0.0]))
    assert d2 >= 0
    assert abs(d2 - d3) < 1e-9 * max(1.0, d3)


@given(seeds)
def test_distances_zero_on_line(seed):
    rng = np.random.default_rng(seed)
    line = Line3D(rng.uniform(-5, 5, 3), rng.normal(size=3))
    for s in rng.uniform(-10, 10, 5):
        assert point_to_line_distance_3d(line.point + s * line.direction, line) < 1e-9
    il = ImageLine(*rng.normal(size=3))
    u = rng.uniform(-100, 100)
    if abs(il.b) > 1e-3:
        v = -(il.a * u + il.c) / il.b
        assert point_to_line_distance_2d((u, v), il) < 1e-9


def test_image_line_normalized():
    il = ImageLine(3.0, 4.0, 10.0)
    assert il.a ** 2 + il.b ** 2 == pytest.approx(1.0, abs=1e-12)
    assert (il.a, il.b, il.c) == pytest.approx((0.6, 0.8, 2.0))
    with pytest.raises(DegenerateInput):
        ImageLine(0.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Line fitting
# ---------------------------------------------------------------------------

def test_fit_2d_exact():
    u = np.arange(10.0)
    line = fit_line_lsq_2d(np.column_stack([u, 2 * u]))
    for p in zip(u, 2 * u):
        assert point_to_line_distance_2d(p, line) < 1e-9


def test_fit_2d_two_points():
    line = fit_line_lsq_2d([(1.0, 2.0), (4.0, -3.0)])
    assert point_to_line_distance_2d((1.0, 2.0), line) < 1e-12
    assert point_to_line_distance_2d((4.0, -3.0), line) < 1e-12


def test_fit_2d_degenerate():
    with pytest.raises(DegenerateInput):
        fit_line_lsq_2d([(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)])
    with pytest.raises(DegenerateInput):
        fit_line_lsq_2d([(1.0, 1.0)])


def test_fit_2d_beats_angle_sweep_oracle():
    rng = np.random.default_rng(4)
    v = np.linspace(100.0, 400.0, 40)
    pts = np.column_stack([320.0 + 0.05 * v + rng.normal(0, 1.5, v.size), v])
    line = fit_line_lsq_2d(pts)
    fit_cost = sum(point_to_line_distance_2d(p, line) ** 2 for p in pts)
    c = pts.mean(axis=0)
    best = math.inf
    # for a fixed normal, the optimal offset passes through the centroid
    for ang in np.radians(np.arange(0.0, 180.0, 0.1)):
        n = np.array([math.cos(ang), math.sin(ang)])
        best = min(best, float((((pts - c) @ n) ** 2).sum()))
    assert fit_cost <= best + 1e-9


@given(seeds, st.floats(-math.pi, math.pi))
def test_fit_2d_rotation_equivariant(seed, ang):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(12, 2)) * [30.0, 3.0]
    R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    l0 = fit_line_lsq_2d(pts)
    l1 = fit_line_lsq_2d(pts @ R.T)
    # rotate the fitted line back: the normal transforms with R^T
    n = R.T @ np.array([l1.a, l1.b])
    back = np.array([n[0], n[1], l1.c])
    ref = l0.coeffs()
    assert min(np.abs(back - ref).max(), np.abs(back + ref).max()) < 1e-6


def test_fit_3d_collinear_and_two_points():
    pts = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3], [4, 4, 4.0]])
    line = fit_line_lsq_3d(pts)
    assert max(point_to_line_distance_3d(p, line) for p in pts) < 1e-9
    two = fit_line_lsq_3d(pts[:2])
    assert point_to_line_distance_3d(pts[4], two) < 1e-9
    with pytest.raises(DegenerateInput):
        fit_line_lsq_3d([[1, 2, 3], [1, 2, 3]])


def test_fit_3d_noisy_direction():
    rng = np.random.default_rng(5)
    d = np.array([1.0, 2.0, 0.5])
    d /= np.linalg.norm(d)
    s = np.linspace(0.0, 1.0, 50)
    pts = np.array([0.3, -0.2, 1.0]) + s[:, None] * d + rng.normal(0, 0.01, (50, 3))
    line = fit_line_lsq_3d(pts)
    assert math.degrees(math.acos(min(1.0, abs(line.direction @ d)))) < 1.0


def test_ransac_collinear_all_inliers():
    pts = np.column_stack([np.zeros(20), np.zeros(20), np.linspace(0, 5, 20)])
    _, inl = ransac_line_3d(pts, 10, 0.01, seed=0)
    assert len(inl) == 20


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(6)
    n_in = 90
    line_pts = np.column_stack([np.full(n_in, 2.0), np.full(n_in, -1.0), np.linspace(0, 6, n_in)])
    line_pts[:, :2] += rng.normal(0, 0.01, (n_in, 2))
    out = rng.uniform([-3, -5, 0], [7, 3, 6], (10, 3))
    far = np.hypot(out[:, 0] - 2.0, out[:, 1] + 1.0) > 0.1
    pts = np.vstack([line_pts, out])
    line, inl = ransac_line_3d(pts, 100, 0.1, seed=3)
    true_in = set(range(n_in))
    assert len(true_in & set(inl.tolist())) >= 0.95 * n_in
    assert not set((n_in + np.flatnonzero(far)).tolist()) & set(inl.tolist())


def test_ransac_deterministic():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(40, 3))
    a = ransac_line_3d(pts, 1, 0.5, seed=11)
    b = ransac_line_3d(pts, 1, 0.5, seed=11)
    assert np.array_equal(a[0].point, b[0].point) and np.array_equal(a[0].direction, b[0].direction)
    assert np.array_equal(a[1], b[1])


def test_ransac_bad_input():
    with pytest.raises(DegenerateInput):
        ransac_line_3d(np.zeros((1, 3)))
    with pytest.raises(DegenerateInput):
        ransac_line_3d(np.random.default_rng(0).normal(size=(5, 3)), inlier_threshold=0.0)
