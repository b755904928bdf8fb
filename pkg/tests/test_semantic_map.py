import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import homogeneous
from semloc.errors import FormatError, Insufficient, VersionError
from semloc.geometry import Pose
from semloc.ipm import R_CAM_TO_VEHICLE, CameraIntrinsics
from semloc.semantic_map import (SemanticMap, TileCache, dumps_map, load_tiles, loads_map, map_load,
                                 map_save, poles_in_view, query_k_nearest, query_radius,
                                 tiles_in_range)

seeds = st.integers(0, 2**31 - 1)


def random_map(rng, n=None, extent=100.0, quantized=False):
    n = int(rng.integers(1, 2000)) if n is None else n
    P = rng.uniform(-extent, extent, (n, 3))
    P[:, 2] *= 0.01
    if quantized:
        # coarse grid so exact distance ties occur
        P = np.round(P)
    poles = np.column_stack([rng.uniform(-extent, extent, (5, 2)), rng.uniform(0, 1, 5),
                             rng.uniform(4, 8, 5)])
    return SemanticMap(P, poles)


# ---------------------------------------------------------------------------
# Format
# ---------------------------------------------------------------------------

def test_empty_map_round_trip(tmp_path):
    data = map_save(SemanticMap(), tmp_path / "m.semmap")
    assert data == b"SEMMAP 1\n"
    m = map_load(tmp_path / "m.semmap")
    assert len(m) == 0 and len(m.poles) == 0


def test_minimal_map_is_three_lines():
    m = SemanticMap([[1.0, 2.0, 0.0]], [[3.0, 4.0, 0.5, 6.0]])
    text = dumps_map(m)
    assert text == "SEMMAP 1\nL 1.000000 2.000000 0.000000\nP 3.000000 4.000000 0.500000 6.000000\n"


def _multiset(rows):
    return sorted(map(tuple, np.asarray(rows).tolist()))


def test_large_round_trip_equal_multisets():
    rng = np.random.default_rng(0)
    P = np.round(rng.uniform(-1000, 1000, (100_000, 3)), 6)
    m = SemanticMap(P, [[1.0, 1.0, 0.0, 5.0]])
    buf = io.BytesIO()
    map_save(m, buf)
    buf.seek(0)
    back = map_load(buf)
    assert _multiset(back.lane_points) == _multiset(P)
    assert _multiset(back.poles) == _multiset(m.poles)


@given(seeds)
def test_save_load_save_idempotent(seed):
    m = random_map(np.random.default_rng(seed), n=50)
    first = dumps_map(m)
    assert dumps_map(loads_map(first)) == first


def test_records_in_any_order_and_comments():
    m = loads_map("SEMMAP 1\n# hi\nP 0 0 0 1\nL 1 2 3\n\nL 4 5 6\n")
    assert len(m) == 2 and len(m.poles) == 1


@pytest.mark.parametrize("text,line", [
    ("SEMMAP 1\nL 1 2\n", 2),
    ("SEMMAP 1\nL 1 2 3\nQ 1 2 3\n", 3),
    ("SEMMAP 1\nP 0 0 5 1\n", 2),
    ("SEMMAP 1\nL 1 x 3\n", 2),
    ("SEMMAP 1\nL 1 nan 3\n", 2),
    ("LANES 1\n", 1),
])
def test_format_errors_carry_line(text, line):
    with pytest.raises(FormatError) as exc:
        loads_map(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_version_error():
    with pytest.raises(VersionError):
        loads_map("SEMMAP 2\n")


def test_invalid_map_contents():
    with pytest.raises(ValueError):
        SemanticMap([[0.0, np.inf, 0.0]])
    with pytest.raises(ValueError):
        SemanticMap(None, [[0.0, 0.0, 2.0, 1.0]])


def test_map_is_read_only():
    m = SemanticMap([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        m.lane_points[0, 0] = 5.0


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def test_query_radius_trivial():
    assert len(query_radius(SemanticMap(), (0, 0, 0), 5.0)) == 0
    m = SemanticMap([[3.0, 4.0, 0.0]])
    assert len(query_radius(m, (0, 0, 0), 4.99)) == 0
    assert len(query_radius(m, (0, 0, 0), 5.0)) == 1
    with pytest.raises(ValueError):
        query_radius(m, (0, 0, 0), 0.0)


@given(seeds)
def test_query_radius_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    m = random_map(rng, quantized=bool(seed % 2))
    for _ in range(20):
        c = rng.uniform(-100, 100, 3)
        r = float(rng.uniform(0.5, 30))
        got = query_radius(m, c, r)
        d2 = ((m.lane_points - c) ** 2).sum(axis=1)
        expect = m.lane_points[d2 <= r * r]
        assert np.array_equal(got, expect)


def test_query_k_nearest_trivial():
    m = SemanticMap([[1.0, 1.0, 1.0]])
    assert np.array_equal(query_k_nearest(m, (0, 0, 0), 1), [[1.0, 1.0, 1.0]])
    with pytest.raises(Insufficient):
        query_k_nearest(SemanticMap(np.eye(3).tolist() + [[0, 0, 0]]), (0, 0, 0), 5)


def test_query_k_nearest_tie_break():
    pts = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]
    got = query_k_nearest(SemanticMap(pts), (0, 0, 0), 3)
    assert got.tolist() == [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0]]


@given(seeds, st.integers(1, 12))
def test_query_k_nearest_matches_sorted_scan(seed, k):
    rng = np.random.default_rng(seed)
    m = random_map(rng, n=int(rng.integers(k, 500)), quantized=bool(seed % 2))
    for _ in range(10):
        c = np.round(rng.uniform(-100, 100, 3))
        P = m.lane_points
        d2 = ((P - c) ** 2).sum(axis=1)
        order = sorted(range(len(P)), key=lambda i: (d2[i], P[i, 0], P[i, 1], P[i, 2]))
        assert np.array_equal(query_k_nearest(m, c, k), P[order[:k]])


# ---------------------------------------------------------------------------
# Tiles
# ---------------------------------------------------------------------------

def test_tiles_center_and_corner():
    m = SemanticMap()
    assert tiles_in_range(m, Pose.from_xyz_yaw(25.0, 25.0, 0.0), 10.0) == {(0, 0)}
    assert tiles_in_range(m, Pose.from_xyz_yaw(50.0, 50.0, 0.0), 1.0) == {(0, 0), (0, 1), (1, 0), (1, 1)}


@given(seeds)
def test_tiles_cover_radius_query(seed):
    rng = np.random.default_rng(seed)
    m = random_map(rng, extent=200.0)
    for _ in range(10):
        pose = Pose.from_xyz_yaw(*rng.uniform(-200, 200, 2), 0.0)
        r = float(rng.uniform(1, 80))
        sub = load_tiles(m, tiles_in_range(m, pose, r))
        inside = set(map(tuple, query_radius(m, pose.translation * [1, 1, 0], r).tolist()))
        assert inside <= set(map(tuple, sub.lane_points.tolist()))


@given(seeds)
def test_tiling_partitions_map(seed):
    m = random_map(np.random.default_rng(seed), extent=300.0)
    ids = set(map(tuple, m.lane_tiles.tolist()))
    parts = [load_tiles(m, [t]) for t in ids]
    assert sum(len(p) for p in parts) == len(m)
    assert np.array_equal(m.lane_tiles, np.floor(m.lane_points[:, :2] / 50.0).astype(int))
    whole = load_tiles(m, ids | set(map(tuple, m.tile_of(m.poles[:, :2]).tolist())))
    assert _multiset(whole.lane_points) == _multiset(m.lane_points)
    assert len(whole.poles) == len(m.poles)


def test_tile_cache_reloads_only_on_change():
    m = random_map(np.random.default_rng(0), extent=200.0)
    cache = TileCache(m, 60.0)
    a = cache.active(Pose.from_xyz_yaw(0.0, 0.0, 0.0))
    b = cache.active(Pose.from_xyz_yaw(1.0, 0.0, 0.0))
    assert a is b and cache.loads == 1
    cache.active(Pose.from_xyz_yaw(150.0, 0.0, 0.0))
    assert cache.loads == 2


# ---------------------------------------------------------------------------
# Poles in view
# ---------------------------------------------------------------------------

def _cam_at(x, y, yaw):
    return Pose.from_xyz_yaw(x, y, yaw, 1.5) @ Pose.from_rt(R_CAM_TO_VEHICLE)


def test_poles_in_view_trivial(K):
    m = SemanticMap(None, [[10.0, 0.0, 0.0, 3.0], [-10.0, 0.0, 0.0, 3.0]])
    got = poles_in_view(m, _cam_at(0.0, 0.0, 0.0), K, 50.0)
    assert [p.x for p in got] == [10.0]


@pytest.mark.parametrize("seed", range(10))
def test_poles_in_view_matches_projection_oracle(seed, K):
    rng = np.random.default_rng(seed)
    poles = np.column_stack([rng.uniform(-60, 60, (200, 2)), rng.uniform(-1, 1, 200),
                             rng.uniform(2, 9, 200)])
    cam = _cam_at(*rng.uniform(-5, 5, 2), rng.uniform(-np.pi, np.pi))
    got = {(p.x, p.y) for p in poles_in_view(SemanticMap(None, poles), cam, K, 40.0)}
    Tinv = np.linalg.inv(homogeneous(cam))
    expect = set()
    for x, y, lo, hi in poles:
        pc = Tinv @ np.array([x, y, 0.5 * (lo + hi), 1.0])
        if not 0 < pc[2] <= 40.0:
            continue
        uvw = K.matrix() @ pc[:3]
        u, v = uvw[:2] / uvw[2]
        if 0 <= u <= K.width and 0 <= v <= K.height:
            expect.add((x, y))
    assert got == expect
