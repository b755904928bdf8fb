"""Global semantic map: lane points, vertical poles, spatial index and tiling.

On-disk format (``SEMMAP 1``)::

    SEMMAP 1
    # comment
    L <x> <y> <z>
    P <x> <y> <z_low> <z_high>

Text, LF line endings, six decimal places.
"""

from __future__ import annotations

import io
import math
import os
from typing import Iterable, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, Insufficient, VersionError
from .geometry import Pose

MAP_HEADER = "SEMMAP"
MAP_VERSION = 1
TILE_SIZE = 50.0


class Pole(NamedTuple):
    x: float
    y: float
    z_low: float
    z_high: float

    def endpoints(self) -> np.ndarray:
        return np.array([[self.x, self.y, self.z_low], [self.x, self.y, self.z_high]])


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class SemanticMap:
    """Read-only collection of lane points and poles.

    ``lane_points`` is ``(N, 3)``; ``poles`` is ``(M, 4)`` with rows
    ``(x, y, z_low, z_high)``. The KD-tree over lane points is built on first
    query and never mutated afterwards.
    """

    def __init__(self, lane_points=None, poles=None, tile_size: float = TILE_SIZE):
        lp = np.zeros((0, 3)) if lane_points is None else np.asarray(lane_points, dtype=float)
        pl = np.zeros((0, 4)) if poles is None else np.asarray(poles, dtype=float)
        lp = lp.reshape(-1, 3).copy()
        pl = pl.reshape(-1, 4).copy()
        if not np.isfinite(lp).all() or not np.isfinite(pl).all():
            raise ValueError("map coordinates must be finite")
        if len(pl) and not (pl[:, 3] > pl[:, 2]).all():
            raise ValueError("pole z_high must exceed z_low")
        if tile_size <= 0:
            raise ValueError("tile_size must be positive")
        self.lane_points = _readonly(lp)
        self.poles = _readonly(pl)
        self.tile_size = float(tile_size)
        self._tree = None
        self._lane_tiles = None

    def __len__(self):
        return len(self.lane_points)

    def __repr__(self):
        return f"SemanticMap({len(self.lane_points)} lane points, {len(self.poles)} poles)"

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.lane_points if len(self.lane_points) else np.zeros((0, 3)))
        return self._tree

    def pole_list(self) -> list[Pole]:
        return [Pole(*map(float, row)) for row in self.poles]

    def tile_of(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return np.floor(xy / self.tile_size).astype(np.int64)

    @property
    def lane_tiles(self) -> np.ndarray:
        if self._lane_tiles is None:
            self._lane_tiles = _readonly(self.tile_of(self.lane_points[:, :2]))
        return self._lane_tiles

    def nearest(self, points: np.ndarray, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Batched k-NN over lane points: ``(distances, indices)`` shaped ``(N, k)``."""
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(self.lane_points) < k:
            raise Insufficient(f"map has {len(self.lane_points)} lane points, {k} requested")
        d, i = self.tree.query(P, k=k)
        return d.reshape(len(P), k), i.reshape(len(P), k)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def dumps_map(m: SemanticMap) -> str:
    lines = [f"{MAP_HEADER} {MAP_VERSION}"]
    lines.extend(f"L {x:.6f} {y:.6f} {z:.6f}" for x, y, z in m.lane_points.tolist())
    lines.extend(f"P {x:.6f} {y:.6f} {a:.6f} {b:.6f}" for x, y, a, b in m.poles.tolist())
    return "\n".join(lines) + "\n"


def map_save(m: SemanticMap, destination) -> bytes:
    """Write ``m`` to a path or binary/text stream; returns the bytes written."""
    data = dumps_map(m).encode("ascii")
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as fh:
            fh.write(data)
    elif isinstance(destination, io.TextIOBase):
        destination.write(data.decode("ascii"))
    else:
        destination.write(data)
    return data


def parse_header(first: str, name: str, version: int, line_no: int = 1) -> None:
    parts = first.split()
    if len(parts) != 2 or parts[0] != name:
        raise FormatError(f"expected '{name} {version}' header, got {first!r}", line_no)
    try:
        v = int(parts[1])
    except ValueError:
        raise FormatError(f"bad version field {parts[1]!r}", line_no) from None
    if v != version:
        raise VersionError(f"{name} version {v} is not supported (expected {version})")


def _floats(fields: list[str], n: int, line_no: int) -> list[float]:
    if len(fields) != n:
        raise FormatError(f"expected {n} values, got {len(fields)}", line_no)
    try:
        vals = [float(f) for f in fields]
    except ValueError:
        raise FormatError(f"non-numeric value in {fields}", line_no) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError("non-finite coordinate", line_no)
    return vals


def loads_map(text: str, tile_size: float = TILE_SIZE) -> SemanticMap:
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise FormatError("empty map stream", 1)
    parse_header(lines[0].strip(), MAP_HEADER, MAP_VERSION)
    lanes, poles = [], []
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *fields = line.split()
        if tag == "L":
            lanes.append(_floats(fields, 3, no))
        elif tag == "P":
            x, y, lo, hi = _floats(fields, 4, no)
            if not hi > lo:
                raise FormatError("pole z_high must exceed z_low", no)
            poles.append((x, y, lo, hi))
        else:
            raise FormatError(f"unknown record type {tag!r}", no)
    return SemanticMap(np.array(lanes).reshape(-1, 3), np.array(poles).reshape(-1, 4), tile_size)


def map_load(source, tile_size: float = TILE_SIZE) -> SemanticMap:
    """Read a ``SEMMAP 1`` map from a path or stream.

    Raises:
        FormatError: malformed record (message carries the line number).
        VersionError: unsupported header version.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if isinstance(data, bytes):
        data = data.decode("ascii")
    return loads_map(data, tile_size)


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def _sq_dist(P: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = P - c
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


def query_radius(m: SemanticMap, center, radius: float) -> np.ndarray:
    """Lane points within Euclidean distance ``<= radius`` of ``center``,
    in map order."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(m) == 0:
        return np.zeros((0, 3))
    c = np.asarray(center, dtype=float).reshape(3)
    cand = np.array(sorted(m.tree.query_ball_point(c, radius * (1.0 + 1e-9) + 1e-12)), dtype=np.int64)
    if cand.size == 0:
        return np.zeros((0, 3))
    keep = cand[_sq_dist(m.lane_points[cand], c) <= radius * radius]
    return m.lane_points[keep].copy()


def query_k_nearest(m: SemanticMap, center, k: int) -> np.ndarray:
    """The ``k`` nearest lane points, ascending distance; equal distances are
    ordered lexicographically by ``(x, y, z)``.

    Raises:
        Insufficient: map has fewer than ``k`` lane points.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(m) < k:
        raise Insufficient(f"map has {len(m)} lane points, {k} requested")
    c = np.asarray(center, dtype=float).reshape(3)
    d, _ = m.tree.query(c, k=k)
    dk = float(np.atleast_1d(d)[-1])
    cand = np.array(m.tree.query_ball_point(c, dk * (1.0 + 1e-9) + 1e-12), dtype=np.int64)
    P = m.lane_points[cand]
    d2 = _sq_dist(P, c)
    order = np.lexsort((P[:, 2], P[:, 1], P[:, 0], d2))
    return P[order[:k]].copy()


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------

def tiles_in_range(m: SemanticMap, pose: Pose, radius: float) -> set[tuple[int, int]]:
    """Ids of all tiles whose square intersects the disc of ``radius`` around
    the pose translation."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    cx, cy = float(pose.translation[0]), float(pose.translation[1])
    ts = m.tile_size
    out = set()
    for i in range(math.floor((cx - radius) / ts), math.floor((cx + radius) / ts) + 1):
        dx = max(i * ts - cx, 0.0, cx - (i + 1) * ts)
        for j in range(math.floor((cy - radius) / ts), math.floor((cy + radius) / ts) + 1):
            dy = max(j * ts - cy, 0.0, cy - (j + 1) * ts)
            if dx * dx + dy * dy <= radius * radius:
                out.add((i, j))
    return out


def _tile_mask(tiles: np.ndarray, ids: Iterable[tuple[int, int]]) -> np.ndarray:
    ids = np.array(sorted(ids), dtype=np.int64).reshape(-1, 2)
    if len(tiles) == 0 or len(ids) == 0:
        return np.zeros(len(tiles), dtype=bool)
    # pack (i, j) into a single key for a vectorised membership test
    key = lambda a: a[:, 0] * (1 << 32) + (a[:, 1] & 0xFFFFFFFF)
    return np.isin(key(tiles), key(ids))


def load_tiles(m: SemanticMap, ids: Iterable[tuple[int, int]]) -> SemanticMap:
    """Sub-map holding exactly the lane points and poles of the given tiles."""
    ids = list(ids)
    lane_mask = _tile_mask(m.lane_tiles, ids)
    pole_mask = _tile_mask(m.tile_of(m.poles[:, :2]), ids) if len(m.poles) else np.zeros(0, bool)
    return SemanticMap(m.lane_points[lane_mask], m.poles[pole_mask], m.tile_size)


class TileCache:
    """Keeps the active sub-map for the current tile set, rebuilding it only
    when the set changes."""

    def __init__(self, m: SemanticMap, radius: float):
        self.map = m
        self.radius = radius
        self._ids = None
        self._active = None
        self.loads = 0

    def active(self, pose: Pose) -> SemanticMap:
        ids = frozenset(tiles_in_range(self.map, pose, self.radius))
        if ids != self._ids:
            self._ids = ids
            self._active = load_tiles(self.map, ids)
            self.loads += 1
        return self._active


def poles_in_view(m: SemanticMap, camera_pose: Pose, K, max_range: float) -> list[Pole]:
    """Poles whose midpoint projects inside the image at a camera depth in
    ``(0, max_range]``. ``camera_pose`` maps camera coordinates to world."""
    if len(m.poles) == 0:
        return []
    mid = np.column_stack([m.poles[:, 0], m.poles[:, 1], 0.5 * (m.poles[:, 2] + m.poles[:, 3])])
    Pc = camera_pose.inverse().apply(mid)
    z = Pc[:, 2]
    zs = np.where(z > 0, z, 1.0)
    u = (K.fx * Pc[:, 0] + K.s * Pc[:, 1]) / zs + K.cx
    v = K.fy * Pc[:, 1] / zs + K.cy
    keep = (z > 0) & (z <= max_range) & (u >= 0) & (u <= K.width) & (v >= 0) & (v <= K.height)
    return [Pole(*map(float, m.poles[i])) for i in np.flatnonzero(keep)]
