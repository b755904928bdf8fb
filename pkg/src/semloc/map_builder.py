"""Offline semantic-map construction from a registered, labeled point cloud.

Lane markings: ground points are binned into a bird's-eye-view grid whose
cells carry the mean reflectivity, the grid histogram is binarised with Otsu's
threshold, and the bright cells are back-projected to their source points.
Poles: pole-labeled points are split by Euclidean clustering and each cluster
is reduced to a vertical segment by a RANSAC line fit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import Degenerate, EmptyGround, FormatError, NotAPole, TooFewPoints
from .geometry import ransac_line_3d
from .semantic_map import Pole, SemanticMap, parse_header

GROUND, POLE, OTHER = 0, 1, 2
LABEL_CHARS = {GROUND: "G", POLE: "P", OTHER: "O"}
LABEL_CODES = {v: k for k, v in LABEL_CHARS.items()}
CLOUD_HEADER = "CLOUD"
CLOUD_VERSION = 1


class LabeledCloud:
    """Points with reflectivity in ``[0, 255]`` and a label in
    ``{GROUND, POLE, OTHER}``."""

    def __init__(self, positions=None, intensity=None, labels=None):
        P = np.zeros((0, 3)) if positions is None else np.asarray(positions, dtype=float)
        self.positions = P.reshape(-1, 3)
        n = len(self.positions)
        self.intensity = np.zeros(n) if intensity is None else np.asarray(intensity, dtype=float).reshape(n)
        self.labels = np.zeros(n, np.int8) if labels is None else np.asarray(labels, dtype=np.int8).reshape(n)
        if ((self.intensity < 0) | (self.intensity > 255)).any():
            raise ValueError("intensity outside [0, 255]")
        if not np.isin(self.labels, (GROUND, POLE, OTHER)).all():
            raise ValueError("unknown label")

    def __len__(self):
        return len(self.positions)

    def select(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def dumps_cloud(cloud: LabeledCloud) -> str:
    out = [f"{CLOUD_HEADER} {CLOUD_VERSION}"]
    chars = [LABEL_CHARS[int(c)] for c in cloud.labels]
    for (x, y, z), i, c in zip(cloud.positions.tolist(), cloud.intensity.tolist(), chars):
        out.append(f"{x:.6f} {y:.6f} {z:.6f} {i:.3f} {c}")
    return "\n".join(out) + "\n"


def save_cloud(cloud: LabeledCloud, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_cloud(cloud).encode("ascii"))


def loads_cloud(text: str) -> LabeledCloud:
    lines = text.split("\n")
    parse_header(lines[0].strip(), CLOUD_HEADER, CLOUD_VERSION)
    rows, labels = [], []
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        f = line.split()
        if len(f) != 5:
            raise FormatError(f"expected 5 fields, got {len(f)}", no)
        if f[4] not in LABEL_CODES:
            raise FormatError(f"unknown label {f[4]!r}", no)
        try:
            vals = [float(v) for v in f[:4]]
        except ValueError:
            raise FormatError("non-numeric field", no) from None
        if not all(math.isfinite(v) for v in vals) or not 0 <= vals[3] <= 255:
            raise FormatError("coordinate not finite or intensity out of range", no)
        rows.append(vals)
        labels.append(LABEL_CODES[f[4]])
    A = np.array(rows, dtype=float).reshape(-1, 4)
    return LabeledCloud(A[:, :3], A[:, 3], np.array(labels, dtype=np.int8))


def load_cloud(path) -> LabeledCloud:
    with open(path, "rb") as fh:
        return loads_cloud(fh.read().decode("ascii"))


# ---------------------------------------------------------------------------
# BEV grid
# ---------------------------------------------------------------------------

@dataclass
class BevGrid:
    """Occupied BEV cells of the ground points.

    ``cells[k]`` is the integer ``(col, row)`` of cell ``k`` relative to
    ``origin``; ``point_cell[j]`` maps ground point ``source[j]`` (an index
    into the cloud) to its cell. ``positions`` and ``intensities`` are the
    full cloud arrays that ``source`` indexes.
    """

    origin: np.ndarray
    resolution: float
    cells: np.ndarray
    intensity: np.ndarray
    source: np.ndarray
    point_cell: np.ndarray
    positions: np.ndarray
    intensities: np.ndarray

    def members(self, k: int) -> np.ndarray:
        return self.source[self.point_cell == k]

    def histogram(self) -> np.ndarray:
        return np.bincount(quantize_intensity(self.intensity), minlength=256)

    def to_image(self) -> np.ndarray:
        """Dense uint8 raster (row 0 at the smallest y)."""
        if len(self.cells) == 0:
            return np.zeros((0, 0), np.uint8)
        shape = self.cells.max(axis=0) + 1
        img = np.zeros((shape[1], shape[0]), np.uint8)
        img[self.cells[:, 1], self.cells[:, 0]] = quantize_intensity(self.intensity)
        return img


def quantize_intensity(values) -> np.ndarray:
    return np.floor(np.clip(np.asarray(values, dtype=float), 0.0, 255.0)).astype(np.int64)


def project_to_bev(cloud: LabeledCloud, resolution: float = 0.1) -> BevGrid:
    """Bin ground points by ``(x, y)``; cell intensity is the member mean.

    Raises:
        EmptyGround: no ground-labeled points.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    src = cloud.select(GROUND)
    if src.size == 0:
        raise EmptyGround("cloud has no ground points")
    xy = cloud.positions[src, :2]
    origin = np.floor(xy.min(axis=0) / resolution) * resolution
    ij = np.floor((xy - origin) / resolution).astype(np.int64)
    ij = np.maximum(ij, 0)
    width = int(ij[:, 0].max()) + 1
    keys = ij[:, 1] * width + ij[:, 0]
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv)
    sums = np.bincount(inv, weights=cloud.intensity[src])
    cells = np.stack([uniq % width, uniq // width], axis=1)
    return BevGrid(origin, float(resolution), cells, sums / counts, src, inv, cloud.positions,
                   cloud.intensity)


# ---------------------------------------------------------------------------
# Otsu
# ---------------------------------------------------------------------------

def _exact(c):
    c = float(c)
    return int(c) if c.is_integer() else Fraction(c)


def otsu_threshold(hist) -> int:
    """Threshold ``t`` maximising between-class variance for classes
    ``[0, t]`` and ``[t+1, 255]``; the smallest ``t`` wins ties.

    Evaluated in exact arithmetic so ties are genuine ties.

    Raises:
        Degenerate: fewer than two non-empty bins.
    """
    h = np.asarray(hist).reshape(-1)
    if len(h) != 256:
        raise ValueError("histogram must have 256 bins")
    if (h < 0).any():
        raise ValueError("negative bin count")
    if np.count_nonzero(h) < 2:
        raise Degenerate("all histogram mass lies in one bin")
    counts = [_exact(c) for c in h]
    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))
    n0 = s0 = 0
    best_t, best_num, best_den = None, 0, 1
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # omega0*omega1*(mu0-mu1)^2 up to the constant factor 1/total^2
        num = (s0 * n1 - (total_sum - s0) * n0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


LANE_MODES = ("cell", "bright_members", "brightest")


def extract_lane_points(grid: BevGrid, threshold: int, mode: str = "bright_members") -> np.ndarray:
    """Source positions of ground points in cells brighter than ``threshold``.

    ``mode`` selects which members of a bright cell are emitted:

    * ``"cell"``: every member.
    * ``"bright_members"``: members whose own intensity also exceeds the
      threshold, which drops asphalt points sharing a cell with paint.
    * ``"brightest"``: only the brightest member (lowest index on ties).

    Every mode emits input positions only, in input order.
    """
    if mode not in LANE_MODES:
        raise ValueError(f"unknown lane mode {mode!r}")
    bright = quantize_intensity(grid.intensity) > threshold
    sel = bright[grid.point_cell]
    src = grid.source[sel]
    if mode == "bright_members":
        src = src[quantize_intensity(grid.intensities[src]) > threshold]
    elif mode == "brightest":
        cell = grid.point_cell[sel]
        order = np.lexsort((src, -grid.intensities[src], cell))
        first = np.ones(len(order), dtype=bool)
        first[1:] = cell[order][1:] != cell[order][:-1]
        src = np.sort(src[order[first]])
    return grid.positions[src].copy()


# ---------------------------------------------------------------------------
# Poles
# ---------------------------------------------------------------------------

def cluster_euclidean(points, link_distance: float = 0.5) -> list[np.ndarray]:
    """Connected components under "within ``link_distance``".

    Each cluster is an ascending index array; clusters are ordered by their
    smallest member.
    """
    if link_distance <= 0:
        raise ValueError("link_distance must be positive")
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(P)
    if n == 0:
        return []
    pairs = cKDTree(P).query_pairs(link_distance, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    order = np.argsort(lab, kind="stable")
    splits = np.flatnonzero(np.diff(lab[order])) + 1
    clusters = np.split(order, splits)
    clusters.sort(key=lambda c: c[0])
    return clusters


@dataclass(frozen=True)
class MapBuilderParams:
    resolution: float = 0.1
    link_distance: float = 0.5
    min_pole_points: int = 10
    min_pole_height: float = 1.0
    max_pole_tilt_deg: float = 10.0
    ransac_iterations: int = 100
    ransac_threshold: float = 0.1
    seed: int = 0
    lane_mode: str = "bright_members"


def extract_pole(cluster, params: MapBuilderParams = MapBuilderParams(), seed: int | None = None) -> Pole:
    """Reduce a pole cluster to a vertical segment.

    Raises:
        TooFewPoints: cluster smaller than ``min_pole_points``.
        NotAPole: fitted axis tilted beyond ``max_pole_tilt_deg`` or the
            inlier height span is below ``min_pole_height``.
    """
    P = np.asarray(cluster, dtype=float).reshape(-1, 3)
    if len(P) < params.min_pole_points:
        raise TooFewPoints(f"{len(P)} points < {params.min_pole_points}")
    line, inl = ransac_line_3d(P, params.ransac_iterations, params.ransac_threshold,
                               params.seed if seed is None else seed)
    tilt = math.degrees(math.acos(min(1.0, abs(float(line.direction[2])))))
    if tilt > params.max_pole_tilt_deg:
        raise NotAPole(f"axis tilted {tilt:.1f} deg from vertical")
    Q = P[inl]
    lo, hi = float(Q[:, 2].min()), float(Q[:, 2].max())
    if hi - lo < params.min_pole_height:
        raise NotAPole(f"height {hi - lo:.2f} m below {params.min_pole_height} m")
    return Pole(float(Q[:, 0].mean()), float(Q[:, 1].mean()), lo, hi)


def build_semantic_map(cloud: LabeledCloud, params: MapBuilderParams = MapBuilderParams(),
                       stats: dict | None = None) -> SemanticMap:
    """Full pipeline: BEV + Otsu + back-projection for lanes, clustering +
    :func:`extract_pole` for poles.

    Stage failures that only mean "nothing found" (no ground points, a flat
    histogram, rejected clusters) are tallied in ``stats`` rather than raised.
    """
    info = {"ground_points": 0, "threshold": None, "lane_points": 0,
            "clusters": 0, "poles": 0, "rejected": {}}
    lanes = np.zeros((0, 3))
    try:
        grid = project_to_bev(cloud, params.resolution)
        info["ground_points"] = int(grid.source.size)
        t = otsu_threshold(grid.histogram())
        info["threshold"] = t
        lanes = extract_lane_points(grid, t, params.lane_mode)
    except (EmptyGround, Degenerate) as exc:
        info["rejected"][type(exc).__name__] = 1
    info["lane_points"] = len(lanes)

    poles = []
    pole_idx = cloud.select(POLE)
    clusters = cluster_euclidean(cloud.positions[pole_idx], params.link_distance)
    info["clusters"] = len(clusters)
    for k, members in enumerate(clusters):
        try:
            poles.append(extract_pole(cloud.positions[pole_idx[members]], params, seed=params.seed + k))
        except (TooFewPoints, NotAPole) as exc:
            name = type(exc).__name__
            info["rejected"][name] = info["rejected"].get(name, 0) + 1
    info["poles"] = len(poles)
    if stats is not None:
        stats.update(info)
    return SemanticMap(lanes, np.array(poles, dtype=float).reshape(-1, 4))


def build_map_file(cloud_path: os.PathLike, params: MapBuilderParams = MapBuilderParams()) -> SemanticMap:
    return build_semantic_map(load_cloud(cloud_path), params)
