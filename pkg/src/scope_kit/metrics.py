"""Map-quality metrics: WMSE, SSIM and the cluster-based OSPA distance."""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from .errors import InvalidArgument
from .grid import BinaryGrid, OccupancyGrid, binarize

log = logging.getLogger(__name__)

P_FREE = 0.3
OSPA_CUTOFF = 10.0
DBSCAN_EPS = 1.5
DBSCAN_MIN_PTS = 1
WMSE_WEIGHT_CAP = 100.0


def _check_specs(a, b):
    if a.spec != b.spec:
        raise InvalidArgument("grid specs differ")


def default_weights(truth: OccupancyGrid, threshold: float = P_FREE) -> np.ndarray:
    """Class-balancing weights: occupied truth cells get #free/#occupied (capped)."""
    occ = truth.cells > threshold
    n_occ = int(occ.sum())
    w = np.ones(truth.spec.shape)
    if n_occ:
        w[occ] = min((occ.size - n_occ) / n_occ, WMSE_WEIGHT_CAP)
    return w


def wmse(pred: OccupancyGrid, truth: OccupancyGrid, weights: Optional[np.ndarray] = None) -> float:
    _check_specs(pred, truth)
    w = default_weights(truth) if weights is None else np.asarray(weights, dtype=float).reshape(truth.spec.shape)
    err = (pred.cells.astype(float) - truth.cells.astype(float)) ** 2
    return float((w * err).sum() / w.sum())


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03,
             win: Optional[np.ndarray] = None) -> np.ndarray:
    win = gaussian_window() if win is None else win
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(pred: OccupancyGrid, truth: OccupancyGrid) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, L = 1)."""
    _check_specs(pred, truth)
    return float(ssim_map(pred.cells, truth.cells).mean())


@dataclass(frozen=True, eq=False)
class ClusterSet:
    centroids: np.ndarray  # (K, 2) in (col, row) cell units
    sizes: np.ndarray
    points: Optional[np.ndarray] = None  # clustered points, canonical order
    labels: Optional[np.ndarray] = None  # cluster of each point, -1 for noise

    def __len__(self):
        return len(self.sizes)

    def members(self, k: int) -> np.ndarray:
        return self.points[self.labels == k]


def dbscan(grid: BinaryGrid, eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS) -> ClusterSet:
    if eps <= 0 or min_pts < 1:
        raise InvalidArgument("dbscan needs eps > 0 and min_pts >= 1")
    pts = grid.occupied().astype(float)
    return cluster_points(pts, eps, min_pts)


def cluster_points(pts: np.ndarray, eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS) -> ClusterSet:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return ClusterSet(np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0, dtype=int))
    # canonical order makes labels independent of the caller's point order
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    pts = pts[order]
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps + 1e-9)
    core = np.array([len(n) >= min_pts for n in neighbors])
    labels = np.full(len(pts), -1)
    k = 0
    for i in range(len(pts)):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = k
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for q in neighbors[j]:
                if labels[q] == -1:
                    labels[q] = k
                    queue.append(q)
        k += 1
    centroids = np.array([pts[labels == c].mean(axis=0) for c in range(k)]).reshape(-1, 2)
    sizes = np.array([(labels == c).sum() for c in range(k)], dtype=int)
    return ClusterSet(centroids, sizes, pts, labels)


@dataclass(frozen=True)
class OspaResult:
    distance: float
    localization_part: float
    cardinality_part: float


def ospa(X, Y, cutoff: float = OSPA_CUTOFF, p: int = 1) -> OspaResult:
    """OSPA distance between two point sets (ClusterSets or (N, 2) arrays)."""
    if cutoff <= 0 or p < 1:
        raise InvalidArgument("ospa needs cutoff > 0 and p >= 1")
    X = np.asarray(getattr(X, "centroids", X), dtype=float).reshape(-1, 2)
    Y = np.asarray(getattr(Y, "centroids", Y), dtype=float).reshape(-1, 2)
    if len(X) > len(Y):
        X, Y = Y, X
    m, n = len(X), len(Y)
    if n == 0:
        log.debug("ospa between two empty sets is 0 by convention")
        return OspaResult(0.0, 0.0, 0.0)
    loc = 0.0
    if m:
        d = np.minimum(np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2), cutoff) ** p
        rows, cols = linear_sum_assignment(d)
        loc = float(d[rows, cols].sum())
    card = cutoff**p * (n - m)
    return OspaResult(
        ((loc + card) / n) ** (1.0 / p),
        (loc / n) ** (1.0 / p),
        (card / n) ** (1.0 / p),
    )


def ogm_ospa(pred: OccupancyGrid, truth: OccupancyGrid, threshold: float = P_FREE,
             cutoff: float = OSPA_CUTOFF, p: int = 1, eps: float = DBSCAN_EPS,
             min_pts: int = DBSCAN_MIN_PTS) -> float:
    """Binarize both maps, cluster occupied cells and compare the cluster centroids."""
    _check_specs(pred, truth)
    a = dbscan(binarize(pred, threshold), eps, min_pts)
    b = dbscan(binarize(truth, threshold), eps, min_pts)
    return ospa(a, b, cutoff, p).distance


METRIC_NAMES = ("wmse", "ssim", "ospa")


def evaluate_sequence(mean_maps: Sequence[OccupancyGrid], truths: Sequence[OccupancyGrid],
                      threshold: float = P_FREE, cutoff: float = OSPA_CUTOFF, p: int = 1,
                      weights: Optional[np.ndarray] = None) -> List[Dict[str, float]]:
    """Per-horizon metrics of one prediction against its ground-truth future."""
    mean_maps = getattr(mean_maps, "mean_maps", mean_maps)
    if len(mean_maps) != len(truths):
        raise InvalidArgument(f"{len(mean_maps)} predicted horizons vs {len(truths)} truths")
    rows = []
    for T, (pred, truth) in enumerate(zip(mean_maps, truths), start=1):
        rows.append({
            "horizon": T,
            "wmse": wmse(pred, truth, weights),
            "ssim": ssim(pred, truth),
            "ospa": ogm_ospa(pred, truth, threshold, cutoff, p),
        })
    return rows


def average_reports(reports: Iterable[List[Dict[str, float]]]) -> List[Dict[str, float]]:
    reports = list(reports)
    if not reports:
        raise InvalidArgument("no sequences to average")
    n_h = len(reports[0])
    if any(len(r) != n_h for r in reports):
        raise InvalidArgument("reports have different horizon counts")
    out = []
    for h in range(n_h):
        row = {"horizon": h + 1}
        for name in METRIC_NAMES:
            row[name] = float(np.mean([r[h][name] for r in reports]))
        row["n_sequences"] = len(reports)
        out.append(row)
    return out


def write_report_csv(rows: List[Dict[str, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "wmse", "ssim", "ospa", "n_sequences"])
        for r in rows:
            w.writerow([r["horizon"], f"{r['wmse']:.9g}", f"{r['ssim']:.9g}", f"{r['ospa']:.9g}",
                        r.get("n_sequences", 1)])


def read_report_csv(path) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        return [
            {"horizon": int(r["horizon"]), "wmse": float(r["wmse"]), "ssim": float(r["ssim"]),
             "ospa": float(r["ospa"]), "n_sequences": int(r["n_sequences"])}
            for r in csv.DictReader(fh)
        ]
