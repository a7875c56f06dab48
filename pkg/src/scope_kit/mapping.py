"""Local static map: log-odds occupancy mapping with an inverse sensor model."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .grid import DEFAULT_SPEC, GridSpec, LidarScan, OccupancyGrid, logistic

L_OCC = math.log(0.7 / 0.3)
L_FREE = math.log(0.3 / 0.7)
L_CLAMP = 10.0


@dataclass(frozen=True, eq=False)
class LogOddsGrid:
    spec: GridSpec
    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float).reshape(self.spec.shape)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def zeros(cls, spec: GridSpec = DEFAULT_SPEC) -> "LogOddsGrid":
        return cls(spec, np.zeros(spec.shape))

    def probabilities(self) -> OccupancyGrid:
        return OccupancyGrid(self.spec, logistic(self.cells))


def _ray_points(scan: LidarScan):
    """Endpoints of every beam usable by the sensor model, plus their hit flags."""
    hits = scan.hits
    if scan.angles is None:
        r = scan.ranges
        usable = hits | ~(r < scan.range_max)  # non-returns (incl. inf) trace free space
        r = np.where(hits, r, scan.range_max)
        b = scan.bearings
        pts = np.stack([r * np.cos(b), r * np.sin(b)], axis=1)
        return pts[usable], hits[usable]
    return scan.endpoints(), hits


def traverse(start: np.ndarray, ends: np.ndarray):
    """Integer line traversal from one start cell to many end cells.

    Returns ``(cols, rows, beam)`` for every traversed cell, end cells excluded.
    """
    d = ends - start
    n = np.abs(d).max(axis=1)
    total = int(n.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    beam = np.repeat(np.arange(len(ends)), n)
    offsets = np.cumsum(n) - n
    k = np.arange(total) - np.repeat(offsets, n)
    frac = k / np.repeat(n, n)
    cols = start[0] + np.floor(frac * np.repeat(d[:, 0], n) + 0.5).astype(np.int64)
    rows = start[1] + np.floor(frac * np.repeat(d[:, 1], n) + 0.5).astype(np.int64)
    return cols, rows, beam


def integrate_scan(
    grid: LogOddsGrid,
    scan: LidarScan,
    l_occ: float = L_OCC,
    l_free: float = L_FREE,
    clamp: float = L_CLAMP,
) -> LogOddsGrid:
    """Add one scan's free/occupied evidence and clamp.

    Within one scan each cell gets at most one free and at most one occupied
    update; a cell can receive both when different beams disagree.
    """
    spec = grid.spec
    pts, hits = _ray_points(scan)
    start = spec.cell_coords(np.array(scan.origin))[0]
    ends = spec.cell_coords(pts)

    free = np.zeros(spec.shape, dtype=bool)
    cols, rows, _ = traverse(start, ends)
    inside = spec.contains_cells(cols, rows)
    free[rows[inside], cols[inside]] = True

    occ = np.zeros(spec.shape, dtype=bool)
    e = ends[hits]
    inside = spec.contains_cells(e[:, 0], e[:, 1])
    occ[e[inside, 1], e[inside, 0]] = True

    # non-returns end in free space: their last cell is free too
    e = ends[~hits]
    inside = spec.contains_cells(e[:, 0], e[:, 1])
    free[e[inside, 1], e[inside, 0]] = True

    cells = grid.cells + l_free * free + l_occ * occ
    return LogOddsGrid(spec, np.clip(cells, -clamp, clamp))


def build_local_map(
    history: Sequence[LidarScan],
    spec: GridSpec = DEFAULT_SPEC,
    l_occ: float = L_OCC,
    l_free: float = L_FREE,
    clamp: float = L_CLAMP,
) -> OccupancyGrid:
    """Fuse a time-ordered scan history into a probability map (prior 0.5)."""
    if len(history) == 0:
        raise InvalidArgument("empty scan history")
    grid = LogOddsGrid.zeros(spec)
    for scan in history:
        grid = integrate_scan(grid, scan, l_occ, l_free, clamp)
    return grid.probabilities()
