"""Prediction and uncertainty costmap layers, the master costmap and a grid planner."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .errors import InvalidArgument, Unreachable
from .grid import BinaryGrid, GridSpec, binarize, write_pgm

LETHAL = 254
BLOCKED = 253  # cells at or above this cost are not traversable
PREDICTION_PEAK = 128
PREDICTION_SIGMA = 2.0
UNCERTAINTY_PEAK = 64
UNCERTAINTY_SIGMA = 1.0
BETA = 4.0
LAYER_KINDS = ("static", "prediction", "uncertainty")

Cell = Tuple[int, int]  # (row, col)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class CostmapLayer:
    spec: GridSpec
    costs: np.ndarray
    kind: str = "static"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        c = np.asarray(self.costs)
        if c.shape != self.spec.shape:
            raise InvalidArgument(f"costs shape {c.shape} does not match grid {self.spec.shape}")
        c = c.astype(np.int64)
        if c.min(initial=0) < 0 or c.max(initial=0) > LETHAL:
            raise InvalidArgument("costs must lie in [0, 254]")
        if self.kind != "static" and c.max(initial=0) >= LETHAL:
            raise InvalidArgument("only observed obstacles may be lethal")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    def __eq__(self, other):
        return (isinstance(other, CostmapLayer) and self.spec == other.spec and self.kind == other.kind
                and np.array_equal(self.costs, other.costs))


@dataclass(frozen=True, eq=False)
class MasterCostmap:
    spec: GridSpec
    costs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs).astype(np.int64)
        if c.shape != self.spec.shape or c.min(initial=0) < 0 or c.max(initial=0) > LETHAL:
            raise InvalidArgument("master costs must be a grid of integers in [0, 254]")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    def __eq__(self, other):
        return isinstance(other, MasterCostmap) and self.spec == other.spec and np.array_equal(self.costs, other.costs)

    @classmethod
    def empty(cls, spec: GridSpec = GridSpec()) -> "MasterCostmap":
        return cls(spec, np.zeros(spec.shape, dtype=np.int64))


def gaussian_inflate(seeds: BinaryGrid, peak: int = PREDICTION_PEAK, sigma: float = PREDICTION_SIGMA,
                     kind: str = "prediction") -> CostmapLayer:
    """Cost ``round(peak * exp(-d^2 / (2 sigma^2)))`` with d the distance to the nearest seed."""
    if not 1 <= peak <= BLOCKED or sigma <= 0:
        raise InvalidArgument("gaussian_inflate needs peak in [1, 253] and sigma > 0")
    occ = seeds.cells.astype(bool)
    if not occ.any():
        return CostmapLayer(seeds.spec, np.zeros(seeds.spec.shape, dtype=np.int64), kind)
    d = distance_transform_edt(~occ)
    costs = _round_half_up(peak * np.exp(-(d**2) / (2.0 * sigma**2)))
    return CostmapLayer(seeds.spec, costs, kind)


def static_layer(obstacles: BinaryGrid) -> CostmapLayer:
    """Observed obstacles are lethal."""
    return CostmapLayer(obstacles.spec, np.where(obstacles.cells.astype(bool), LETHAL, 0), "static")


def uncertainty_layer(entropy: np.ndarray, spec: GridSpec) -> CostmapLayer:
    """Per-cell entropy (nats) scaled so that ln 2 maps to the uncertainty peak, then smoothed."""
    h = np.asarray(entropy, dtype=float).reshape(spec.shape)
    raw = _round_half_up(UNCERTAINTY_PEAK * np.clip(h, 0.0, math.log(2.0)) / math.log(2.0))
    smooth = gaussian_filter(raw.astype(float), UNCERTAINTY_SIGMA, mode="nearest")
    return CostmapLayer(spec, np.clip(_round_half_up(smooth), 0, UNCERTAINTY_PEAK), "uncertainty")


def build_layers(bundle, T: int, table=None, entropy: Optional[np.ndarray] = None,
                 threshold: float = 0.3) -> Tuple[CostmapLayer, CostmapLayer]:
    """Prediction and uncertainty layers for horizon ``T`` of a prediction bundle.

    The entropy source is, in order of preference: an explicit per-cell
    ``entropy`` array, a UQ ``table`` applied to the mean map, or the bundle's
    own samples. Without any of these the uncertainty layer is zero.
    """
    from .uq import entropy_map, entropy_mc_map

    if not 1 <= T <= bundle.horizon:
        raise InvalidArgument(f"horizon {T} outside 1..{bundle.horizon}")
    mean = bundle.mean_maps[T - 1]
    pred = gaussian_inflate(binarize(mean, threshold), PREDICTION_PEAK, PREDICTION_SIGMA, "prediction")
    if entropy is None:
        if table is not None:
            entropy = entropy_map(mean, table, T)
        elif bundle.samples is not None:
            entropy = entropy_mc_map(bundle.samples[T - 1])
        else:
            entropy = np.zeros(mean.spec.shape)
    return pred, uncertainty_layer(entropy, mean.spec)


def merge(*layers) -> MasterCostmap:
    """Cellwise maximum of the given layers (or master costmaps)."""
    if len(layers) == 1 and isinstance(layers[0], (list, tuple)):
        layers = tuple(layers[0])
    if not layers:
        raise InvalidArgument("merge needs at least one layer")
    spec = layers[0].spec
    if any(layer.spec != spec for layer in layers):
        raise InvalidArgument("layer grid specs differ")
    return MasterCostmap(spec, np.maximum.reduce([layer.costs for layer in layers]))


# -- planning ------------------------------------------------------------------

@dataclass(frozen=True)
class PathResult:
    cells: Tuple[Cell, ...]
    cost: float

    @property
    def length(self) -> float:
        c = np.array(self.cells, dtype=float)
        return float(np.hypot(*np.diff(c, axis=0).T).sum()) if len(c) > 1 else 0.0

    def min_distance(self, point) -> float:
        """Smallest distance (cells) from any path cell to ``point`` given as (row, col)."""
        c = np.array(self.cells, dtype=float)
        return float(np.hypot(c[:, 0] - point[0], c[:, 1] - point[1]).min())


_MOVES = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


def _octile(a: Cell, b: Cell) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dr, dc) + (math.sqrt(2.0) - 1.0) * min(dr, dc)


def plan_path(costmap: MasterCostmap, start: Cell, goal: Cell, beta: float = BETA) -> PathResult:
    """8-connected best-first search; each step costs length * (1 + beta * mean endpoint cost / 254).

    Ties in the open list are broken by (f, h, row, col).
    """
    costs = costmap.costs
    h_max, w_max = costs.shape
    start, goal = (int(start[0]), int(start[1])), (int(goal[0]), int(goal[1]))
    for name, c in (("start", start), ("goal", goal)):
        if not (0 <= c[0] < h_max and 0 <= c[1] < w_max):
            raise InvalidArgument(f"{name} cell {c} outside the grid")
        if costs[c] >= BLOCKED:
            raise InvalidArgument(f"{name} cell {c} is not traversable")
    g = {start: 0.0}
    parent = {start: None}
    h0 = _octile(start, goal)
    heap = [(h0, h0, start[0], start[1])]
    closed = set()
    while heap:
        _, _, r, c = heapq.heappop(heap)
        cur = (r, c)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return PathResult(tuple(reversed(path)), g[goal])
        closed.add(cur)
        for dr, dc in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h_max and 0 <= nc < w_max) or costs[nr, nc] >= BLOCKED:
                continue
            nxt = (nr, nc)
            if nxt in closed:
                continue
            step = math.sqrt(2.0) if dr and dc else 1.0
            cand = g[cur] + step * (1.0 + beta * 0.5 * (costs[r, c] + costs[nr, nc]) / LETHAL)
            if cand < g.get(nxt, math.inf):
                g[nxt] = cand
                parent[nxt] = cur
                h = _octile(nxt, goal)
                heapq.heappush(heap, (cand + h, h, nr, nc))
    raise Unreachable(f"no path from {start} to {goal}")


# -- export --------------------------------------------------------------------

def write_costmap_pgm(layer, path) -> None:
    write_pgm(np.asarray(layer.costs, dtype=np.uint8), path)


def write_path_csv(result: PathResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,row,col\n")
        for k, (r, c) in enumerate(result.cells):
            fh.write(f"{k},{r},{c}\n")
        fh.write(f"# cost={result.cost:.9g} length={result.length:.9g}\n")


def read_path_csv(path) -> List[Cell]:
    cells = []
    with open(path) as fh:
        for line in fh.read().splitlines()[1:]:
            if line and not line.startswith("#"):
                _, r, c = line.split(",")
                cells.append((int(r), int(c)))
    return cells
