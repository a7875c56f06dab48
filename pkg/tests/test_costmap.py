import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from scope_kit import costmap as cm
from scope_kit.errors import InvalidArgument, Unreachable
from scope_kit.grid import BinaryGrid, GridSpec, OccupancyGrid
from scope_kit.predict import PredictionBundle


def seeds(spec, cells):
    g = np.zeros(spec.shape, dtype=np.uint8)
    for r, c in cells:
        g[r, c] = 1
    return BinaryGrid(spec, g)


def test_gaussian_inflate_examples(spec):
    layer = cm.gaussian_inflate(seeds(spec, [(30, 30)]), 128, 2.0)
    assert layer.costs[30, 30] == 128
    assert layer.costs[30, 32] == 78 == round(128 * math.exp(-0.5))
    assert layer.costs[30, 30 + 12] == 0  # 128 e^-18 truncates to 0
    assert not cm.gaussian_inflate(BinaryGrid.empty(spec)).costs.any()
    a = cm.gaussian_inflate(seeds(spec, [(10, 10)]))
    b = cm.gaussian_inflate(seeds(spec, [(20, 25)]))
    both = cm.gaussian_inflate(seeds(spec, [(10, 10), (20, 25)]))
    assert np.array_equal(both.costs, np.maximum(a.costs, b.costs))
    with pytest.raises(InvalidArgument):
        cm.gaussian_inflate(BinaryGrid.empty(spec), peak=254)


def test_inflate_matches_brute_distance():
    spec = GridSpec(16, 12, 0.1, (0.0, 1.6), (0.0, 1.2))
    pts = [(2, 3), (9, 14), (5, 7)]
    layer = cm.gaussian_inflate(seeds(spec, pts), 100, 1.5)
    rr, cc = np.mgrid[0:12, 0:16]
    d = np.min([np.hypot(rr - r, cc - c) for r, c in pts], axis=0)
    assert np.array_equal(layer.costs, np.floor(100 * np.exp(-d**2 / 4.5) + 0.5).astype(int))


def test_layer_invariants(spec):
    with pytest.raises(InvalidArgument):
        cm.CostmapLayer(spec, np.full(spec.shape, 254), "prediction")
    with pytest.raises(InvalidArgument):
        cm.CostmapLayer(spec, np.full(spec.shape, 300), "static")
    with pytest.raises(InvalidArgument):
        cm.merge(cm.MasterCostmap.empty(spec), cm.MasterCostmap.empty(GridSpec(32, 32, 0.2)))


def test_build_layers_examples(spec):
    empty = PredictionBundle((OccupancyGrid.filled(0.0),))
    pred, unc = cm.build_layers(empty, 1, entropy=np.zeros(spec.shape))
    assert not pred.costs.any() and not unc.costs.any()
    cells = np.zeros(spec.shape)
    cells[20:23, 20:23] = 1.0
    certain = PredictionBundle((OccupancyGrid(spec, cells),), ((OccupancyGrid(spec, cells),),))
    pred, unc = cm.build_layers(certain, 1)
    assert np.all(pred.costs[20:23, 20:23] == 128)
    assert unc.costs.max() == 0
    unc = cm.uncertainty_layer(np.full(spec.shape, math.log(2)), spec)
    assert np.all(unc.costs == 64)
    with pytest.raises(InvalidArgument):
        cm.build_layers(empty, 2)


small = GridSpec(12, 10, 0.1, (0.0, 1.2), (0.0, 1.0))
layers = arrays(np.int64, small.shape, elements=st.integers(0, 200))


@given(layers, layers, layers)
def test_merge_algebra(a, b, c):
    A, B, C = (cm.CostmapLayer(small, x, "prediction") for x in (a, b, c))
    assert cm.merge(A).costs.tolist() == a.tolist()
    assert cm.merge(A, B) == cm.merge(B, A)
    assert cm.merge(A, A) == cm.merge(A)
    assert cm.merge(cm.merge(A, B), C) == cm.merge(A, cm.merge(B, C))


def test_static_beats_prediction(spec):
    s = cm.static_layer(seeds(spec, [(5, 5)]))
    p = cm.gaussian_inflate(seeds(spec, [(5, 5)]))
    assert cm.merge(s, p).costs[5, 5] == 254


def test_plan_straight_and_gap(spec):
    r = cm.plan_path(cm.MasterCostmap.empty(spec), (0, 0), (0, 10))
    assert r.cells == tuple((0, c) for c in range(11)) and r.cost == pytest.approx(10.0)
    wall = np.zeros(spec.shape, dtype=np.int64)
    wall[:, 20] = 254
    wall[40, 20] = 0
    r = cm.plan_path(cm.MasterCostmap(spec, wall), (10, 5), (10, 35))
    assert (40, 20) in r.cells
    wall[40, 20] = 254
    with pytest.raises(Unreachable):
        cm.plan_path(cm.MasterCostmap(spec, wall), (10, 5), (10, 35))
    with pytest.raises(InvalidArgument):
        cm.plan_path(cm.MasterCostmap(spec, wall), (10, 20), (10, 35))
    with pytest.raises(InvalidArgument):
        cm.plan_path(cm.MasterCostmap(spec, wall), (10, 5), (10, 64))


def _route_cost(costs, cells, beta=4.0):
    total = 0.0
    for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
        total += math.hypot(r1 - r0, c1 - c0) * (1 + beta * 0.5 * (costs[r0, c0] + costs[r1, c1]) / 254)
    return total


def test_prediction_blob_causes_detour(spec):
    blob = cm.gaussian_inflate(seeds(spec, [(32, 32)]))
    master = cm.merge(blob)
    start, goal = (32, 10), (32, 54)
    straight = [(32, c) for c in range(10, 55)]
    r = cm.plan_path(master, start, goal)
    assert (32, 32) not in r.cells
    assert r.cost == pytest.approx(_route_cost(master.costs, list(r.cells)))
    assert r.cost < _route_cost(master.costs, straight)
    assert r.length <= 1.4 * 44


@given(arrays(np.int64, small.shape, elements=st.integers(0, 120)),
       arrays(np.int64, small.shape, elements=st.integers(0, 120)))
def test_plan_cost_is_monotone(base, extra):
    lo = cm.MasterCostmap(small, base)
    hi = cm.MasterCostmap(small, base + extra)
    assert cm.plan_path(hi, (0, 0), (9, 11)).cost >= cm.plan_path(lo, (0, 0), (9, 11)).cost - 1e-9


def test_plan_is_optimal_on_small_grid():
    # Dijkstra with scipy on the same edge weights is the oracle
    from scipy.sparse import lil_matrix
    from scipy.sparse.csgraph import dijkstra

    rng = np.random.default_rng(0)
    costs = rng.integers(0, 200, small.shape)
    h, w = small.shape
    g = lil_matrix((h * w, h * w))
    for r in range(h):
        for c in range(w):
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < h and 0 <= cc < w:
                        g[r * w + c, rr * w + cc] = math.hypot(dr, dc) * (1 + 4 * 0.5 * (costs[r, c] + costs[rr, cc]) / 254)
    best = dijkstra(g.tocsr(), indices=0)[h * w - 1]
    assert cm.plan_path(cm.MasterCostmap(small, costs), (0, 0), (h - 1, w - 1)).cost == pytest.approx(best, rel=1e-12)


def test_exports(tmp_path, spec):
    r = cm.plan_path(cm.MasterCostmap.empty(spec), (0, 0), (3, 3))
    cm.write_path_csv(r, tmp_path / "p.csv")
    assert cm.read_path_csv(tmp_path / "p.csv") == list(r.cells)
    layer = cm.gaussian_inflate(seeds(spec, [(1, 1)]))
    cm.write_costmap_pgm(layer, tmp_path / "c.pgm")
    from scope_kit.grid import read_pgm
    assert np.array_equal(read_pgm(tmp_path / "c.pgm"), layer.costs)
