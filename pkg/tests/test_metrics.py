import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity
from sklearn.cluster import DBSCAN

from scope_kit.errors import InvalidArgument
from scope_kit.grid import BinaryGrid, GridSpec, OccupancyGrid
from scope_kit.metrics import (
    average_reports, cluster_points, dbscan, evaluate_sequence, ospa, read_report_csv, ssim, wmse,
    write_report_csv,
)

from oracles import brute_ospa

point = st.tuples(st.integers(0, 30), st.integers(0, 30))
point_sets = st.lists(point, min_size=0, max_size=6)


def test_wmse_examples(spec):
    t = OccupancyGrid.filled(0.0)
    assert wmse(t, t) == 0.0
    assert wmse(OccupancyGrid.filled(0.0), OccupancyGrid.filled(1.0), np.ones(spec.shape)) == 1.0
    cells = np.zeros(spec.shape)
    cells[5, 5] = 1.0
    assert wmse(OccupancyGrid.filled(0.0), OccupancyGrid(spec, cells)) == pytest.approx(100 / 4195)
    assert round(100 / 4195, 5) == 0.02384
    with pytest.raises(InvalidArgument):
        wmse(t, OccupancyGrid.filled(0.0, GridSpec(32, 32, 0.2)))


def test_ssim_examples(spec):
    rng = np.random.default_rng(0)
    a = OccupancyGrid(spec, (rng.random(spec.shape) > 0.7).astype(float))
    assert abs(ssim(a, a) - 1.0) < 1e-12
    assert ssim(a, OccupancyGrid(spec, 1.0 - a.cells)) < 0
    c = OccupancyGrid.filled(0.4)
    assert ssim(c, c) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_ssim_matches_reference_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec(24, 24, 0.1, (0.0, 2.4), (-1.2, 1.2))
    a = OccupancyGrid(spec, rng.random(spec.shape))
    b = OccupancyGrid(spec, np.clip(a.cells + rng.normal(0, 0.2, spec.shape), 0, 1))
    ref = structural_similarity(a.cells.astype(float), b.cells.astype(float), data_range=1.0,
                                gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_dbscan_examples(spec):
    def grid(cells):
        g = np.zeros(spec.shape, dtype=np.uint8)
        for c, r in cells:
            g[r, c] = 1
        return BinaryGrid(spec, g)

    one = dbscan(grid([(4, 7)]))
    assert len(one) == 1 and tuple(one.centroids[0]) == (4.0, 7.0)
    assert len(dbscan(grid([(4, 7), (5, 8)]))) == 1
    assert len(dbscan(grid([(4, 7), (7, 7)]))) == 2
    assert len(dbscan(BinaryGrid.empty())) == 0


@given(st.lists(point, min_size=1, max_size=40, unique=True), st.randoms(use_true_random=False))
def test_dbscan_matches_reference_and_is_order_free(pts, rnd):
    pts = np.array(pts, dtype=float)
    ours = cluster_points(pts)
    ref = DBSCAN(eps=1.5, min_samples=1).fit(pts).labels_
    ref_sets = sorted(sorted(map(tuple, pts[ref == k])) for k in set(ref))
    our_sets = sorted(sorted(map(tuple, ours.members(k))) for k in range(len(ours)))
    assert our_sets == ref_sets
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    other = cluster_points(np.array(shuffled))
    assert np.array_equal(other.centroids, ours.centroids)


def test_ospa_worked_examples():
    assert ospa([(0, 0)], [(0, 0)]).distance == 0.0
    assert ospa(np.zeros((0, 2)), [(5, 5)]).distance == 10.0
    assert ospa([(0, 0)], [(3, 4)], p=1).distance == 5.0
    assert ospa([], []).distance == 0.0
    with pytest.raises(InvalidArgument):
        ospa([(0, 0)], [(1, 1)], cutoff=0)


@given(point_sets, point_sets, st.sampled_from([1, 2]))
def test_ospa_matches_brute_force(X, Y, p):
    r = ospa(np.array(X, float).reshape(-1, 2), np.array(Y, float).reshape(-1, 2), 10.0, p)
    assert r.distance == pytest.approx(brute_ospa(X, Y, 10.0, p), rel=1e-12, abs=1e-12)
    assert 0.0 <= r.distance <= 10.0
    assert r.localization_part ** p + r.cardinality_part ** p == pytest.approx(r.distance ** p, abs=1e-9)


@given(point_sets, point_sets, point_sets)
def test_ospa_is_a_metric(X, Y, Z):
    def d(a, b):
        return ospa(np.array(a, float).reshape(-1, 2), np.array(b, float).reshape(-1, 2)).distance

    assert d(X, Y) == pytest.approx(d(Y, X), abs=1e-12)
    assert d(X, Z) <= d(X, Y) + d(Y, Z) + 1e-9


def test_evaluate_sequence_and_report(tmp_path, spec):
    cells = np.zeros(spec.shape)
    cells[10:13, 20:22] = 1.0
    truth = [OccupancyGrid(spec, cells)] * 3
    rows = evaluate_sequence(truth, truth)
    assert [r["horizon"] for r in rows] == [1, 2, 3]
    assert all(r["wmse"] == 0 and r["ospa"] == 0 and r["ssim"] == pytest.approx(1.0) for r in rows)
    avg = average_reports([rows, rows])
    assert avg[0]["n_sequences"] == 2
    write_report_csv(avg, tmp_path / "r.csv")
    assert read_report_csv(tmp_path / "r.csv")[2]["horizon"] == 3
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "horizon,wmse,ssim,ospa,n_sequences"
    with pytest.raises(InvalidArgument):
        evaluate_sequence(truth, truth[:2])
