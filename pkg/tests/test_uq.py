import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.special import erf
from scipy.stats import kstest

from scope_kit.errors import FitError, InvalidArgument, TableError
from scope_kit.grid import OccupancyGrid
from scope_kit.uq import (
    DegenerateFitWarning, MixtureParams, UqEntry, UqTable, bernoulli_entropy, bin_index, build_table,
    entropy_map, entropy_mc, entropy_scalar, expected_entropy, fit_mixture, l1_distance, mixture_cdf,
    mixture_icdf, mixture_mode, mixture_pdf, restricted_cdf, restricted_icdf, sample_cell, sample_entry,
)

from oracles import mixture_pdf_ref

XI_STAR = MixtureParams(w=0.7, a=0.0, b=1.0, mu_tn=0.4, sigma_tn=0.05, lam=-0.3, mu_sc=0.4, sigma_sc=0.02)

params = st.builds(
    lambda w, a, span, mu_tn, s_tn, lam, mu_sc, s_sc: MixtureParams(
        w, round(a, 2), min(round(a + span, 2), 1.0), mu_tn, s_tn, lam, mu_sc, s_sc),
    st.floats(0, 1), st.floats(0, 0.5), st.floats(0.1, 1.0), st.floats(-0.2, 1.2), st.floats(0.02, 2),
    st.floats(-0.95, 0.95), st.floats(-0.2, 1.2), st.floats(0.01, 2),
)


def test_pdf_examples():
    cauchy = MixtureParams(0.0, 0.0, 1.0, 0.5, 0.1, 0.0, 0.3, 0.05)
    assert mixture_pdf(cauchy, 0.3) == pytest.approx(1 / (0.05 * math.pi), rel=1e-12)
    tn = MixtureParams(1.0, 0.2, 0.8, 0.5, 0.1, 0.0, 0.5, 0.1)
    assert mixture_pdf(tn, 0.1) == 0.0 and mixture_pdf(tn, 0.9) == 0.0
    tn = MixtureParams(1.0, 0.0, 1.0, 0.5, 0.1, 0.0, 0.5, 0.1)
    expected = math.sqrt(2 / (math.pi * 0.01)) / (erf(0.5 / (0.1 * math.sqrt(2))) - erf(-0.5 / (0.1 * math.sqrt(2))))
    assert mixture_pdf(tn, 0.5) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(3.989, abs=1e-3)


@given(params)
def test_pdf_matches_reference(xi):
    x = np.linspace(-0.5, 1.5, 41) + 0.0037  # off the truncation points
    assert np.allclose(mixture_pdf(xi, x), mixture_pdf_ref(xi, x), rtol=1e-9, atol=1e-12)


def test_cdf_examples():
    sym = MixtureParams(0.0, 0.0, 1.0, 0.5, 0.1, 0.0, 0.4, 0.05)
    assert mixture_cdf(sym, 0.4) == pytest.approx(0.5, abs=1e-15)
    skew = MixtureParams(0.0, 0.0, 1.0, 0.5, 0.1, 0.5, 0.4, 0.05)
    assert mixture_cdf(skew, 0.4) == pytest.approx(0.25, abs=1e-15)
    tn = MixtureParams(1.0, 0.2, 0.7, 0.5, 0.1, 0.0, 0.5, 0.1)
    assert mixture_cdf(tn, 0.2) == 0.0 and mixture_cdf(tn, 0.7) == 1.0
    with pytest.raises(InvalidArgument):
        mixture_icdf(tn, 1.0)


@given(params)
def test_normalization(xi):
    # TN mass on [a, b] plus SC mass over the reals (split at the kinks for quad)
    tn_mass = quad(lambda t: mixture_pdf(xi, t), xi.a, xi.b, points=[xi.mu_sc], limit=200)[0]
    sc = MixtureParams(0.0, xi.a, xi.b, xi.mu_tn, xi.sigma_tn, xi.lam, xi.mu_sc, xi.sigma_sc)
    sc_mass = sum(quad(lambda t: mixture_pdf(sc, t), lo, hi, limit=200)[0]
                  for lo, hi in ((-np.inf, xi.mu_sc), (xi.mu_sc, np.inf)))
    assert sc_mass == pytest.approx(1.0, abs=1e-6)
    expected_unit = xi.w + (1 - xi.w) * float(mixture_cdf(sc, 1.0) - mixture_cdf(sc, 0.0))
    unit = quad(lambda t: mixture_pdf(xi, t), 0, 1, points=sorted({xi.a, xi.b, min(max(xi.mu_sc, 0), 1)}), limit=400)[0]
    assert unit == pytest.approx(expected_unit, abs=1e-6)
    assert tn_mass >= 0


@given(params, st.floats(0.001, 0.999))
def test_icdf_inverts_cdf(xi, q):
    x = xi.a + q * (xi.b - xi.a)
    p = float(mixture_cdf(xi, x))
    if 1e-12 < p < 1 - 1e-12 and mixture_pdf(xi, x) > 1e-3:
        assert abs(mixture_icdf(xi, p) - x) < 1e-8


def test_fit_recovers_reference_parameters():
    rng = np.random.default_rng(0)
    draws = restricted_icdf(XI_STAR, rng.random(50_000))
    assert l1_distance(fit_mixture(draws), XI_STAR) < 0.05


def test_fit_uniform_and_degenerate():
    rng = np.random.default_rng(1)
    xi = fit_mixture(rng.random(50_000))
    x = np.linspace(0, 1, 2001)
    assert np.trapezoid(np.abs(mixture_pdf(xi, x) / (mixture_cdf(xi, 1) - mixture_cdf(xi, 0)) - 1.0), x) < 0.1
    with pytest.warns(DegenerateFitWarning):
        narrow = fit_mixture(0.5 + rng.normal(0, 1e-6, 2000))
    assert min(narrow.sigma_tn, narrow.sigma_sc) <= 1e-4 * 1.0001
    with pytest.raises(FitError):
        fit_mixture(rng.random(999))
    with pytest.raises(InvalidArgument):
        fit_mixture(np.full(2000, 1.5))


def _bin_pool(k, rng, n=20_000):
    c = (k + 0.5) / 15
    return np.clip(rng.normal(c, 0.015, n), 0, 1)


@pytest.fixture(scope="module")
def small_table():
    rng = np.random.default_rng(3)
    pools = {(k, 1): _bin_pool(k, rng) for k in (3, 7, 11)}
    pools[(0, 1)] = np.abs(rng.normal(0, 0.004, 20_000))
    pools[(5, 2)] = rng.random(20_000)
    pools[(9, 2)] = np.full(10, 0.5)  # below the fit minimum, stays absent
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFitWarning)
        return build_table([], n_horizons=2, pools=pools)


def test_table_entries_track_their_bin(small_table):
    for k in (3, 7, 11):
        e = small_table.entries[(k, 1)]
        assert k / 15 <= e.mode < (k + 1) / 15
        assert e.mean == pytest.approx((k + 0.5) / 15, abs=0.01)
    empty = small_table.entries[(0, 1)]
    assert empty.mode < 0.01 and empty.entropy < 0.05
    assert small_table.entries[(9, 2)] is None


def test_table_fallback_and_round_trip(tmp_path, small_table):
    assert small_table.entry(5, 1) == small_table.entries[(3, 1)]  # tie goes to the lower bin
    assert small_table.entry(14, 1) == small_table.entries[(11, 1)]
    assert small_table.lookup(1.0, 2) == small_table.entries[(5, 2)]
    with pytest.raises(InvalidArgument):
        small_table.entry(0, 3)
    small_table.save(tmp_path / "t.txt")
    assert UqTable.load(tmp_path / "t.txt") == small_table
    with pytest.raises(TableError):
        UqTable({})


def test_entry_stats_consistent(small_table):
    e = small_table.entries[(7, 1)]
    again = UqEntry.from_params(e.params, e.n_values)
    assert again == e
    assert float(restricted_cdf(e.params, e.median)) == pytest.approx(0.5, abs=1e-6)


def test_bin_index():
    assert bin_index(0.0) == 0 and bin_index(1.0) == 14 and bin_index(0.999) == 14
    assert bin_index(1 / 15) == 1


def test_sampling(small_table):
    rng = np.random.default_rng(5)
    e = small_table.entries[(7, 1)]
    draws = sample_entry(e, 100_000, rng)
    assert kstest(draws, lambda x: restricted_cdf(e.params, x)).statistic < 0.02
    tn = UqEntry.from_params(MixtureParams(1.0, 0.2, 0.6, 0.4, 0.3, 0.0, 0.4, 0.1))
    d = sample_entry(tn, 10_000, rng)
    assert d.min() >= 0.2 and d.max() <= 0.6
    a = sample_cell(small_table, np.full((4, 4), 0.5), 1, np.random.default_rng(9), size=3)
    b = sample_cell(small_table, np.full((4, 4), 0.5), 1, np.random.default_rng(9), size=3)
    assert a.shape == (3, 4, 4) and np.array_equal(a, b)
    with pytest.raises(InvalidArgument):
        sample_cell(small_table, 0.5, 0, rng)


def test_entropy_examples(small_table):
    half = MixtureParams(1.0, 0.0, 1.0, 0.5, 1e-4, 0.0, 0.5, 1e-4)
    assert expected_entropy(half) == pytest.approx(math.log(2), abs=1e-6)
    ends = MixtureParams(1.0, 0.0, 1.0, 0.0, 1e-4, 0.0, 0.0, 1e-4)
    assert expected_entropy(ends) < 1e-3
    m = OccupancyGrid.filled(0.5)
    assert entropy_scalar(m, small_table, 1) == pytest.approx(small_table.entry(7, 1).entropy)
    assert entropy_map(m, small_table, 1).shape == (64, 64)


def test_entropy_mc_examples():
    binary = np.zeros((5, 8, 8))
    binary[:, 2, 3] = 1.0
    assert entropy_mc(binary) < 1.5e-5
    one = np.zeros((1, 8, 8))
    one[0, 0, 0] = 0.5
    assert entropy_mc(one) == pytest.approx(math.log(2) / 64 + 63 * float(bernoulli_entropy(0.0)) / 64)
    pair = np.array([[[0.25]], [[0.75]]])
    assert entropy_mc(pair) == pytest.approx(0.5623, abs=1e-4)


def test_mode_grid():
    assert mixture_mode(XI_STAR) == pytest.approx(0.4, abs=1e-3)
