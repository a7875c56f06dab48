"""Uncertainty quantification of predicted occupancy values.

Predicted cell values are grouped by their mean-map value into 15 bins per
horizon. Each (bin, horizon) pool is described by a mixture of a truncated
normal and a skew-Cauchy density, fitted by bounded least squares to the
pool's histogram. The fitted mixtures form a lookup table that supports
sampling cell values and computing per-cell Bernoulli entropy.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import log_ndtr, ndtr

from .errors import FitError, FormatError, InvalidArgument, TableError
from .grid import OccupancyGrid

log = logging.getLogger(__name__)

N_BINS = 15
N_HORIZONS = 10
MIN_FIT_VALUES = 1000
HIST_BINS = 100
SIGMA_BOUNDS = (1e-4, 10.0)
LAMBDA_BOUND = 0.99
MU_BOUNDS = (-0.5, 1.5)
PROB_EPS = 1e-6
SIMPSON_POINTS = 2001
MODE_STEP = 1e-4
ICDF_TOL = 1e-10
ICDF_GRID = 2048
SAMPLE_TRIES = 100
# typical magnitude of each parameter, used as the optimizer variable scale
PARAM_SCALE = (1.0, 0.01, 0.01, 0.1, 0.05, 0.3, 0.1, 0.05)
EXTRA_START_FACTOR = 4.0
REFINE_ROUNDS = 3
USE_GRID_STARTS = True
_DIRECT_LOG_MASS = math.log(1e-3)  # below this TN mass the CDF is computed in log space
MAX_NFEV = 300  # per start; converged starts typically need well under 100

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DegenerateFitWarning(UserWarning):
    """The fitted pool is too narrow for its histogram; the result is a point-like law."""


@dataclass(frozen=True)
class MixtureParams:
    w: float
    a: float
    b: float
    mu_tn: float
    sigma_tn: float
    lam: float
    mu_sc: float
    sigma_sc: float

    def __post_init__(self):
        bad = []
        if not 0.0 <= self.w <= 1.0:
            bad.append("w outside [0, 1]")
        if not 0.0 <= self.a < self.b <= 1.0:
            bad.append("need 0 <= a < b <= 1")
        if not (self.sigma_tn > 0 and self.sigma_sc > 0):
            bad.append("scales must be positive")
        if not -1.0 < self.lam < 1.0:
            bad.append("skewness outside (-1, 1)")
        if not all(math.isfinite(v) for v in astuple(self)):
            bad.append("non-finite parameter")
        if bad:
            raise InvalidArgument("invalid mixture parameters: " + "; ".join(bad))

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, v) -> "MixtureParams":
        return cls(*(float(x) for x in v))


PARAM_NAMES = tuple(f.name for f in fields(MixtureParams))
# unchecked stand-in used inside the optimizer loop
_RawParams = namedtuple("_RawParams", PARAM_NAMES)


# -- component densities -------------------------------------------------------

def _log_ndtr_diff(lo, hi):
    """log(Phi(hi) - Phi(lo)) for lo <= hi, stable when both sit in one tail."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    flip = lo > 0
    lo, hi = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
    top, bottom = log_ndtr(hi), log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return top + np.log1p(-np.exp(bottom - top))


def _tn_log_mass(xi: MixtureParams) -> float:
    """log(Phi(beta) - Phi(alpha)) of the truncation interval."""
    return float(_log_ndtr_diff((xi.a - xi.mu_tn) / xi.sigma_tn, (xi.b - xi.mu_tn) / xi.sigma_tn))


def tn_pdf(xi: MixtureParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = (x - xi.mu_tn) / xi.sigma_tn
    logp = -0.5 * z * z - _LOG_SQRT_2PI - math.log(xi.sigma_tn) - _tn_log_mass(xi)
    with np.errstate(over="ignore"):
        return np.where((x >= xi.a) & (x <= xi.b), np.exp(logp), 0.0)


def tn_cdf(xi: MixtureParams, x) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), xi.a, xi.b)
    alpha = (xi.a - xi.mu_tn) / xi.sigma_tn
    z = (x - xi.mu_tn) / xi.sigma_tn
    log_mass = _tn_log_mass(xi)
    if log_mass > _DIRECT_LOG_MASS:
        # plain differences taken in the lower tail are exact enough once the mass is not tiny
        if alpha > 0:
            out = (ndtr(-alpha) - ndtr(-z)) / math.exp(log_mass)
        else:
            out = (ndtr(z) - ndtr(alpha)) / math.exp(log_mass)
    else:
        out = np.exp(_log_ndtr_diff(alpha, z) - log_mass)
    return np.clip(np.where(x >= xi.b, 1.0, out), 0.0, 1.0)


def sc_pdf(xi: MixtureParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x - xi.mu_sc
    scale = xi.sigma_sc * (1.0 + xi.lam * np.sign(d))
    return 1.0 / (xi.sigma_sc * math.pi * (1.0 + (np.abs(d) / scale) ** 2))


def sc_cdf(xi: MixtureParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x - xi.mu_sc
    left = 0.5 * (1.0 - xi.lam)
    lo = left + (1.0 - xi.lam) / math.pi * np.arctan(d / (xi.sigma_sc * (1.0 - xi.lam)))
    hi = left + (1.0 + xi.lam) / math.pi * np.arctan(d / (xi.sigma_sc * (1.0 + xi.lam)))
    return np.where(d < 0, lo, hi)


def sc_icdf(xi: MixtureParams, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    left = 0.5 * (1.0 - xi.lam)
    with np.errstate(invalid="ignore", over="ignore"):
        lo = xi.mu_sc + xi.sigma_sc * (1.0 - xi.lam) * np.tan(math.pi * (p / (1.0 - xi.lam) - 0.5))
        hi = xi.mu_sc + xi.sigma_sc * (1.0 + xi.lam) * np.tan(math.pi * (p - left) / (1.0 + xi.lam))
    return np.where(p < left, lo, hi)


# -- mixture -------------------------------------------------------------------

def mixture_pdf(xi: MixtureParams, x) -> np.ndarray:
    """Truncated-normal / skew-Cauchy mixture density."""
    out = xi.w * tn_pdf(xi, x) + (1.0 - xi.w) * sc_pdf(xi, x)
    return out if np.ndim(out) else float(out)


def mixture_cdf(xi: MixtureParams, x) -> np.ndarray:
    out = xi.w * tn_cdf(xi, x) + (1.0 - xi.w) * sc_cdf(xi, x)
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def mixture_icdf(xi: MixtureParams, p) -> np.ndarray:
    """Invert the mixture CDF by bisection.

    The bracket ``[min(a, S^-1(p)), max(b, S^-1(p))]`` with ``S`` the
    skew-Cauchy CDF always contains the root, so no bracket search is needed.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise InvalidArgument("icdf needs probabilities in (0, 1)")
    xs = sc_icdf(xi, p)
    lo = np.minimum(xi.a, xs)
    hi = np.maximum(xi.b, xs)
    if p.size > ICDF_GRID:
        # narrow the bracket with one tabulated CDF over [a, b] before bisecting
        g = np.linspace(xi.a, xi.b, ICDF_GRID + 1)
        fg = mixture_cdf(xi, g)
        k = np.searchsorted(fg, p)
        inside = (k > 0) & (k <= ICDF_GRID)
        kk = np.clip(k, 1, ICDF_GRID)
        lo = np.where(inside, np.maximum(lo, g[kk - 1]), lo)
        hi = np.where(inside, np.minimum(hi, g[kk]), hi)
    lo, hi = lo.ravel().copy(), hi.ravel().copy()
    target = p.ravel()
    todo = np.arange(lo.size)
    for _ in range(200):
        todo = todo[hi[todo] - lo[todo] > ICDF_TOL * np.maximum(1.0, np.abs(lo[todo]))]
        if todo.size == 0:
            break
        mid = lo[todo] + 0.5 * (hi[todo] - lo[todo])
        below = mixture_cdf(xi, mid) < target[todo]
        lo[todo[below]] = mid[below]
        hi[todo[~below]] = mid[~below]
    out = (0.5 * (lo + hi)).reshape(p.shape)
    return out if np.ndim(out) else float(out)


def unit_mass(xi: MixtureParams) -> float:
    """Probability mass the mixture puts on [0, 1]."""
    return float(mixture_cdf(xi, 1.0) - mixture_cdf(xi, 0.0))


def restricted_cdf(xi: MixtureParams, x) -> np.ndarray:
    """CDF of the mixture conditioned on [0, 1]."""
    f0 = mixture_cdf(xi, 0.0)
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return (mixture_cdf(xi, x) - f0) / (mixture_cdf(xi, 1.0) - f0)


def restricted_pdf(xi: MixtureParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inside = (x >= 0.0) & (x <= 1.0)
    return np.where(inside, mixture_pdf(xi, x), 0.0) / unit_mass(xi)


def restricted_icdf(xi: MixtureParams, q) -> np.ndarray:
    f0 = mixture_cdf(xi, 0.0)
    p = f0 + np.asarray(q, dtype=float) * (mixture_cdf(xi, 1.0) - f0)
    return np.clip(mixture_icdf(xi, np.clip(p, 1e-300, 1 - 1e-16)), 0.0, 1.0)


def bernoulli_entropy(p) -> np.ndarray:
    """Entropy in nats; probabilities clamped to [1e-6, 1 - 1e-6]."""
    p = np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def _simpson_nodes(lo: float, hi: float, n: int = SIMPSON_POINTS) -> Tuple[np.ndarray, np.ndarray]:
    x = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    wts = np.ones(n)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    return x, wts * h / 3.0


def expected_entropy(xi: MixtureParams) -> float:
    """Expected Bernoulli entropy of a cell whose value follows ``xi`` restricted to [0, 1].

    Composite Simpson on [1e-6, 1 - 1e-6]; the density is renormalized by
    its quadrature mass on the same nodes.
    """
    x, wts = _simpson_nodes(PROB_EPS, 1.0 - PROB_EPS)
    f = mixture_pdf(xi, x) * wts
    return float((bernoulli_entropy(x) * f).sum() / f.sum())


def restricted_mean(xi: MixtureParams) -> float:
    x, wts = _simpson_nodes(0.0, 1.0)
    f = mixture_pdf(xi, x) * wts
    return float((x * f).sum() / f.sum())


def restricted_std(xi: MixtureParams) -> float:
    x, wts = _simpson_nodes(0.0, 1.0)
    f = mixture_pdf(xi, x) * wts
    f /= f.sum()
    m = (x * f).sum()
    return float(math.sqrt(max(((x - m) ** 2 * f).sum(), 0.0)))


def mixture_mode(xi: MixtureParams) -> float:
    x = np.linspace(0.0, 1.0, int(round(1.0 / MODE_STEP)) + 1)
    return float(x[np.argmax(mixture_pdf(xi, x))])


# -- fitting -------------------------------------------------------------------

def _degenerate_params(values: np.ndarray) -> MixtureParams:
    m = float(np.clip(values.mean(), 0.0, 1.0))
    s = float(max(values.std(), SIGMA_BOUNDS[0]))
    return MixtureParams(1.0, 0.0, 1.0, m, s, 0.0, m, s)


def _second_peak(centers: np.ndarray, density: np.ndarray) -> Optional[float]:
    """Centre of the highest local maximum away from the global peak, if any."""
    smooth = np.convolve(density, np.ones(5) / 5.0, mode="same")
    i = int(np.argmax(smooth))
    is_max = np.r_[False, (smooth[1:-1] > smooth[:-2]) & (smooth[1:-1] >= smooth[2:]), False]
    far = np.abs(np.arange(len(smooth)) - i) > 5
    cand = np.nonzero(is_max & far & (smooth > 0.05 * smooth[i]))[0]
    if cand.size == 0:
        return None
    return float(centers[cand[np.argmax(smooth[cand])]])


def _sc_cdf_grad(xi, x):
    """Skew-Cauchy CDF at ``x`` and its gradient in (lam, mu_sc, sigma_sc)."""
    d = np.asarray(x, dtype=float) - xi.mu_sc
    sgn = np.where(d < 0, -1.0, 1.0)
    k = 1.0 + xi.lam * sgn
    v = d / (xi.sigma_sc * k)
    at = np.arctan(v) / math.pi
    cdf = 0.5 * (1.0 - xi.lam) + k * at
    core = v / (math.pi * (1.0 + v * v))
    d_lam = -0.5 + sgn * (at - core)
    d_mu = -sc_pdf(xi, x)
    d_sigma = -k * core / xi.sigma_sc
    return cdf, np.stack([d_lam, d_mu, d_sigma], axis=-1)


def _model_jac(v: np.ndarray, x: np.ndarray, restricted: bool) -> np.ndarray:
    """Jacobian of the (optionally [0, 1]-restricted) mixture density at ``x``.

    Columns follow the parameter order (w, a, b, mu_tn, sigma_tn, lam, mu_sc,
    sigma_sc). The truncation interval always lies inside [0, 1] during
    fitting, so the truncated normal contributes unit mass to the
    restriction constant.
    """
    xi = _RawParams(*v)
    w, s_t, s_c = xi.w, xi.sigma_tn, xi.sigma_sc
    # truncated normal and its log-derivatives
    z = (x - xi.mu_tn) / s_t
    alpha, beta = (xi.a - xi.mu_tn) / s_t, (xi.b - xi.mu_tn) / s_t
    log_d = _tn_log_mass(xi)
    pa = math.exp(-0.5 * alpha * alpha - _LOG_SQRT_2PI - log_d)  # phi(alpha) / D
    pb = math.exp(-0.5 * beta * beta - _LOG_SQRT_2PI - log_d)
    t = tn_pdf(xi, x)
    dlog_a = pa / s_t
    dlog_b = -pb / s_t
    dlog_mu = z / s_t - (pa - pb) / s_t
    dlog_sig = (z * z - 1.0) / s_t - (alpha * pa - beta * pb) / s_t
    # skew-Cauchy
    d = x - xi.mu_sc
    sgn = np.sign(d)
    k = 1.0 + xi.lam * sgn
    u = np.abs(d) / (s_c * k)
    c = sc_pdf(xi, x)
    q = 2.0 * u / (1.0 + u * u)
    dc_lam = c * q * u * sgn / k
    dc_mu = c * q * sgn / (s_c * k)
    dc_sig = c / s_c * (q * u - 1.0)

    jac = np.zeros((x.size, 8))
    n = w * t + (1.0 - w) * c
    jac[:, 0] = t - c
    jac[:, 1] = w * t * dlog_a
    jac[:, 2] = w * t * dlog_b
    jac[:, 3] = w * t * dlog_mu
    jac[:, 4] = w * t * dlog_sig
    jac[:, 5] = (1.0 - w) * dc_lam
    jac[:, 6] = (1.0 - w) * dc_mu
    jac[:, 7] = (1.0 - w) * dc_sig
    if restricted:
        cdf, grad = _sc_cdf_grad(xi, np.array([0.0, 1.0]))
        m_c = cdf[1] - cdf[0]
        dm_c = grad[1] - grad[0]
        z_r = w + (1.0 - w) * m_c
        jac /= z_r
        jac[:, 0] -= n * (1.0 - m_c) / z_r**2
        jac[:, 5:] -= np.outer(n, (1.0 - w) * dm_c) / z_r**2
    return np.nan_to_num(jac, nan=0.0, posinf=0.0, neginf=0.0)


def _residual_starts(v: np.ndarray, centers: np.ndarray, density: np.ndarray, width: float) -> List[np.ndarray]:
    """Starts that keep one fitted component and re-seed the other from what it leaves unexplained."""
    xi = _RawParams(*v)
    z = max(float(mixture_cdf(xi, 1.0) - mixture_cdf(xi, 0.0)), 1e-12)
    parts = {"tn": xi.w * tn_pdf(xi, centers) / z, "sc": (1.0 - xi.w) * sc_pdf(xi, centers) / z}
    out = []
    for comp, other in (("tn", "sc"), ("sc", "tn")):
        pos = np.clip(density - parts[other], 0.0, None)
        mass = float(pos.sum() * width)
        if mass < 0.01:
            continue
        loc = float((centers * pos).sum() / pos.sum())
        sd = max(float(np.sqrt(((centers - loc) ** 2 * pos).sum() / pos.sum())), 0.005)
        top = float(centers[np.argmax(pos)])
        w = min(max(mass, 0.01), 0.99)
        for mu, sig in ((loc, sd), (top, sd / 2)):
            x = np.array(v, dtype=float)
            if comp == "tn":
                x[0], x[3], x[4] = w, mu, sig
            else:
                x[0], x[5], x[6], x[7] = 1.0 - w, 0.0, mu, sig
            out.append(x)
    return out


def fit_mixture(values, n_bins: int = HIST_BINS, min_values: int = MIN_FIT_VALUES,
                restricted: bool = True, x_scale=PARAM_SCALE) -> MixtureParams:
    """Fit mixture parameters to a pool of cell values in [0, 1].

    The pool is histogrammed into ``n_bins`` equal bins and the model density
    at the bin centres is matched by bounded least squares from several
    starting points, keeping the lowest residual. With ``restricted`` the
    model is the mixture conditioned on [0, 1] (the law that sampling and
    entropy use); otherwise the raw mixture density is matched.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < min_values:
        raise FitError(f"need at least {min_values} values to fit, got {values.size}")
    if np.any(~((values >= 0.0) & (values <= 1.0))):
        raise InvalidArgument("values must lie in [0, 1]")

    counts, edges = np.histogram(values, bins=n_bins, range=(0.0, 1.0))
    if np.ptp(values) < 1.0 / n_bins:
        warnings.warn("pool spans less than one histogram bin; returning a narrow truncated normal",
                      DegenerateFitWarning, stacklevel=2)
        return _degenerate_params(values)

    width = edges[1] - edges[0]
    density = counts / (values.size * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    vmin, vmax = float(values.min()), float(values.max())
    mean, std = float(values.mean()), float(max(values.std(), 1e-3))
    peak = float(centers[np.argmax(density)])

    lb = np.array([0.0, 0.0, vmax, MU_BOUNDS[0], SIGMA_BOUNDS[0], -LAMBDA_BOUND, MU_BOUNDS[0], SIGMA_BOUNDS[0]])
    ub = np.array([1.0, vmin, 1.0, MU_BOUNDS[1], SIGMA_BOUNDS[1], LAMBDA_BOUND, MU_BOUNDS[1], SIGMA_BOUNDS[1]])
    free = ub > lb
    fixed = lb.copy()

    def unpack(theta):
        full = fixed.copy()
        full[free] = theta
        return full

    def residual(theta):
        v = unpack(theta)
        # a < b is guaranteed by the bounds since vmin < vmax here
        xi = _RawParams(*v)
        model = mixture_pdf(xi, centers)
        if restricted:
            model = model / max(float(mixture_cdf(xi, 1.0) - mixture_cdf(xi, 0.0)), 1e-12)
        return np.nan_to_num(model - density, nan=1e6, posinf=1e6)

    def jacobian(theta):
        return _model_jac(unpack(theta), centers, restricted)[:, free]

    def clip(v):
        return np.clip(v, lb, ub)

    starts = [
        clip([0.5, 0.0, 1.0, peak, std, 0.0, peak, std / 4]),
        clip([0.999, 0.0, 1.0, mean, std, 0.0, mean, std]),
        clip([0.001, 0.0, 1.0, mean, std, 0.0, peak, std / 2]),
        clip([0.5, 0.0, 1.0, mean, std / 4, 0.0, peak, std]),
    ]
    second = _second_peak(centers, density)
    if second is not None:
        for p_tn, p_sc in ((second, peak), (peak, second)):
            starts.append(clip([0.5, 0.0, 1.0, p_tn, std / 4, 0.0, p_sc, std / 4]))
    scale = x_scale if isinstance(x_scale, str) else np.asarray(x_scale, dtype=float)[free]
    best, best_cost, best_start, any_cost = None, math.inf, -1, math.inf

    def run(batch, offset):
        nonlocal best, best_cost, best_start, any_cost
        for k, x0 in enumerate(batch, start=offset):
            try:
                res = least_squares(residual, np.asarray(x0)[free], jac=jacobian, bounds=(lb[free], ub[free]),
                                    method="dogbox", x_scale=scale, max_nfev=MAX_NFEV)
            except (ValueError, FloatingPointError) as exc:
                log.debug("start %d failed: %s", k, exc)
                continue
            any_cost = min(any_cost, float(res.cost))
            if res.status > 0 and res.cost < best_cost:
                best, best_cost, best_start = res.x, res.cost, k

    run(starts, 0)
    # cost expected from histogram sampling noise alone; far above it means a local minimum
    noise_cost = 0.5 * float(density.sum()) / (values.size * width)
    extra = []
    if USE_GRID_STARTS and best_cost > EXTRA_START_FACTOR * noise_cost:
        locs = [peak, mean] + ([second] if second is not None else [])
        pairs = [(peak, peak)] + [pair for x in locs[1:] for pair in ((peak, x), (x, peak))]
        extra = [clip([w, 0.0, 1.0, p_tn, s_tn, 0.0, p_sc, s_sc])
                 for w in (0.2, 0.5, 0.8) for p_tn, p_sc in pairs
                 for s_tn, s_sc in ((std, std / 8), (std / 8, std / 2))]
        log.debug("best cost %.3g above noise level %.3g; trying %d more starts", best_cost, noise_cost, len(extra))
        run(extra, len(starts))
    n_tried = len(starts) + len(extra)
    for _ in range(REFINE_ROUNDS):
        if best is None or best_cost <= EXTRA_START_FACTOR * noise_cost:
            break
        before = best_cost
        refine = _residual_starts(unpack(best), centers, density, width)
        run([clip(x) for x in refine], n_tried)
        n_tried += len(refine)
        if best_cost >= before * (1 - 1e-6):
            break
    if best is None:
        raise FitError("least squares did not converge from any start", best_residual=any_cost)
    v = unpack(best)
    v[5] = float(np.clip(v[5], -LAMBDA_BOUND, LAMBDA_BOUND))
    log.debug("fit won by start %d with cost %.3g", best_start, best_cost)
    xi = MixtureParams.from_array(v)
    if min(xi.sigma_tn if xi.w > 0.5 else xi.sigma_sc, 1.0) <= SIGMA_BOUNDS[0] * 1.0001:
        warnings.warn("fitted scale sits at its lower bound", DegenerateFitWarning, stacklevel=2)
    return xi


def l1_distance(xi1: MixtureParams, xi2: MixtureParams, n: int = 20001) -> float:
    """L1 distance between the two laws restricted to [0, 1]."""
    x, wts = _simpson_nodes(0.0, 1.0, n)
    return float((np.abs(restricted_pdf(xi1, x) - restricted_pdf(xi2, x)) * wts).sum())


# -- lookup table --------------------------------------------------------------

@dataclass(frozen=True)
class UqEntry:
    params: MixtureParams
    mean: float
    median: float
    mode: float
    entropy: float
    n_values: int = 0

    @classmethod
    def from_params(cls, xi: MixtureParams, n_values: int = 0) -> "UqEntry":
        return cls(xi, restricted_mean(xi), float(restricted_icdf(xi, 0.5)), mixture_mode(xi),
                   expected_entropy(xi), n_values)


def bin_index(c_hat, n_bins: int = N_BINS) -> np.ndarray:
    """Bin of a mean-map value: floor(c * n_bins), with 1.0 in the top bin."""
    c = np.asarray(c_hat, dtype=float)
    return np.clip(np.floor(c * n_bins), 0, n_bins - 1).astype(int)


TABLE_HEADER = "# scope-kit uq-table v1"
_STAT_NAMES = ("mean", "median", "mode", "entropy")


class UqTable:
    """Per-(bin, horizon) mixture parameters and their derived statistics."""

    def __init__(self, entries: Dict[Tuple[int, int], Optional[UqEntry]],
                 n_bins: int = N_BINS, n_horizons: int = N_HORIZONS):
        self.n_bins = n_bins
        self.n_horizons = n_horizons
        self.entries = {(b, T): entries.get((b, T)) for b in range(n_bins) for T in range(1, n_horizons + 1)}
        if all(e is None for e in self.entries.values()):
            raise TableError("table has no populated entries")

    def __eq__(self, other):
        return (isinstance(other, UqTable) and self.n_bins == other.n_bins
                and self.n_horizons == other.n_horizons and self.entries == other.entries)

    def populated(self) -> List[Tuple[int, int]]:
        return [k for k, e in self.entries.items() if e is not None]

    def entry(self, bin_: int, T: int) -> UqEntry:
        """Entry for (bin, T); absent entries fall back to the nearest populated bin.

        Ties go to the lower bin. A horizon with no populated bin falls back to
        the nearest populated horizon.
        """
        if not 1 <= T <= self.n_horizons:
            raise InvalidArgument(f"horizon {T} outside 1..{self.n_horizons}")
        horizons = sorted(range(1, self.n_horizons + 1), key=lambda h: (abs(h - T), h))
        for h in horizons:
            for b in sorted(range(self.n_bins), key=lambda k: (abs(k - bin_), k)):
                e = self.entries[(b, h)]
                if e is not None:
                    return e
        raise TableError("table has no populated entries")

    def lookup(self, c_hat: float, T: int) -> UqEntry:
        return self.entry(int(bin_index(c_hat, self.n_bins)), T)

    def save(self, path) -> None:
        lines = [TABLE_HEADER, f"bins {self.n_bins} horizons {self.n_horizons}",
                 "bin T status n_values " + " ".join(PARAM_NAMES + _STAT_NAMES)]
        for (b, T), e in sorted(self.entries.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            if e is None:
                lines.append(f"{b} {T} absent")
                continue
            nums = list(astuple(e.params)) + [e.mean, e.median, e.mode, e.entropy]
            lines.append(f"{b} {T} ok {e.n_values} " + " ".join(f"{v:.17g}" for v in nums))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "UqTable":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != TABLE_HEADER:
            raise FormatError("not a uq-table v1 file")
        try:
            _, nb, _, nh = lines[1].split()
            n_bins, n_horizons = int(nb), int(nh)
            entries = {}
            for line in lines[3:]:
                parts = line.split()
                b, T = int(parts[0]), int(parts[1])
                if parts[2] == "absent":
                    entries[(b, T)] = None
                    continue
                if parts[2] != "ok" or len(parts) != 4 + 8 + 4:
                    raise FormatError(f"malformed table row: {line!r}")
                nums = [float(v) for v in parts[4:]]
                entries[(b, T)] = UqEntry(MixtureParams(*nums[:8]), *nums[8:], n_values=int(parts[3]))
        except (ValueError, IndexError, InvalidArgument) as exc:
            raise FormatError(f"malformed table: {exc}") from None
        if len(entries) != n_bins * n_horizons:
            raise FormatError("table is missing (bin, horizon) rows")
        return cls(entries, n_bins, n_horizons)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SCOPE_KIT_THREADS", "1")))
    except ValueError:
        return 1


def _fit_entry(job):
    key, values, min_values = job
    if values.size < min_values:
        return key, None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateFitWarning)
            xi = fit_mixture(values, min_values=min_values)
    except FitError as exc:
        log.warning("entry %s left absent: %s", key, exc)
        return key, None
    return key, UqEntry.from_params(xi, int(values.size))


def collect_pools(bundles: Iterable, n_bins: int = N_BINS, n_horizons: int = N_HORIZONS
                  ) -> Dict[Tuple[int, int], np.ndarray]:
    """Pool sampled cell values by (mean-map bin, horizon)."""
    pools: Dict[Tuple[int, int], List[np.ndarray]] = {}
    for bundle in bundles:
        if bundle.samples is None:
            raise InvalidArgument("bundle carries no samples")
        for T in range(1, min(n_horizons, bundle.horizon) + 1):
            keys = bin_index(bundle.mean_maps[T - 1].cells, n_bins).ravel()
            samples = np.stack([s.cells.ravel() for s in bundle.samples[T - 1]])
            for b in np.unique(keys):
                pools.setdefault((int(b), T), []).append(samples[:, keys == b].ravel())
    return {k: np.concatenate(v) for k, v in pools.items()}


def build_table(bundles: Iterable, n_bins: int = N_BINS, n_horizons: int = N_HORIZONS,
                min_values: int = MIN_FIT_VALUES, pools=None) -> UqTable:
    if pools is None:
        pools = collect_pools(bundles, n_bins, n_horizons)
    jobs = [(k, pools[k], min_values) for k in sorted(pools)]
    threads = _threads()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_fit_entry, jobs))
    else:
        results = [_fit_entry(j) for j in jobs]
    return UqTable(dict(results), n_bins, n_horizons)


# -- sampling and entropy ------------------------------------------------------

def sample_entry(entry: UqEntry, size, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws restricted to [0, 1] by rejection (clamped after 100 tries)."""
    xi = entry.params
    out = mixture_icdf(xi, _open_uniform(rng, size))
    bad = (out < 0.0) | (out > 1.0)
    tries = 1
    while bad.any() and tries < SAMPLE_TRIES:
        out[bad] = mixture_icdf(xi, _open_uniform(rng, int(bad.sum())))
        bad = (out < 0.0) | (out > 1.0)
        tries += 1
    return np.clip(out, 0.0, 1.0)


def _open_uniform(rng, size):
    u = rng.random(size)
    return np.where(u > 0.0, u, np.nextafter(0.0, 1.0))


def sample_cell(table: UqTable, c_hat, T: int, rng: np.random.Generator, size: Optional[int] = None):
    """Draw cell values for mean-map value(s) ``c_hat`` at horizon ``T``.

    Returns an array shaped like ``c_hat`` or, with ``size``, ``(size,) + c_hat.shape``.
    """
    if not 1 <= T <= table.n_horizons:
        raise InvalidArgument(f"horizon {T} outside 1..{table.n_horizons}")
    c = np.asarray(c_hat, dtype=float)
    keys = bin_index(c, table.n_bins)
    lead = () if size is None else (size,)
    out = np.empty(lead + c.shape)
    for b in np.unique(keys):
        mask = keys == b
        n = int(mask.sum())
        draws = sample_entry(table.entry(int(b), T), lead + (n,), rng)
        out[..., mask] = draws
    return out if out.ndim else float(out)


def entropy_map(mean_map: OccupancyGrid, table: UqTable, T: int) -> np.ndarray:
    """Per-cell expected Bernoulli entropy (nats) from the table."""
    keys = bin_index(mean_map.cells, table.n_bins)
    per_bin = np.array([table.entry(b, T).entropy for b in range(table.n_bins)])
    return per_bin[keys]


def entropy_scalar(mean_map: OccupancyGrid, table: UqTable, T: int) -> float:
    return float(entropy_map(mean_map, table, T).mean())


def std_map(mean_map: OccupancyGrid, table: UqTable, T: int) -> np.ndarray:
    keys = bin_index(mean_map.cells, table.n_bins)
    per_bin = np.array([restricted_std(table.entry(b, T).params) for b in range(table.n_bins)])
    return per_bin[keys]


def _as_stack(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return samples.astype(float)
    return np.stack([getattr(s, "cells", s) for s in samples]).astype(float)


def entropy_mc_map(samples) -> np.ndarray:
    """Per-cell Monte Carlo entropy from M sampled maps."""
    stack = _as_stack(samples)
    if stack.shape[0] < 1:
        raise InvalidArgument("need at least one sample")
    return bernoulli_entropy(stack).mean(axis=0)


def entropy_mc(samples) -> float:
    """Cell-normalized Monte Carlo entropy of one horizon's sample maps."""
    return float(entropy_mc_map(samples).mean())


def sample_maps(mean_map: OccupancyGrid, table: UqTable, T: int, M: int,
                rng: np.random.Generator) -> np.ndarray:
    """M sampled maps (M, H, W) drawn cell-independently from the table."""
    return sample_cell(table, mean_map.cells, T, rng, size=M)
