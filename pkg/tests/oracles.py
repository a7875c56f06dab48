"""Independent reference implementations used only by the tests."""
import itertools
import math

import numpy as np
from scipy.stats import truncnorm


def _dist(u, v):
    # textbook Euclidean distance, rounded the same way as sqrt(dx^2 + dy^2) in numpy
    dx, dy = u[0] - v[0], u[1] - v[1]
    return math.sqrt(dx * dx + dy * dy)


def brute_ospa(X, Y, c=10.0, p=1):
    """OSPA by enumerating every injection of the smaller set into the larger."""
    X = [tuple(x) for x in X]
    Y = [tuple(y) for y in Y]
    if len(X) > len(Y):
        X, Y = Y, X
    m, n = len(X), len(Y)
    if n == 0:
        return 0.0
    best = math.inf
    for perm in itertools.permutations(range(n), m):
        s = sum(min(_dist(X[i], Y[j]), c) ** p for i, j in enumerate(perm))
        best = min(best, s)
    if m == 0:
        best = 0.0
    return ((best + c**p * (n - m)) / n) ** (1.0 / p)


def mixture_pdf_ref(xi, x):
    """Direct evaluation of the truncated-normal plus skew-Cauchy density."""
    x = np.asarray(x, dtype=float)
    lo, hi = (xi.a - xi.mu_tn) / xi.sigma_tn, (xi.b - xi.mu_tn) / xi.sigma_tn
    tn = truncnorm.pdf(x, lo, hi, loc=xi.mu_tn, scale=xi.sigma_tn)
    s = xi.sigma_sc * (1.0 + xi.lam * np.sign(x - xi.mu_sc))
    sc = 1.0 / (math.pi * xi.sigma_sc * (1.0 + ((x - xi.mu_sc) / s) ** 2))
    return xi.w * tn + (1.0 - xi.w) * sc
