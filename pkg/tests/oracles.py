"""Slow, definition-level reference implementations used as test oracles.

Nothing here imports the package under test.
"""

import math
from collections import Counter

import numpy as np
from scipy import integrate, stats


def u_pairs(x, y):
    """O(nm) pair enumeration of sum S(x_i, y_j)."""
    total = 0
    for a in map(float, x):
        for b in map(float, y):
            total += (b > a) - (b < a)
    return total


def var_expanded(x, y):
    """Tie-corrected null variance from pooled multiplicities, in exact rationals."""
    from fractions import Fraction

    n, m = len(x), len(y)
    N = n + m
    t = Counter(float(v) for v in list(x) + list(y)).values()
    corr = Fraction(sum(c ** 3 - c for c in t), N * (N * N - 1))
    return float(Fraction(n * m * (N + 1), 3) * (1 - corr))


def var_by_permutation(x, y):
    """Exact null variance of U by enumerating all label assignments (tiny N only)."""
    from itertools import combinations

    pooled = list(x) + list(y)
    n = len(x)
    us = []
    for idx in combinations(range(len(pooled)), n):
        s = set(idx)
        xs = [pooled[i] for i in idx]
        ys = [pooled[i] for i in range(len(pooled)) if i not in s]
        us.append(u_pairs(xs, ys))
    return float(np.var(us))


def yj_direct(x, lam):
    """Yeo-Johnson by the textbook four branches, with plain ** and log."""
    if x >= 0:
        return math.log(x + 1) if lam == 0 else ((x + 1) ** lam - 1) / lam
    return -math.log(1 - x) if lam == 2 else -((1 - x) ** (2 - lam) - 1) / (2 - lam)


def loglik_direct(x, lam):
    """Profile log-likelihood on pooled data: -N/2 log(var_mle) + (lam-1) sum sign log(|x|+1)."""
    h = np.array([yj_direct(v, lam) for v in x])
    var = np.mean((h - h.mean()) ** 2)
    return -len(x) / 2 * math.log(var) + (lam - 1) * sum(math.copysign(math.log1p(abs(v)), v) for v in x)


def pinball(q, values, p):
    return sum((p - 1) * (v - q) if v < q else p * (v - q) for v in values)


def quantile_minimizer_set(values, p):
    """Interval [lo, hi] of minimizers of the summed pinball loss, from order statistics."""
    v = sorted(values)
    n = len(v)
    np_ = n * p
    if abs(np_ - round(np_)) < 1e-12 and 0 < round(np_) < n:
        j = int(round(np_))
        return v[j - 1], v[j]
    j = math.ceil(np_)
    return v[j - 1], v[j - 1]


def golden_min_oracle(f, a, b, tol=1e-13):
    """Plain golden-section minimization of a convex f on [a, b]."""
    g = (math.sqrt(5) - 1) / 2
    while b - a > tol * (1 + abs(a) + abs(b)):
        c, d = b - g * (b - a), a + g * (b - a)
        if f(c) <= f(d):
            b = d
        else:
            a = c
    return (a + b) / 2


def gamma_median_oracle(r):
    return stats.gamma(r).median()


def mixture_cdf_quad(x, alphas, sizes, r):
    """Mixture CDF by numerical integration of the Gamma density (independent of gammainc)."""
    w = np.asarray(sizes, float) / np.sum(sizes)
    out = 0.0
    for wl, a in zip(w, alphas):
        s = math.exp(a)
        val, _ = integrate.quad(lambda t: t ** (r - 1) * math.exp(-t) / math.gamma(r), 0, x / s,
                                epsabs=1e-14, epsrel=1e-13)
        out += wl * val
    return out


def chi2_sf(x, df):
    return stats.chi2.sf(x, df)


def coarsen(values, boundaries):
    """Bin label per value under (c_{b-1}, c_b] membership, first bin closed on the left."""
    b = np.asarray(boundaries, float)
    idx = np.searchsorted(b, np.asarray(values, float), side="left") - 1
    return np.clip(idx, 0, len(b) - 2)
