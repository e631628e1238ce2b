"""Federated quantile estimators.

Three families are provided:

* quantile-loss minimization, driven by per-center loss/count queries.  Its
  answers pin down the data values, so results are flagged
  ``privacy_violating``;
* the Yeo-Johnson *table* fit, which needs only a one-group summary table;
* Yeo-Johnson maximum likelihood from per-center moment aggregates, either by
  iterative golden-section search or from a single batched grid of lambdas.

Estimators talk to the centers through small query callables, so the same
code runs in-process (:func:`local_moment_query`, :func:`local_loss_query`)
and over the message runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .binning import SummaryTable
from .errors import DegenerateVariance, TooFewBins
from .yeojohnson import yj_inverse, yj_range, yj_transform

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MLE_RANGE = (-2.0, 4.0)
GRID_SIZE = 25
TABLE_GRID = 21


@dataclass(frozen=True)
class QuantileEstimate:
    p: float
    value: float
    method: str
    communication_rounds: int
    privacy_flag: str
    clamped: bool = False

    def to_dict(self):
        return {"p": self.p, "value": self.value, "method": self.method,
                "rounds": self.communication_rounds, "privacy_flag": self.privacy_flag}


@dataclass(frozen=True)
class YJFit:
    lmbda: float
    location: float
    scale: float
    method: str
    communication_rounds: int = 0
    at_boundary: bool = False

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def golden_max(f: Callable[[float], float], a: float, b: float, tol: float):
    """Maximize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


# --- quantile loss -------------------------------------------------------


def quantile_loss(q: float, values, p: float):
    """Pinball loss at ``q`` and the subgradient ``(1-p)#{y<q} - p#{y>=q}``."""
    v = np.asarray(values, dtype=float)
    below = v < q
    loss = (p - 1.0) * np.sum(v[below] - q) + p * np.sum(v[~below] - q)
    nb = int(below.sum())
    return float(loss), float((1.0 - p) * nb - p * (len(v) - nb))


def center_loss_answers(values, queries):
    """A center's reply to ``[(p, q), ...]``: loss and count below ``q`` for each."""
    v = np.sort(np.asarray(values, dtype=float))
    csum = np.concatenate([[0.0], np.cumsum(v)])
    n = len(v)
    out = []
    for p, q in queries:
        nb = int(np.searchsorted(v, q, side="left"))
        loss = (p - 1.0) * (csum[nb] - nb * q) + p * ((csum[n] - csum[nb]) - (n - nb) * q)
        out.append((float(loss), nb))
    return {"n": n, "answers": out}


def center_range(values):
    v = np.asarray(values, dtype=float)
    return {"n": int(len(v)), "min": float(v.min()), "max": float(v.max())} if len(v) else {"n": 0}


class LossQuery:
    """In-process stand-in for the center round-trips of the loss protocol."""

    def __init__(self, centers):
        self.centers = [np.asarray(c, dtype=float) for c in centers]
        self.rounds = 0

    def range(self):
        self.rounds += 1
        return [center_range(c) for c in self.centers]

    def __call__(self, queries):
        self.rounds += 1
        return [center_loss_answers(c, queries) for c in self.centers]


def local_loss_query(centers):
    return LossQuery(centers)


def estimate_quantiles_loss(query, probs: Sequence[float], max_rounds: int = 64):
    """Minimize the summed pinball loss for every ``p`` at once.

    Each round sends one batch of points to every center.  For each ``p`` two
    brackets are bisected in parallel: one for the left end of the minimizer
    set (sup of ``q`` with negative subgradient) and one for the right end
    (sup of ``q`` with non-positive subgradient); the midpoint is returned.
    Decisions use exact integer counts, so any split of the data into centers
    gives the same answer.  ``max_rounds`` caps all rounds, including the
    first one that asks for each center's range.
    """
    probs = [float(p) for p in probs]
    ranges = [r for r in query.range() if r["n"] > 0]
    if not ranges:
        raise ValueError("no data")
    lo0 = min(r["min"] for r in ranges)
    hi0 = max(r["max"] for r in ranges)
    N = sum(r["n"] for r in ranges)
    xtol = 1e-12 * (1.0 + max(abs(lo0), abs(hi0)))

    def sign(nb, p):
        g = nb - p * N
        return 0 if abs(g) <= 1e-9 * N else (1 if g > 0 else -1)

    # brackets[i] = [lo, hi] per (p, end); invariant: cond(lo) true, cond(hi) false.
    # Nothing lies below the minimum and everything lies below the float just
    # above the maximum, so both ends hold without asking the centers.
    conds = [lambda s: s < 0, lambda s: s <= 0]
    top = math.nextafter(hi0, math.inf)
    brackets = [[lo0, top] for _ in probs for _ in conds]
    while query.rounds < max_rounds and any(b[1] - b[0] > xtol for b in brackets):
        mids = [(b[0] + b[1]) / 2.0 for b in brackets]
        ans = query([(probs[j // 2], mids[j]) for j in range(len(mids))])
        for j, b in enumerate(brackets):
            if b[1] - b[0] <= xtol:
                continue
            nb = sum(r["answers"][j][1] for r in ans)
            if conds[j % 2](sign(nb, probs[j // 2])):
                b[0] = mids[j]
            else:
                b[1] = mids[j]
    ends = [(b[0] + b[1]) / 2.0 for b in brackets]
    return [(ends[2 * i] + ends[2 * i + 1]) / 2.0 for i in range(len(probs))]


def estimate_quantile_loss(centers, p, max_rounds: int = 64):
    """Quantile-loss estimate(s) from raw per-center values, run in-process."""
    probs = [p] if np.isscalar(p) else list(p)
    q = LossQuery(centers)
    vals = estimate_quantiles_loss(q, probs, max_rounds)
    out = [QuantileEstimate(pp, v, "loss", q.rounds, "privacy_violating") for pp, v in zip(probs, vals)]
    return out[0] if np.isscalar(p) else out


# --- Yeo-Johnson table fit -----------------------------------------------


def table_cdf_points(t: SummaryTable, group: str = "x"):
    """Interior limits and the table CDF there, dropping points with F in {0, 1}."""
    f = t.group(group)
    total = f.sum()
    if total <= 0:
        raise TooFewBins(f"group {group} is empty")
    cum = np.cumsum(f)[:-1] / total
    limits = t.boundaries[1:-1]
    # fractional counts can leave F a rounding error away from 0 or 1
    keep = (cum > 1e-12) & (cum < 1 - 1e-12)
    return limits[keep], cum[keep]


def _corr(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else -math.inf


def fit_yj_table(t: SummaryTable, group: str = "x", tol: float = 1e-4) -> YJFit:
    """Fit ``h_lambda(b) ~ a0 + a1 * Phi^-1(F(b))`` over the table's interior limits.

    ``lambda`` is restricted to [0, 2] so the inverse is defined everywhere;
    it maximizes the correlation, found by a coarse grid and golden-section
    refinement.  ``a0, a1`` come from least squares.
    """
    b, F = table_cdf_points(t, group)
    if len(b) < 3:
        raise TooFewBins(f"need at least 3 interior limits, got {len(b)}")
    z = special.ndtri(F)

    def score(lam):
        return _corr(yj_transform(b, lam), z)

    grid = np.linspace(0.0, 2.0, TABLE_GRID)
    scores = [score(g) for g in grid]
    i = int(np.argmax(scores))
    step = grid[1] - grid[0]
    lam, best = golden_max(score, max(0.0, grid[i] - step), min(2.0, grid[i] + step), tol)
    if scores[i] > best:
        lam = float(grid[i])
    h = yj_transform(b, lam)
    zc = z - z.mean()
    a1 = float(zc @ (h - h.mean()) / (zc @ zc))
    a0 = float(h.mean() - a1 * z.mean())
    return YJFit(float(lam), a0, a1, "table", communication_rounds=0)


def estimate_quantile_yj_table(fit: YJFit, p: float, rounds: int = 1) -> QuantileEstimate:
    z = fit.location + fit.scale * float(special.ndtri(p))
    return QuantileEstimate(float(p), float(yj_inverse(z, fit.lmbda)), "yj-table", rounds, "k_anonymous")


# --- Yeo-Johnson likelihood ----------------------------------------------


def sum_parts(values) -> list:
    """Three floats whose exact sum equals ``sum(values)`` to ~2**-150 relative.

    Adding the parts of several centers with ``math.fsum`` gives the correctly
    rounded total, so the result does not depend on how data are split.
    """
    v = list(values)
    s = math.fsum(v)
    r1 = math.fsum(v + [-s])
    r2 = math.fsum(v + [-s, -r1])
    return [s, r1, r2]


def center_moments(values, lambdas):
    """Aggregates a center returns for a batch of lambdas."""
    x = np.asarray(values, dtype=float)
    s1, s2 = [], []
    for lam in lambdas:
        h = yj_transform(x, float(lam))
        s1.append(sum_parts(h))
        s2.append(sum_parts(h * h))
    slog = sum_parts(np.sign(x) * np.log1p(np.abs(x)))
    return {"n": int(len(x)), "slog": slog, "s1": s1, "s2": s2}


def combine_moments(replies):
    """Correctly rounded totals of per-center aggregates."""
    n = sum(r["n"] for r in replies)
    slog = math.fsum(p for r in replies for p in r["slog"])
    k = len(replies[0]["s1"])
    s1 = [math.fsum(p for r in replies for p in r["s1"][i]) for i in range(k)]
    s2 = [math.fsum(p for r in replies for p in r["s2"][i]) for i in range(k)]
    return {"n": n, "slog": slog, "s1": s1, "s2": s2}


class MomentQuery:
    """In-process moment rounds; ``rounds`` counts round-trips."""

    def __init__(self, centers):
        self.centers = [np.asarray(c, dtype=float) for c in centers]
        self.rounds = 0

    def __call__(self, lambdas):
        self.rounds += 1
        return combine_moments([center_moments(c, lambdas) for c in self.centers])


def local_moment_query(centers):
    return MomentQuery(centers)


def _variance(n, s1, s2):
    mean = s1 / n
    var = s2 / n - mean * mean
    # cancellation floor: anything this small relative to the raw moment is zero
    if var <= 1e-13 * max(s2 / n, 1e-300):
        return 0.0
    return var


def yj_loglik(lmbda: float, moments) -> float:
    """Profile log-likelihood from combined aggregates at a single lambda.

    ``moments`` is a combined reply whose ``s1``/``s2`` hold one entry for
    ``lmbda``; a list of per-center replies is combined first.  Returns
    ``-inf`` when the transformed data have no spread.
    """
    if not isinstance(moments, dict):
        moments = combine_moments(list(moments))
    n = moments["n"]
    var = _variance(n, moments["s1"][0], moments["s2"][0])
    if var <= 0:
        return -math.inf
    return -n / 2.0 * math.log(var) + (lmbda - 1.0) * moments["slog"]


def _loglik_batch(lambdas, moments):
    n = moments["n"]
    out = []
    for i, lam in enumerate(lambdas):
        var = _variance(n, moments["s1"][i], moments["s2"][i])
        out.append(-math.inf if var <= 0 else -n / 2.0 * math.log(var) + (lam - 1.0) * moments["slog"])
    return out


def _parabola_vertex(xs, ys):
    (x0, x1, x2), (y0, y1, y2) = xs, ys
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
    if not a < 0:
        return x1
    return min(max(-b / (2.0 * a), x0), x2)


def fit_yj_mle_query(query, mode: str = "iterative", lam_range=MLE_RANGE,
                     tol: float = 1e-10, grid_size: int = GRID_SIZE) -> YJFit:
    """Maximum-likelihood Yeo-Johnson fit through a moment ``query``.

    ``iterative`` spends one round per likelihood evaluation; ``grid`` sends
    one batch of ``grid_size`` lambdas and interpolates a parabola through the
    best grid point and its neighbours.  Either way a last round returns the
    mean and spread at the chosen lambda.
    """
    a, b = lam_range
    if mode == "iterative":
        lam, ll = golden_max(lambda l: yj_loglik(l, query([l])), a, b, tol)
    elif mode == "grid":
        grid = np.linspace(a, b, grid_size)
        ll_grid = _loglik_batch(grid, query(list(grid)))
        i = int(np.argmax(ll_grid))
        ll = ll_grid[i]
        if 0 < i < grid_size - 1 and all(np.isfinite(ll_grid[i - 1:i + 2])):
            lam = float(_parabola_vertex(grid[i - 1:i + 2], ll_grid[i - 1:i + 2]))
        else:
            lam = float(grid[i])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not np.isfinite(ll):
        raise DegenerateVariance("transformed data have zero variance for every lambda")
    m = query([lam])
    n = m["n"]
    var = _variance(n, m["s1"][0], m["s2"][0])
    if var <= 0:
        raise DegenerateVariance("zero variance at the fitted lambda")
    edge = 1e-6 * (b - a)
    return YJFit(float(lam), m["s1"][0] / n, math.sqrt(var),
                 "mle" if mode == "iterative" else "mle_grid",
                 communication_rounds=query.rounds,
                 at_boundary=bool(lam - a < edge or b - lam < edge))


def fit_yj_mle(centers, mode: str = "iterative", **kw) -> YJFit:
    return fit_yj_mle_query(MomentQuery(centers), mode, **kw)


def estimate_quantile_yj_data(fit: YJFit, p: float) -> QuantileEstimate:
    """Inverse transform of ``mu + sigma * Phi^-1(p)``.

    When lambda lies outside [0, 2] the normal quantile can leave the image of
    the transform; the estimate is then the matching infinite endpoint and
    ``clamped`` is set.
    """
    z = fit.location + fit.scale * float(special.ndtri(p))
    lo, hi = yj_range(fit.lmbda)
    clamped = not lo < z < hi
    value = float(yj_inverse(z, fit.lmbda, clip=True))
    method = "yj-mle" if fit.method == "mle" else "yj-mle-grid"
    return QuantileEstimate(float(p), value, method, fit.communication_rounds, "aggregate_only", clamped)


# --- summaries -----------------------------------------------------------


@dataclass(frozen=True)
class QuantileRow:
    p: float
    value: float
    adjusted: bool


def quantile_summary_table(estimator, probs: Sequence[float]):
    """Rows ``(p, Q_p)`` for increasing ``probs``, made non-decreasing.

    ``estimator`` maps a probability to a value or a :class:`QuantileEstimate`.
    Rows raised by the monotone pass carry ``adjusted=True``.
    """
    probs = [float(p) for p in probs]
    if any(not 0 < p < 1 for p in probs) or any(b <= a for a, b in zip(probs, probs[1:])):
        raise ValueError("probs must be strictly increasing in (0, 1)")
    rows = []
    running = -math.inf
    for p in probs:
        v = estimator(p)
        v = float(v.value if isinstance(v, QuantileEstimate) else v)
        adjusted = v < running
        running = max(running, v)
        rows.append(QuantileRow(p, running, adjusted))
    return rows
