"""Mann-Whitney U statistics and their federated combinations.

The statistic here is the signed pair count ``U = sum_ij S(x_i, y_j)`` with
``S = +1, 0, -1`` as ``y_j`` is above, tied with, or below ``x_i``.  It has
mean zero under the null, so a positive value means ``y`` tends to be larger.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy.stats import rankdata

from .binning import GroupedSample, SummaryTable
from .errors import EmptyGroup, ZeroPValue, ZeroVariance, ZeroVarianceError

SIDES = ("two", "greater", "less")
P_FLOOR = 1e-300


@dataclass(frozen=True)
class CenterTestStat:
    n: int
    m: int
    u: float
    v: float
    z: float
    p: float
    center_id: str = ""

    def to_dict(self):
        return {"center": self.center_id, "n": self.n, "m": self.m, "U": self.u, "V": self.v,
                "Z": None if math.isnan(self.z) else self.z, "p": self.p}

    @classmethod
    def from_dict(cls, d):
        z = d.get("Z")
        return cls(int(d["n"]), int(d["m"]), float(d["U"]), float(d["V"]),
                   math.nan if z is None else float(z), float(d["p"]), str(d.get("center", "")))


@dataclass(frozen=True)
class CombinedTestResult:
    method: str
    statistic: float
    p_value: float
    sidedness: str = "two"
    per_center: tuple = field(default=(), compare=False)
    clamped: bool = False

    def to_dict(self):
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "sidedness": self.sidedness,
            "per_center": [s.to_dict() for s in self.per_center],
        }


def normal_pvalue(z: float, sidedness: str = "two") -> float:
    if sidedness not in SIDES:
        raise ValueError(f"sidedness must be one of {SIDES}")
    if math.isnan(z):
        return 1.0
    if sidedness == "greater":
        return float(special.ndtr(-z))
    if sidedness == "less":
        return float(special.ndtr(z))
    return float(min(1.0, 2.0 * special.ndtr(-abs(z))))


def _check(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0 or len(y) == 0:
        raise EmptyGroup("both groups must be nonempty")
    return x, y


def mwu_u(x, y) -> float:
    """Signed pair-count statistic via ranks, O(N log N)."""
    x, y = _check(x, y)
    n, m = len(x), len(y)
    ranks = rankdata(np.concatenate([x, y]))
    # rank sum of y, midranks give ties half credit
    r_y = ranks[n:].sum()
    u_plus = r_y - m * (m + 1) / 2.0  # #(y > x) + 0.5 #(ties)
    return float(2.0 * u_plus - n * m)


def tie_corrected_variance(n: float, m: float, tie_sizes) -> float:
    """Null variance of U for group sizes ``n, m`` and tie-block sizes.

    Sizes may be fractional (binned tables with redistributed counts).
    """
    N = n + m
    if N < 2:
        return 0.0
    t = np.asarray(tie_sizes, dtype=float)
    correction = float(np.sum(t ** 3 - t)) / (N * (N * N - 1.0))
    v = m * n * (N + 1.0) / 3.0 * (1.0 - correction)
    return max(v, 0.0)


def mwu_var_h0(x, y) -> float:
    x, y = _check(x, y)
    _, t = np.unique(np.concatenate([x, y]), return_counts=True)
    return tie_corrected_variance(len(x), len(y), t)


def _stat(n, m, u, v, sidedness, center_id=""):
    if v > 0:
        z = u / math.sqrt(v)
        p = normal_pvalue(z, sidedness)
    else:
        warnings.warn(f"center {center_id or '?'}: zero null variance, Z undefined", ZeroVariance)
        z, p = math.nan, 1.0
    return CenterTestStat(int(n), int(m), float(u), float(v), z, p, center_id)


def center_stat(s: GroupedSample, sidedness: str = "two") -> CenterTestStat:
    """Per-center U, V, Z and normal-approximation p-value.

    An all-tied center warns :class:`ZeroVariance` and gets ``Z = nan``, ``p = 1``.
    """
    u = mwu_u(s.x, s.y)
    v = mwu_var_h0(s.x, s.y)
    return _stat(len(s.x), len(s.y), u, v, sidedness, s.center_id)


def _usable(stats):
    good = [s for s in stats if s.v > 0]
    if not stats:
        raise ValueError("no centers")
    if not good:
        raise ZeroVarianceError("every center has zero null variance")
    if len(good) < len(stats):
        warnings.warn(f"{len(stats) - len(good)} zero-variance center(s) excluded", ZeroVariance)
    return good


def t_sum(stats: Sequence[CenterTestStat], sidedness: str = "two") -> CombinedTestResult:
    good = _usable(stats)
    t = sum(s.u for s in good) / math.sqrt(sum(s.v for s in good))
    return CombinedTestResult("sum", t, normal_pvalue(t, sidedness), sidedness, tuple(stats))


def weights(stats: Sequence[CenterTestStat]) -> np.ndarray:
    """Power-optimal weights ``n m / sqrt(V)`` under a common P(Y>X) - P(Y<X)."""
    return np.array([s.n * s.m / math.sqrt(s.v) for s in stats])


def t_weighted(stats: Sequence[CenterTestStat], sidedness: str = "two") -> CombinedTestResult:
    good = _usable(stats)
    a = weights(good)
    z = np.array([s.z for s in good])
    t = float(a @ z / math.sqrt(a @ a))
    return CombinedTestResult("weighted", t, normal_pvalue(t, sidedness), sidedness, tuple(stats))


def fisher_combine(pvalues: Sequence[float], floor: float = P_FLOOR) -> CombinedTestResult:
    p = np.asarray(pvalues, dtype=float)
    if len(p) == 0:
        raise ValueError("no p-values")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    clamped = bool(np.any(p <= 0))
    if clamped:
        warnings.warn("zero p-value clamped before combination", ZeroPValue)
        p = np.maximum(p, floor)
    stat = float(-2.0 * np.sum(np.log(p)))
    # chi-square upper tail with 2L degrees of freedom
    pv = float(special.gammaincc(len(p), stat / 2.0))
    return CombinedTestResult("fisher", stat, pv, "two", clamped=clamped)


def fisher_from_stats(stats: Sequence[CenterTestStat], sidedness: str = "two") -> CombinedTestResult:
    """Fisher combination of per-center p-values; ``sidedness`` labels how they were computed."""
    r = fisher_combine([s.p for s in stats])
    return CombinedTestResult("fisher", r.statistic, r.p_value, sidedness, tuple(stats), r.clamped)


def table_u(fx, fy) -> float:
    """U over bin labels: every pair within one bin counts as a tie."""
    fx = np.asarray(fx, dtype=float)
    fy = np.asarray(fy, dtype=float)
    below_x = np.concatenate([[0.0], np.cumsum(fx)[:-1]])  # x mass in lower bins
    above_x = fx.sum() - below_x - fx
    return float(np.sum(fy * (below_x - above_x)))


def mwu_federated_table(t: SummaryTable, sidedness: str = "two") -> CombinedTestResult:
    n, m = float(t.fx.sum()), float(t.fy.sum())
    if n <= 0 or m <= 0:
        raise EmptyGroup("both groups need positive total frequency")
    u = table_u(t.fx, t.fy)
    v = tie_corrected_variance(n, m, t.fx + t.fy)
    if v <= 0:
        return CombinedTestResult("federated_table", 0.0, 1.0, sidedness)
    z = u / math.sqrt(v)
    return CombinedTestResult("federated_table", z, normal_pvalue(z, sidedness), sidedness)


def mwu_combined(centers: Sequence[GroupedSample], sidedness: str = "two") -> CombinedTestResult:
    """Benchmark test on the pooled raw data (not federated)."""
    x = np.concatenate([c.x for c in centers])
    y = np.concatenate([c.y for c in centers])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVariance)
        s = center_stat(GroupedSample(x, y, "pooled"), sidedness)
    stat = 0.0 if math.isnan(s.z) else s.z
    return CombinedTestResult("combined", stat, s.p, sidedness, (s,))

