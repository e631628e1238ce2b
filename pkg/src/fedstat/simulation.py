"""Monte-Carlo bench for the federated tests and quantile estimators.

Every replicate draws its data from its own seed, derived from
``(seed, replicate, center)``, so replicate ``i`` is the same whatever the
replicate count or the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import special

from .binning import DEFAULT_K, GroupedSample
from .errors import ZeroVariance
from .ranktests import (
    fisher_from_stats,
    mwu_combined,
    mwu_federated_table,
    t_sum,
    t_weighted,
)
from .runtime import collect_stats, make_federation, run_quantile_protocol, run_table_protocol

CENTER_SIZES = {
    3: (698, 476, 326),
    5: (492, 368, 276, 208, 156),
    10: (307, 250, 208, 172, 143, 118, 98, 81, 67, 56),
}
TEST_METHODS = ("combined", "federated", "fisher", "sum", "weighted")
QUANTILE_METHODS = ("loss", "yj-mle", "yj-table")
PROBS = (0.02, 0.25, 0.5, 0.75, 0.98)
# delta values for the power curves; includes the 0.063 setting of the p-value table
POWER_DELTAS = (0.05, 0.063, 0.08, 0.1)


def _sizes(L, sizes):
    if sizes is not None:
        return tuple(int(s) for s in sizes)
    if L not in CENTER_SIZES:
        raise ValueError(f"no default center sizes for L={L}; pass center_sizes")
    return CENTER_SIZES[L]


@dataclass(frozen=True)
class TestSimConfig:
    L: int = 3
    delta: float = 0.0
    sigma_alpha: float = 0.0
    sigma_beta: float = 0.0
    replicates: int = 200
    seed: int = 0
    center_sizes: Optional[tuple] = None
    k: int = DEFAULT_K
    methods: tuple = TEST_METHODS
    sidedness: str = "two"

    __test__ = False  # not a pytest class

    def __post_init__(self):
        sizes = _sizes(self.L, self.center_sizes)
        if len(sizes) != self.L:
            raise ValueError("center_sizes must have L entries")
        object.__setattr__(self, "center_sizes", sizes)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.sidedness not in ("two", "greater", "less"):
            raise ValueError(f"unknown sidedness {self.sidedness!r}")


@dataclass(frozen=True)
class GammaSimConfig:
    r: float = 4.0
    phi: float = 0.1
    L: int = 3
    replicates: int = 200
    seed: int = 0
    center_sizes: Optional[tuple] = None
    k: int = DEFAULT_K
    methods: tuple = QUANTILE_METHODS
    probs: tuple = PROBS

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        sizes = _sizes(self.L, self.center_sizes)
        if len(sizes) != self.L:
            raise ValueError("center_sizes must have L entries")
        object.__setattr__(self, "center_sizes", sizes)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))


def config_from_dict(d: dict):
    """Build a config from its JSON form; Gamma configs are recognised by ``r``."""
    d = dict(d)
    for key in ("center_sizes", "methods", "probs"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return GammaSimConfig(**d) if "r" in d else TestSimConfig(**d)


def config_to_dict(cfg) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}


def _center_rng(seed, replicate, center):
    return np.random.default_rng([int(seed), int(replicate), int(center)])


# --- data ----------------------------------------------------------------


def gen_test_data(cfg: TestSimConfig, replicate: int):
    """Two-group normal data with random center shifts and effects.

    Returns ``(centers, alphas)``.
    """
    centers, alphas = [], []
    for l, n in enumerate(cfg.center_sizes):
        rng = _center_rng(cfg.seed, replicate, l)
        alpha = rng.normal(0.0, cfg.sigma_alpha) if cfg.sigma_alpha > 0 else 0.0
        beta = cfg.delta + (rng.normal(0.0, cfg.sigma_beta) if cfg.sigma_beta > 0 else 0.0)
        x = rng.standard_normal(n) + alpha
        y = rng.standard_normal(n) + alpha + beta
        centers.append(GroupedSample(x, y, f"c{l:02d}"))
        alphas.append(float(alpha))
    return centers, alphas


def gamma_median(r: float) -> float:
    return float(special.gammaincinv(r, 0.5))


def gamma_sigma_alpha(r: float, phi: float) -> float:
    """Log-scale center spread matching a location shift of ``phi`` SDs at the median."""
    q50 = gamma_median(r)
    return math.log((q50 + phi * math.sqrt(r)) / q50)


def gen_gamma_data(cfg: GammaSimConfig, replicate: int):
    """Gamma(r, 1) data scaled by ``exp(alpha_l)`` per center; returns ``(centers, alphas)``."""
    sa = gamma_sigma_alpha(cfg.r, cfg.phi)
    centers, alphas = [], []
    for l, n in enumerate(cfg.center_sizes):
        rng = _center_rng(cfg.seed, replicate, l)
        alpha = rng.normal(0.0, sa) if sa > 0 else 0.0
        centers.append(rng.gamma(cfg.r, 1.0, n) * math.exp(alpha))
        alphas.append(float(alpha))
    return centers, alphas


def mixture_cdf(x: float, alphas, sizes, r: float) -> float:
    w = np.asarray(sizes, dtype=float)
    w = w / w.sum()
    return float(np.sum(w * special.gammainc(r, x / np.exp(np.asarray(alphas, dtype=float)))))


def true_mixture_quantile(alphas, sizes, r: float, p: float, tol: float = 1e-10) -> float:
    """Root of the size-weighted mixture of scaled Gamma CDFs at level ``p``."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    lo, hi = 0.0, 1.0
    while mixture_cdf(hi, alphas, sizes, r) <= p:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        f = mixture_cdf(mid, alphas, sizes, r)
        if abs(f - p) <= tol * 1e-3 or mid in (lo, hi):
            return mid
        if f < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- experiments ---------------------------------------------------------


@dataclass(frozen=True)
class PValueRecord:
    replicate: int
    method: str
    p_value: float
    log_ratio: float
    alphas: tuple = field(default=())


@dataclass(frozen=True)
class ErrorRecord:
    replicate: int
    method: str
    p: float
    estimate: float
    truth: float
    error: float
    alphas: tuple = field(default=())


def _one_test_replicate(args):
    cfg, rep = args
    centers, alphas = gen_test_data(cfg, rep)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVariance)
        side = cfg.sidedness
        out["combined"] = mwu_combined(centers, side).p_value
        coord = make_federation(centers, cfg.k, seed=cfg.seed * 1_000_003 + rep)
        if {"fisher", "sum", "weighted"} & set(cfg.methods):
            stats = collect_stats(coord, side)
            out["fisher"] = fisher_from_stats(stats, side).p_value
            out["sum"] = t_sum(stats, side).p_value
            out["weighted"] = t_weighted(stats, side).p_value
        if "federated" in cfg.methods:
            out["federated"] = mwu_federated_table(run_table_protocol(coord).table, side).p_value
    base = out["combined"]
    recs = []
    for m in cfg.methods:
        p = out[m]
        lr = math.log(p / base) if p > 0 and base > 0 else math.nan
        recs.append(PValueRecord(rep, m, p, lr, tuple(alphas)))
    return recs


def _one_quantile_replicate(args):
    cfg, rep = args
    centers, alphas = gen_gamma_data(cfg, rep)
    truth = [true_mixture_quantile(alphas, cfg.center_sizes, cfg.r, p) for p in cfg.probs]
    samples = [GroupedSample(c, [], f"c{l:02d}") for l, c in enumerate(centers)]
    recs = []
    sd = math.sqrt(cfg.r)
    for m in cfg.methods:
        coord = make_federation(samples, cfg.k, seed=cfg.seed * 1_000_003 + rep)
        est, _ = run_quantile_protocol(coord, m, cfg.probs)
        for e, t in zip(est, truth):
            recs.append(ErrorRecord(rep, m, e.p, e.value, t, (e.value - t) / sd, tuple(alphas)))
    return recs


def _run(fn, cfg, threads):
    jobs = [(cfg, i) for i in range(cfg.replicates)]
    if threads and threads > 1:
        with ProcessPoolExecutor(threads) as ex:
            chunks = list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        chunks = [fn(j) for j in jobs]
    return [r for c in chunks for r in c]


def run_testing_experiment(cfg: TestSimConfig, threads: int = 1) -> List[PValueRecord]:
    """p-values of every method per replicate, with log(p / p_combined)."""
    return _run(_one_test_replicate, cfg, threads)


def run_quantile_experiment(cfg: GammaSimConfig, threads: int = 1) -> List[ErrorRecord]:
    """Normalized errors ``(Q_hat - Q) / sqrt(r)`` per replicate, method and level."""
    return _run(_one_quantile_replicate, cfg, threads)


# --- summaries -----------------------------------------------------------


@dataclass(frozen=True)
class ErrorSummary:
    r: float
    L: int
    method: str
    p: float
    bias: float
    sd: float
    mse: float
    ratio: float
    n: int


def error_stats(errors) -> tuple:
    """``(bias, sd, mse, bias^2/var)``; ``mse = bias^2 + sd^2`` with the n-1 SD.

    This exceeds ``mean(error^2)`` by ``sd^2 / n``.  A zero SD gives a ratio of
    ``inf`` (or 0 when the bias is also 0).
    """
    e = np.asarray(errors, dtype=float)
    bias = float(e.mean())
    sd = float(e.std(ddof=1)) if len(e) > 1 else 0.0
    mse = bias * bias + sd * sd
    if sd > 0:
        ratio = bias * bias / (sd * sd)
    else:
        ratio = math.inf if bias != 0 else 0.0
    return bias, sd, mse, ratio


def summarize(records: Sequence[ErrorRecord], r: float, L: int) -> List[ErrorSummary]:
    if not records:
        raise ValueError("no records")
    groups = {}
    for rec in records:
        groups.setdefault((rec.method, rec.p), []).append(rec.error)
    out = []
    for (m, p), errs in groups.items():
        b, s, mse, ratio = error_stats(errs)
        out.append(ErrorSummary(r, L, m, p, b, s, mse, ratio, len(errs)))
    return out


@dataclass(frozen=True)
class PValueSummary:
    method: str
    n: int
    median: float
    q25: float
    frac_05: float
    frac_01: float
    ks_uniform: float


def ks_uniform(p) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF of ``p`` and U(0, 1)."""
    p = np.sort(np.asarray(p, dtype=float))
    n = len(p)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - p), np.max(p - (i - 1) / n)))


def summarize_pvalues(records: Sequence[PValueRecord]) -> List[PValueSummary]:
    groups = {}
    for rec in records:
        groups.setdefault(rec.method, []).append(rec.p_value)
    out = []
    for m, ps in groups.items():
        a = np.asarray(ps)
        out.append(PValueSummary(m, len(a), float(np.median(a)), float(np.quantile(a, 0.25)),
                                 float(np.mean(a < 0.05)), float(np.mean(a < 0.01)), ks_uniform(a)))
    return out


# --- CSV -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ";".join(repr(float(a)) for a in v)
    return str(v)


def records_csv(records) -> str:
    if not records:
        return ""
    cols = list(asdict(records[0]).keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in records:
        d = asdict(rec)
        w.writerow([_fmt(d[c]) for c in cols])
    return buf.getvalue()


def summary_csv(rows) -> str:
    """Long-format summary, one row per (group, method[, quantile])."""
    return records_csv(list(rows))
