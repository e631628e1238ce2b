import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedstat.binning import GroupedSample, SummaryTable, bin_single_center
from fedstat.errors import EmptyGroup, ZeroPValue, ZeroVariance, ZeroVarianceError
from fedstat.ranktests import (
    CenterTestStat,
    center_stat,
    fisher_combine,
    mwu_combined,
    mwu_federated_table,
    mwu_u,
    mwu_var_h0,
    normal_pvalue,
    t_sum,
    t_weighted,
    table_u,
    tie_corrected_variance,
)

from oracles import chi2_sf, coarsen, u_pairs, var_by_permutation, var_expanded

# frozen from the oracles (exact-rational variance, scipy chi-square tail)
Z_EXAMPLE = 1.5491933384829668  # 4 / sqrt(20/3)
T_SUM_TWO = 2.1908902300206643  # 8 / sqrt(40/3)
T_W_EXAMPLE = 1.9106508580675223  # weights 12.217, 3.780
FISHER_T = 11.982929094215963
FISHER_P = 0.017478661367769956


def stat(u, v, n=2, m=2, sided="two"):
    z = u / math.sqrt(v)
    return CenterTestStat(n, m, u, v, z, normal_pvalue(z, sided))


# --- U and V -------------------------------------------------------------


def test_u_examples():
    assert mwu_u([1, 2], [3, 4]) == 4
    assert mwu_u([1, 2, 2, 5], [5, 2, 1, 2]) == 0
    assert mwu_u([1, 2], [2, 3]) == 3


def test_u_empty_group():
    with pytest.raises(EmptyGroup):
        mwu_u([], [1.0])


def test_var_examples():
    assert mwu_var_h0([1, 2], [3, 4]) == pytest.approx(20 / 3, rel=1e-15)
    assert mwu_var_h0([3, 3], [3, 3, 3]) == 0
    r = np.random.default_rng(0)
    x, y = r.random(13), r.random(8)
    assert mwu_var_h0(x, y) == pytest.approx(13 * 8 * 22 / 3, rel=1e-14)


def test_var_matches_permutation_distribution():
    for x, y in (([1, 2, 2], [2, 3, 3]), ([0, 0, 1], [1, 1]), ([1, 2, 3], [4, 5])):
        assert mwu_var_h0(x, y) == pytest.approx(var_by_permutation(x, y), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=1, max_size=60),
       st.lists(st.integers(-4, 4), min_size=1, max_size=60))
def test_u_and_var_match_oracles(x, y):
    assert mwu_u(x, y) == u_pairs(x, y)
    assert mwu_u(x, y) == -mwu_u(y, x)
    assert mwu_var_h0(x, y) == pytest.approx(var_expanded(x, y), rel=1e-12, abs=1e-9)


def test_shift_increases_u():
    r = np.random.default_rng(1)
    for _ in range(200):
        x, y = r.normal(size=r.integers(1, 30)), r.normal(size=r.integers(1, 30))
        assert mwu_u(x, y + r.random()) >= mwu_u(x, y)


# --- per-center ------------------------------------------------------------


def test_center_stat_examples():
    s = center_stat(GroupedSample([1, 2, 3], [3, 2, 1], "c"))
    assert s.z == 0 and s.p == 1
    s = center_stat(GroupedSample([1, 2], [3, 4], "c"))
    assert s.z == pytest.approx(Z_EXAMPLE, rel=1e-12)
    with pytest.warns(ZeroVariance):
        s = center_stat(GroupedSample([2, 2], [2, 2], "c"))
    assert math.isnan(s.z) and s.p == 1


def test_sidedness():
    s = GroupedSample([1, 2, 3, 4], [3, 5, 6, 7], "c")
    two = center_stat(s, "two").p
    g = center_stat(s, "greater").p
    l = center_stat(s, "less").p
    assert two == pytest.approx(2 * g)
    assert g + l == pytest.approx(1)


def test_pvalue_monotone_in_statistic():
    z = np.linspace(0, 6, 200)
    for side in ("two", "greater"):
        p = [normal_pvalue(v, side) for v in z]
        assert all(b <= a for a, b in zip(p, p[1:]))


# --- combined tests ------------------------------------------------------


def test_t_sum_examples():
    one = stat(4, 20 / 3)
    assert t_sum([one]).statistic == pytest.approx(one.z)
    assert t_sum([one, one]).statistic == pytest.approx(T_SUM_TWO, rel=1e-12)
    r = t_sum([stat(0, 5), stat(0, 7)])
    assert r.statistic == 0 and r.p_value == 1


def test_t_weighted_examples():
    one = stat(4, 20 / 3)
    assert t_weighted([one]).statistic == pytest.approx(one.z)
    assert t_weighted([one, one]).statistic == pytest.approx(t_sum([one, one]).statistic)
    v1, v2 = 100 * 100 * 201 / 3, 10 * 10 * 21 / 3
    a = CenterTestStat(100, 100, 2 * math.sqrt(v1), v1, 2.0, normal_pvalue(2.0))
    b = CenterTestStat(10, 10, 0.0, v2, 0.0, 1.0)
    assert t_weighted([a, b]).statistic == pytest.approx(T_W_EXAMPLE, rel=1e-12)


def test_zero_variance_centers_excluded():
    good = stat(4, 20 / 3)
    bad = CenterTestStat(2, 2, 0.0, 0.0, math.nan, 1.0)
    with pytest.warns(ZeroVariance):
        assert t_sum([good, bad]).statistic == pytest.approx(good.z)
    with pytest.raises(ZeroVarianceError):
        t_weighted([bad])


def test_fisher_examples():
    r = fisher_combine([1, 1])
    assert r.statistic == 0 and r.p_value == 1
    r = fisher_combine([0.05, 0.05])
    assert r.statistic == pytest.approx(FISHER_T, rel=1e-12)
    assert r.p_value == pytest.approx(FISHER_P, rel=1e-10)
    for p in (0.3, 0.01, 1e-8):
        assert fisher_combine([p]).p_value == pytest.approx(p, rel=1e-10)


def test_fisher_matches_chi2():
    r = np.random.default_rng(2)
    for _ in range(100):
        p = r.random(r.integers(1, 12))
        out = fisher_combine(p)
        assert out.p_value == pytest.approx(chi2_sf(out.statistic, 2 * len(p)), rel=1e-9)


def test_fisher_zero_p_is_clamped():
    with pytest.warns(ZeroPValue):
        r = fisher_combine([0.0, 0.5])
    assert r.clamped and 0 <= r.p_value <= 1


def test_single_center_methods_agree():
    r = np.random.default_rng(3)
    s = GroupedSample(r.normal(size=40), r.normal(0.5, 1, 35), "c")
    cs = center_stat(s)
    comb = mwu_combined([s])
    assert t_sum([cs]).statistic == pytest.approx(comb.statistic, rel=1e-12)
    assert t_weighted([cs]).statistic == pytest.approx(comb.statistic, rel=1e-12)


def test_combined_disjoint_is_maximal():
    a = GroupedSample([1, 2, 3], [10, 11], "a")
    b = GroupedSample([4, 5], [12, 13, 14], "b")
    r = mwu_combined([a, b])
    assert r.per_center[0].u == 5 * 5


def test_combined_matches_oracle():
    r = np.random.default_rng(4)
    for _ in range(50):
        cs = [GroupedSample(r.integers(0, 9, r.integers(1, 20)), r.integers(0, 9, r.integers(1, 20)), f"c{i}")
              for i in range(3)]
        x = np.concatenate([c.x for c in cs])
        y = np.concatenate([c.y for c in cs])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = mwu_combined(cs)
        assert res.per_center[0].u == u_pairs(x, y)


# --- table statistic -----------------------------------------------------


def test_table_examples():
    t = SummaryTable([0, 1, 2], [10, 0], [0, 10], 10)
    assert table_u(t.fx, t.fy) == 100
    one = mwu_federated_table(SummaryTable([0, 1], [10], [12], 10))
    assert one.statistic == 0 and one.p_value == 1


def test_table_variance_equals_expanded():
    r = np.random.default_rng(5)
    for _ in range(200):
        fx = r.integers(0, 6, 5)
        fy = r.integers(0, 6, 5)
        if fx.sum() == 0 or fy.sum() == 0:
            continue
        x = np.repeat(np.arange(5), fx)
        y = np.repeat(np.arange(5), fy)
        assert tie_corrected_variance(fx.sum(), fy.sum(), fx + fy) == pytest.approx(var_expanded(x, y), rel=1e-12)
        assert table_u(fx, fy) == u_pairs(x, y)


def test_table_u_equals_coarsened_data():
    r = np.random.default_rng(6)
    for i in range(200):
        x = r.normal(size=r.integers(10, 90))
        y = r.normal(0.3, 1, r.integers(10, 90))
        t = bin_single_center(GroupedSample(x, y, "c"), 10, r)
        lx, ly = coarsen(x, t.boundaries), coarsen(y, t.boundaries)
        assert table_u(t.fx, t.fy) == u_pairs(lx, ly) == mwu_u(lx, ly)
        res = mwu_federated_table(t)
        if t.n_bins > 1:
            assert res.statistic == pytest.approx(mwu_u(lx, ly) / math.sqrt(mwu_var_h0(lx, ly)), rel=1e-12)
