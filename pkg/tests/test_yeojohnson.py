import math

import numpy as np
import pytest
from scipy import special, stats

from fedstat.errors import OutOfRange
from fedstat.yeojohnson import signed_log_sum, yj_inverse, yj_range, yj_transform

from oracles import yj_direct

LAMBDAS = (-1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0)
X_GRID = np.linspace(-100, 100, 2001)


def test_examples():
    x = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(yj_transform(x, 1.0), x, rtol=1e-15, atol=1e-15)
    assert yj_transform(3.0, 0.0) == pytest.approx(math.log(4), rel=1e-15)
    assert yj_transform(-3.0, 2.0) == pytest.approx(-math.log(4), rel=1e-15)
    assert yj_inverse(math.log(4), 0.0) == pytest.approx(3.0, rel=1e-14)


def test_matches_textbook_formula():
    for lam in LAMBDAS + (-0.7, 0.3, 2.6):
        for x in (-7.5, -1.0, -0.2, 0.0, 0.4, 2.0, 11.0):
            assert yj_transform(x, lam) == pytest.approx(yj_direct(x, lam), rel=1e-12, abs=1e-14)


def test_matches_scipy():
    x = np.linspace(-4, 9, 50)
    for lam in LAMBDAS:
        np.testing.assert_allclose(yj_transform(x, lam), stats.yeojohnson(x, lmbda=lam), rtol=1e-12, atol=1e-14)


def test_round_trip_grid():
    for lam in LAMBDAS:
        z = yj_transform(X_GRID, lam)
        back = yj_inverse(z, lam)
        assert np.max(np.abs(back - X_GRID)) < 1e-10 * np.maximum(1, np.abs(X_GRID)).max()


def test_round_trip_absolute_moderate_range():
    x = np.linspace(-20, 20, 801)
    for lam in LAMBDAS:
        assert np.max(np.abs(yj_inverse(yj_transform(x, lam), lam) - x)) < 1e-10


def test_continuity_at_branch_points():
    xp = np.linspace(0, 50, 101)
    xn = np.linspace(-50, 0, 101)
    for d in (1e-6, -1e-6):
        assert np.max(np.abs(yj_transform(xp, d) - yj_transform(xp, 0.0))) < 1e-4
        assert np.max(np.abs(yj_transform(xn, 2 + d) - yj_transform(xn, 2.0))) < 1e-4
    # inside the switching band the log branch is used exactly
    assert yj_transform(3.0, 5e-9) == yj_transform(3.0, 0.0)


def test_strictly_increasing():
    for lam in LAMBDAS:
        assert np.all(np.diff(yj_transform(X_GRID, lam)) > 0)


def test_range_and_out_of_range():
    assert yj_range(3.0) == (-1.0, math.inf)
    assert yj_range(-1.0) == (-math.inf, 1.0)
    assert yj_range(1.0) == (-math.inf, math.inf)
    with pytest.raises(OutOfRange):
        yj_inverse(-1.0, 3.0)
    with pytest.raises(OutOfRange):
        yj_inverse(1.0, -1.0)
    assert yj_inverse(-1.5, 3.0, clip=True) == -math.inf
    assert yj_inverse(2.0, -1.0, clip=True) == math.inf


def test_signed_log_sum():
    x = [-3.0, 0.0, 1.0, 7.5]
    assert signed_log_sum(x) == pytest.approx(-math.log(4) + math.log(2) + math.log(8.5))


def test_normal_cdf_self_inverse():
    p = np.concatenate([np.logspace(-12, -1, 60), np.linspace(0.01, 0.99, 99), 1 - np.logspace(-1, -12, 60)])
    assert np.max(np.abs(special.ndtr(special.ndtri(p)) - p)) < 1e-9
    # upper tail limited by how close ndtr(z) sits to 1
    z = np.linspace(-8, 5, 131)
    assert np.max(np.abs(special.ndtri(special.ndtr(z)) - z)) < 1e-9
