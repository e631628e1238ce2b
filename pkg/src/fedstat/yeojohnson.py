"""Yeo-Johnson power transform, its inverse, and its image."""

from __future__ import annotations

import math

import numpy as np

from .errors import OutOfRange

# within this distance of 0 (x >= 0) or 2 (x < 0) the log branch is used
BRANCH_EPS = 1e-8


def yj_transform(x, lmbda: float):
    """Yeo-Johnson transform ``h_lambda(x)``, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    xp, xn = x[pos], x[~pos]
    if abs(lmbda) < BRANCH_EPS:
        out[pos] = np.log1p(xp)
    else:
        out[pos] = np.expm1(lmbda * np.log1p(xp)) / lmbda
    mu = 2.0 - lmbda
    if abs(mu) < BRANCH_EPS:
        out[~pos] = -np.log1p(-xn)
    else:
        out[~pos] = -np.expm1(mu * np.log1p(-xn)) / mu
    return out if out.ndim else float(out)


def yj_range(lmbda: float):
    """Open interval ``(lo, hi)`` that ``h_lambda`` maps the real line onto."""
    if lmbda > 2:
        return -1.0 / (lmbda - 2.0), math.inf
    if lmbda < 0:
        return -math.inf, 1.0 / -lmbda
    return -math.inf, math.inf


def yj_inverse(z, lmbda: float, clip: bool = False):
    """Inverse transform.

    Values outside the image raise :class:`OutOfRange` unless ``clip`` is set,
    in which case they map to the corresponding infinite endpoint.
    """
    z = np.asarray(z, dtype=float)
    lo, hi = yj_range(lmbda)
    bad = (z <= lo) | (z >= hi)
    if np.any(bad) and not clip:
        raise OutOfRange(f"value outside h_lambda(R) = ({lo}, {hi}) for lambda={lmbda}")
    out = np.empty_like(z)
    pos = z >= 0
    zp, zn = z[pos], z[~pos]
    with np.errstate(invalid="ignore", divide="ignore"):
        if abs(lmbda) < BRANCH_EPS:
            out[pos] = np.expm1(zp)
        else:
            out[pos] = np.expm1(np.log1p(lmbda * zp) / lmbda)
        mu = 2.0 - lmbda
        if abs(mu) < BRANCH_EPS:
            out[~pos] = -np.expm1(-zn)
        else:
            out[~pos] = -np.expm1(np.log1p(-mu * zn) / mu)
    if np.any(bad):
        out[bad & (z <= lo)] = -math.inf
        out[bad & (z >= hi)] = math.inf
    return out if out.ndim else float(out)


def signed_log_sum(x) -> float:
    """``sum sign(x) log(|x| + 1)``, the Jacobian term of the log-likelihood."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.sign(x) * np.log1p(np.abs(x))))
