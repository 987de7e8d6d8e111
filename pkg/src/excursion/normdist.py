"""Univariate standard normal kernels: CDF, quantile and interval mass.

Built on the Cephes routines exposed as ``scipy.special.ndtr``, ``erfc``
and ``ndtri``.  In the left tail the CDF corrects for the rounding of
``x / sqrt(2)``, which otherwise costs up to ``x**2`` ulps of relative
accuracy.  The chain kernels (compiled and numpy) and
:func:`interval_prob` use plain ``ndtr`` so that every path agrees bit for
bit; there the extra digits are far below Monte Carlo noise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, ndtr, ndtri

from .errors import DomainError, ParameterError

P_MIN = 1e-300
P_MAX = 1.0 - 1e-16


@dataclass(frozen=True)
class ClampPolicy:
    """Range of probabilities handed to the quantile function."""

    p_min: float = P_MIN
    p_max: float = P_MAX

    def __post_init__(self):
        if not (0.0 < self.p_min < self.p_max < 1.0):
            raise ParameterError(f"need 0 < p_min < p_max < 1, got ({self.p_min}, {self.p_max})")


DEFAULT_CLAMP = ClampPolicy()

# 1/sqrt(2) as an unevaluated sum hi + lo
_C_HI = 0.7071067811865476
_C_LO = -4.833646656726457e-17
_SPLIT = 134217729.0  # 2**27 + 1
_INV_SQRT_PI = 0.5641895835477563


def _two_prod(a, b):
    """``a * b`` as rounded product plus its exact rounding error (Dekker)."""
    p = a * b
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _ndtr(x):
    out = ndtr(x)
    sel = (x < -_C_HI) & (x >= -9.0)
    if sel.any():
        xs = x[sel]
        z, e = _two_prod(-xs, _C_HI)
        e = e + (-xs) * _C_LO
        # erfc(z + e) ~= erfc(z) - 2 e exp(-z^2) / sqrt(pi)
        out[sel] = 0.5 * erfc(z) - e * np.exp(-z * z) * _INV_SQRT_PI
    return out


def _check_nan(x, name):
    if np.isnan(x).any():
        raise DomainError(f"{name} contains NaN")


def _out(x, scalar):
    return float(x) if scalar else x


def norm_cdf(x):
    """Standard normal CDF, ``P(Z <= x)``; accepts +-inf."""
    arr = np.asarray(x, dtype=np.float64)
    _check_nan(arr, "x")
    return _out(_ndtr(np.atleast_1d(arr)).reshape(arr.shape), arr.ndim == 0)


def norm_sf(x):
    """Upper tail ``P(Z > x)``, accurate far into the right tail."""
    arr = np.asarray(x, dtype=np.float64)
    _check_nan(arr, "x")
    return _out(_ndtr(np.atleast_1d(-arr)).reshape(arr.shape), arr.ndim == 0)


def norm_quantile(p, clamp: ClampPolicy = DEFAULT_CLAMP):
    """Inverse standard normal CDF.

    Probabilities outside ``[clamp.p_min, clamp.p_max]`` are clamped, so the
    result is always finite.  ``p`` must lie in ``[0, 1]``.
    """
    arr = np.asarray(p, dtype=np.float64)
    _check_nan(arr, "p")
    if ((arr < 0.0) | (arr > 1.0)).any():
        raise DomainError("p must lie in [0, 1]")
    return _out(ndtri(np.clip(arr, clamp.p_min, clamp.p_max)), arr.ndim == 0)


def interval_prob(a, b):
    """Probability mass of the standard normal on ``[a, b]``.

    When the interval sits in the right half-line the difference is taken
    between upper-tail probabilities, which keeps relative accuracy for
    intervals such as ``[5, 6]``.  Reversed intervals yield 0 with a warning.
    This is the same expression the chain kernels evaluate, so a
    one-dimensional integration reproduces it exactly.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    _check_nan(a_arr, "a")
    _check_nan(b_arr, "b")
    a_arr, b_arr = np.broadcast_arrays(a_arr, b_arr)
    if (a_arr > b_arr).any():
        warnings.warn("interval_prob: a > b for some entries; mass set to 0", RuntimeWarning, stacklevel=2)
    upper = a_arr > 0
    sgn = np.where(upper, -1.0, 1.0)
    q = sgn * (ndtr(sgn * b_arr) - ndtr(sgn * a_arr))
    q = np.maximum(q, 0.0)
    return _out(q, q.ndim == 0)
