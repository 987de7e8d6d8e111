"""Hot-kernel dispatch: compiled extension when importable, numpy otherwise.

The backend is chosen once at import.  Set ``EXCURSION_KERNELS=python`` to
force the numpy fallback; :func:`use` switches temporarily (benchmarks and
parity tests).  Both backends produce bitwise-identical results.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_IMPLS = {"python": _fallback}
if _compiled is not None:
    _IMPLS["compiled"] = _compiled

_requested = os.environ.get("EXCURSION_KERNELS", "").strip().lower()
if _requested in _IMPLS:
    BACKEND = _requested
else:
    BACKEND = "compiled" if _compiled is not None else "python"
_impl = _IMPLS[BACKEND]


def available():
    return sorted(_IMPLS)


@contextlib.contextmanager
def use(name):
    """Temporarily route kernel calls to backend ``name``."""
    global _impl, BACKEND
    if name not in _IMPLS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}")
    prev_impl, prev_name = _impl, BACKEND
    _impl, BACKEND = _IMPLS[name], name
    try:
        yield
    finally:
        _impl, BACKEND = prev_impl, prev_name


def uniform_tile(key, row0, nrows, col0, ncols):
    return _impl.uniform_tile(int(key), int(row0), int(nrows), int(col0), int(ncols))


def gemm_update(A, B, L, Y):
    """In place: ``A -= L @ Y`` (and ``B -= L @ Y`` when B is given).

    Each output element subtracts the products ``L[i, t] * Y[t, j]`` one at a
    time in ascending ``t``, so results do not depend on blocking.
    """
    _impl.gemm_update(A, B, L, np.ascontiguousarray(Y))


def qmc_tile(L, R, A, B, Y, mant, expo, rec=None):
    """Advance SOV chains through one diagonal row tile, in place.

    For row ``i`` and chain ``j`` the standardized limits are
    ``a' = A[i, j] / L[i, i]`` and ``b' = B[i, j] / L[i, i]``; the interval mass
    ``q`` multiplies the chain's running probability (kept as a frexp-normalised
    mantissa ``mant`` and binary exponent ``expo``), and
    ``Y[i, j] = Phi^-1(Phi(a') + R[i, j] q)``, evaluated through upper-tail
    probabilities when ``a' > 0``.  Lower rows of ``A``/``B`` then receive the
    within-tile corrections ``L[i2, i] * Y[i, j]``.
    """
    _impl.qmc_tile(L, R, A, B, Y, mant, expo, rec)
