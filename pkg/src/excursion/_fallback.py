"""Pure-numpy implementations of the hot kernels.

Every routine here performs the same IEEE-754 operations, in the same order
per element, as its counterpart in ``_kernels.pyx``.  The two backends are
therefore interchangeable without changing a single output bit.
"""
import numpy as np
from scipy.special import ndtr, ndtri

from .normdist import P_MAX, P_MIN

_M64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def uniform_tile(key, row0, nrows, col0, ncols):
    """Counter-based uniforms in (0, 1); entry (i, j) depends only on (key, col0+j, row0+i)."""
    rows = np.arange(row0, row0 + nrows, dtype=np.uint64)
    cols = np.arange(col0, col0 + ncols, dtype=np.uint64)
    ctr = (cols[None, :] << np.uint64(32)) | rows[:, None]
    z = _mix(ctr + np.uint64(GOLDEN))
    z = _mix(z ^ np.uint64(key & _M64))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def gemm_update(A, B, L, Y):
    """A -= L @ Y (and B likewise), subtracting one inner term at a time in ascending order."""
    for t in range(L.shape[1]):
        prod = L[:, t, None] * Y[t]
        A -= prod
        if B is not None:
            B -= prod


def qmc_tile(L, R, A, B, Y, mant, expo, rec=None):
    """Advance one row tile of SOV chains (see ``kernels.qmc_tile``)."""
    mi = A.shape[0]
    for i in range(mi):
        d = L[i, i]
        ap = A[i] / d
        bp = B[i] / d
        sgn = np.where(ap > 0, -1.0, 1.0)
        pa = ndtr(sgn * ap)
        pb = ndtr(sgn * bp)
        q = np.maximum(sgn * (pb - pa), 0.0)
        u = np.clip(pa + sgn * (R[i] * q), P_MIN, P_MAX)
        Y[i] = sgn * ndtri(u)
        m, e = np.frexp(mant * q)
        mant[:] = m
        expo += e
        if rec is not None:
            rec[i] = np.ldexp(mant, expo)
        if i + 1 < mi:
            prod = L[i + 1:, i, None] * Y[i]
            A[i + 1:] -= prod
            B[i + 1:] -= prod
