# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: SOV chain tile update, fixed-order GEMM, counter RNG.

Bitwise twins of the routines in ``_fallback.py``; built with
-ffp-contract=off so no multiply-add is fused.
"""
from libc.math cimport frexp, ldexp
from libc.stdint cimport int64_t, uint64_t
from scipy.special.cython_special cimport ndtr, ndtri

import numpy as np

cdef double P_MIN = 1e-300
cdef double P_MAX = 1.0 - 1e-16
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def uniform_tile(key, Py_ssize_t row0, Py_ssize_t nrows, Py_ssize_t col0, Py_ssize_t ncols):
    cdef uint64_t k = key & 0xFFFFFFFFFFFFFFFF
    out = np.empty((nrows, ncols), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef uint64_t ctr, z
    with nogil:
        for i in range(nrows):
            for j in range(ncols):
                ctr = ((<uint64_t>(col0 + j)) << 32) | (<uint64_t>(row0 + i))
                z = _mix(_mix(ctr + GOLDEN) ^ k)
                o[i, j] = (<double>(z >> 11) + 0.5) * 1.1102230246251565e-16
    return out


def gemm_update(double[:, ::1] A, B, const double[:, :] L, const double[:, ::1] Y):
    cdef Py_ssize_t mi = A.shape[0], w = A.shape[1], kk = L.shape[1]
    cdef Py_ssize_t i, t, j
    cdef double l, p
    cdef double[:, ::1] Bv
    if B is None:
        with nogil:
            for i in range(mi):
                for t in range(kk):
                    l = L[i, t]
                    for j in range(w):
                        A[i, j] = A[i, j] - l * Y[t, j]
        return
    Bv = B
    with nogil:
        for i in range(mi):
            for t in range(kk):
                l = L[i, t]
                for j in range(w):
                    p = l * Y[t, j]
                    A[i, j] = A[i, j] - p
                    Bv[i, j] = Bv[i, j] - p


def qmc_tile(const double[:, :] L, const double[:, ::1] R, double[:, ::1] A, double[:, ::1] B,
             double[:, ::1] Y, double[::1] mant, int64_t[::1] expo, rec=None):
    cdef Py_ssize_t mi = A.shape[0], w = A.shape[1]
    cdef Py_ssize_t i, i2, j
    cdef double d, ap, bp, sgn, pa, pb, q, u, y, l, p
    cdef int e
    cdef bint record = rec is not None
    cdef double[:, ::1] rv
    if record:
        rv = rec
    with nogil:
        for i in range(mi):
            d = L[i, i]
            for j in range(w):
                ap = A[i, j] / d
                bp = B[i, j] / d
                sgn = -1.0 if ap > 0 else 1.0
                pa = ndtr(sgn * ap)
                pb = ndtr(sgn * bp)
                q = sgn * (pb - pa)
                if q < 0.0:
                    q = 0.0
                u = pa + sgn * (R[i, j] * q)
                if u < P_MIN:
                    u = P_MIN
                elif u > P_MAX:
                    u = P_MAX
                Y[i, j] = sgn * ndtri(u)
                mant[j] = frexp(mant[j] * q, &e)
                expo[j] += e
                if record:
                    rv[i, j] = ldexp(mant[j], <int>expo[j])
            for i2 in range(i + 1, mi):
                l = L[i2, i]
                for j in range(w):
                    p = l * Y[i, j]
                    A[i2, j] = A[i2, j] - p
                    B[i2, j] = B[i2, j] - p
