"""Tile-layout dense matrices and the tiled right-looking Cholesky factorization."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas, lapack

from . import kernels
from .errors import FactorizationError, ParameterError, ShapeError
from .runtime import ExecutionPolicy, build_cholesky_dag, execute


@dataclass(frozen=True)
class TileLayout:
    """Partition of an order-``n`` matrix into ``m``-sized tiles (ragged last tile)."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ParameterError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        if self.m > self.n:
            object.__setattr__(self, "m", self.n)

    @property
    def nt(self):
        return -(-self.n // self.m)

    def size(self, i):
        return min(self.m, self.n - i * self.m)

    def start(self, i):
        return i * self.m

    def span(self, i):
        s = i * self.m
        return slice(s, s + self.size(i))


STORAGE_KINDS = ("full", "symmetric", "lower")


@dataclass
class DenseTileMatrix:
    """Matrix stored as column-major tiles.

    ``storage`` is ``"full"`` (every tile), ``"symmetric"`` (tiles with
    ``i >= j``; the upper triangle mirrors them) or ``"lower"`` (tiles with
    ``i >= j``; the upper triangle is zero, as for a Cholesky factor).
    """

    layout: TileLayout
    tiles: dict = field(default_factory=dict)
    storage: str = "full"

    def __post_init__(self):
        if self.storage not in STORAGE_KINDS:
            raise ParameterError(f"unknown storage {self.storage!r}")

    @property
    def symmetric(self):
        return self.storage == "symmetric"

    @classmethod
    def from_dense(cls, X, m, symmetric=False, storage=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {X.shape}")
        storage = storage or ("symmetric" if symmetric else "full")
        lay = TileLayout(X.shape[0], m)
        tiles = {}
        for i in range(lay.nt):
            for j in range(lay.nt if storage == "full" else i + 1):
                tiles[i, j] = np.asfortranarray(X[lay.span(i), lay.span(j)])
        if storage == "lower":
            for i in range(lay.nt):
                tiles[i, i] = np.asfortranarray(np.tril(tiles[i, i]))
        return cls(lay, tiles, storage)

    def tile(self, i, j):
        if j > i and self.storage != "full":
            if self.storage == "symmetric":
                return self.tiles[j, i].T
            return np.zeros((self.layout.size(i), self.layout.size(j)), order="F")
        return self.tiles[i, j]

    def to_dense(self):
        lay = self.layout
        out = np.zeros((lay.n, lay.n))
        for (i, j), t in self.tiles.items():
            out[lay.span(i), lay.span(j)] = t
            if self.storage == "symmetric" and i != j:
                out[lay.span(j), lay.span(i)] = t.T
        if self.storage == "symmetric":
            # diagonal tiles may hold only a valid lower triangle
            for i in range(lay.nt):
                d = self.tiles[i, i]
                out[lay.span(i), lay.span(i)] = np.tril(d) + np.tril(d, -1).T
        return out

    def copy(self):
        return DenseTileMatrix(self.layout, {k: v.copy(order="F") for k, v in self.tiles.items()}, self.storage)


def from_dense(X, m, symmetric=False):
    """Split a square matrix into ``m``-sized tiles (lossless)."""
    return DenseTileMatrix.from_dense(X, m, symmetric)


def to_dense(A: DenseTileMatrix):
    return A.to_dense()


def fingerprint(X):
    """Short content hash used to tie a factor to the matrix it came from."""
    arr = np.ascontiguousarray(X, dtype=np.float64)
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


@dataclass
class CholeskyFactor:
    """Lower Cholesky factor in tile layout (lower tiles; diagonal tiles upper-zeroed)."""

    L: DenseTileMatrix
    source: str = ""
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def layout(self):
        return self.L.layout

    @property
    def n(self):
        return self.L.layout.n

    def dense(self):
        """Full lower-triangular factor as one C-ordered array (cached)."""
        if self._dense is None:
            self._dense = self.L.to_dense()
        return self._dense

    @classmethod
    def from_lower(cls, L, m=None):
        L = np.asarray(L, dtype=np.float64)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ShapeError(f"expected a square factor, got shape {L.shape}")
        L = np.tril(L)
        tm = DenseTileMatrix.from_dense(L, m or L.shape[0], storage="lower")
        return cls(tm, fingerprint(L))


def tile_gemm_update(A_tile, L_tile, Y_tile):
    """``A_tile - L_tile @ Y_tile`` with a fixed, blocking-independent accumulation order.

    ``A_tile`` is updated in place (when already C-contiguous float64) and returned.
    """
    A = np.asarray(A_tile)
    L = np.asarray(L_tile, dtype=np.float64)
    Y = np.asarray(Y_tile, dtype=np.float64)
    if A.ndim != 2 or L.ndim != 2 or Y.ndim != 2:
        raise ShapeError("tile_gemm_update expects 2-D tiles")
    if L.shape[0] != A.shape[0] or Y.shape[1] != A.shape[1] or L.shape[1] != Y.shape[0]:
        raise ShapeError(f"non-conformable tiles A{A.shape}, L{L.shape}, Y{Y.shape}")
    if not (A.dtype == np.float64 and A.flags.c_contiguous and A.flags.writeable):
        A = np.ascontiguousarray(A, dtype=np.float64).copy()
    kernels.gemm_update(A, None, L, Y)
    return A


def potrf_tile(A, offset=0):
    """Factor one symmetric tile in place-free fashion; raise with the global failing row."""
    c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise FactorizationError(offset + info - 1)
    if info < 0:
        raise ParameterError(f"dpotrf: illegal argument {-info}")
    return c


def cholesky_lower(X):
    """Unblocked dense Cholesky returning a lower factor; raises FactorizationError."""
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise ParameterError("matrix contains non-finite entries")
    return potrf_tile(np.asfortranarray(X))


def tiled_cholesky(sigma: DenseTileMatrix, policy: ExecutionPolicy | None = None) -> CholeskyFactor:
    """Right-looking tiled Cholesky factorization ``sigma = L L^T``.

    Runs the potrf/trsm/syrk/gemm task graph through :func:`runtime.execute`.
    A non-positive pivot raises :class:`FactorizationError` carrying the
    global row index.
    """
    if not isinstance(sigma, DenseTileMatrix):
        raise ParameterError("tiled_cholesky expects a DenseTileMatrix")
    lay = sigma.layout
    T = {}
    for i in range(lay.nt):
        for j in range(i + 1):
            t = np.array(sigma.tile(i, j), dtype=np.float64, order="F", copy=True)
            if not np.isfinite(t).all():
                raise ParameterError(f"tile ({i}, {j}) contains non-finite entries")
            T[i, j] = t
    src = fingerprint(sigma.to_dense()) if lay.n <= 4096 else ""

    def k_potrf(task):
        k = task.coords[0]
        T[k, k] = potrf_tile(T[k, k], lay.start(k))

    def k_trsm(task):
        i, k, _ = task.coords
        # A_ik <- A_ik L_kk^{-T}
        T[i, k] = blas.dtrsm(1.0, T[k, k], T[i, k], side=1, lower=1, trans_a=1, overwrite_b=1)

    def k_syrk(task):
        i, _, k = task.coords
        Lik = T[i, k]
        T[i, i] -= Lik @ Lik.T

    def k_gemm(task):
        i, j, k = task.coords
        T[i, j] -= T[i, k] @ T[j, k].T

    graph = build_cholesky_dag(lay.nt, "dense")
    execute(graph, {"potrf": k_potrf, "trsm": k_trsm, "syrk": k_syrk, "gemm": k_gemm}, policy)
    tiles = {key: np.asfortranarray(v) for key, v in T.items()}
    return CholeskyFactor(DenseTileMatrix(lay, tiles, "lower"), src)
