"""Tile low-rank (TLR) matrices: per-tile SVD compression, low-rank arithmetic, Cholesky."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas, qr, svd

from .errors import ParameterError, RankCapWarning, ShapeError
from .runtime import ExecutionPolicy, TaskGraph, build_cholesky_dag, execute
from .tiles import TileLayout, potrf_tile


@dataclass(frozen=True)
class TlrConfig:
    """Compression settings: per-tile Frobenius accuracy, rank cap, tile size.

    ``tolerance="relative"`` truncates a tile ``A`` once the discarded part
    satisfies ``||A - U V^T||_F <= epsilon * ||A||_F``; ``"absolute"`` uses
    ``<= epsilon`` instead, which keeps strongly correlated large matrices
    positive definite after compression.
    """

    epsilon: float = 1e-3
    maxrank: int | None = None
    m: int = 256
    tolerance: str = "relative"

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.tolerance not in ("relative", "absolute"):
            raise ParameterError(f"tolerance must be 'relative' or 'absolute', got {self.tolerance!r}")
        if self.m < 1:
            raise ParameterError("tile size m must be >= 1")
        if self.maxrank is None:
            object.__setattr__(self, "maxrank", int(self.m))
        if not (0 <= self.maxrank <= self.m):
            raise ParameterError(f"maxrank must lie in [0, m={self.m}], got {self.maxrank}")


@dataclass
class LowRankTile:
    """``U @ V.T`` with ``U`` carrying the singular values; rank 0 is the zero tile."""

    U: np.ndarray
    V: np.ndarray
    capped: bool = False

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ShapeError(f"incompatible factors U{self.U.shape}, V{self.V.shape}")

    @property
    def k(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def to_dense(self):
        if self.k == 0:
            return np.zeros(self.shape)
        return self.U @ self.V.T

    @classmethod
    def zero(cls, rows, cols):
        return cls(np.zeros((rows, 0)), np.zeros((cols, 0)))


def _truncation_rank(s, cfg):
    # smallest k with sqrt(sum_{i >= k} s_i^2) <= tol
    if s.size == 0:
        return 0
    tail = np.append(np.sqrt(np.cumsum((s**2)[::-1])[::-1]), 0.0)
    if tail[0] == 0.0:
        return 0
    tol = cfg.epsilon * tail[0] if cfg.tolerance == "relative" else cfg.epsilon
    return int(np.nonzero(tail <= tol)[0][0])


def compress_tile(tile, cfg: TlrConfig) -> LowRankTile:
    """Truncated SVD of one tile at the Frobenius accuracy set by ``cfg``.

    If the accuracy needs more than ``cfg.maxrank`` terms the tile keeps
    ``maxrank`` terms and its ``capped`` flag is set.
    """
    A = np.asarray(tile, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError("compress_tile expects a 2-D tile")
    if not np.isfinite(A).all():
        raise ParameterError("tile contains non-finite entries")
    rows, cols = A.shape
    if not A.any():
        return LowRankTile.zero(rows, cols)
    u, s, vt = svd(A, full_matrices=False, lapack_driver="gesdd")
    k = _truncation_rank(s, cfg)
    capped = k > cfg.maxrank
    k = min(k, cfg.maxrank)
    return LowRankTile(np.ascontiguousarray(u[:, :k] * s[:k]), np.ascontiguousarray(vt[:k].T), capped)


def recompress(U, V, cfg: TlrConfig) -> LowRankTile:
    """Re-truncate ``U @ V.T`` given in (possibly redundant) factored form.

    QR of both stacked factors, SVD of the small core, truncation at the
    accuracy of ``cfg`` (relative mode: relative to the norm of the product).
    """
    rows, cols = U.shape[0], V.shape[0]
    if U.shape[1] == 0:
        return LowRankTile.zero(rows, cols)
    qu, ru = qr(U, mode="economic")
    qv, rv = qr(V, mode="economic")
    p, s, qt = svd(ru @ rv.T, full_matrices=False, lapack_driver="gesdd")
    k = _truncation_rank(s, cfg)
    capped = k > cfg.maxrank
    k = min(k, cfg.maxrank)
    if k == 0:
        return LowRankTile.zero(rows, cols)
    return LowRankTile(
        np.ascontiguousarray(qu @ (p[:, :k] * s[:k])), np.ascontiguousarray(qv @ qt[:k].T), capped
    )


@dataclass
class TlrMatrix:
    """Lower-stored TLR matrix: dense diagonal tiles, low-rank strictly-lower tiles.

    ``factor`` marks a Cholesky factor (upper triangle zero) as opposed to a
    symmetric matrix (upper triangle mirrors the lower).
    """

    layout: TileLayout
    diag: dict = field(default_factory=dict)
    lr: dict = field(default_factory=dict)
    cfg: TlrConfig = field(default_factory=TlrConfig)
    factor: bool = False

    @property
    def n(self):
        return self.layout.n

    @property
    def nt(self):
        return self.layout.nt

    def tile_dense(self, i, j):
        if i == j:
            return self.diag[i]
        if i > j:
            return self.lr[i, j].to_dense()
        if self.factor:
            return np.zeros((self.layout.size(i), self.layout.size(j)))
        return self.lr[j, i].to_dense().T

    def to_dense(self):
        lay = self.layout
        out = np.zeros((lay.n, lay.n))
        for i in range(lay.nt):
            d = self.diag[i]
            out[lay.span(i), lay.span(i)] = np.tril(d) if self.factor else d
            for j in range(i):
                t = self.lr[i, j].to_dense()
                out[lay.span(i), lay.span(j)] = t
                if not self.factor:
                    out[lay.span(j), lay.span(i)] = t.T
        return out

    def dense(self):
        return self.to_dense()

    def capped_tiles(self):
        return sorted(key for key, t in self.lr.items() if t.capped)


def _warn_capped(A: TlrMatrix):
    capped = A.capped_tiles()
    if capped:
        warnings.warn(
            f"{len(capped)} tile(s) hit maxrank={A.cfg.maxrank} before reaching epsilon={A.cfg.epsilon}",
            RankCapWarning,
            stacklevel=3,
        )


def _compress_all(lay, cfg, get_tile, get_diag, policy):
    A = TlrMatrix(lay, {}, {}, cfg)
    g = TaskGraph("tlr-compress")
    for i in range(lay.nt):
        g.add("diag", (i, i, 0), writes=[(i, i)])
        for j in range(i):
            g.add("compress", (i, j, 0), writes=[(i, j)])

    def k_diag(task):
        i = task.coords[0]
        A.diag[i] = np.asfortranarray(get_diag(i), dtype=np.float64)

    def k_compress(task):
        i, j, _ = task.coords
        A.lr[i, j] = compress_tile(get_tile(i, j), cfg)

    execute(g, {"diag": k_diag, "compress": k_compress}, policy)
    _warn_capped(A)
    return A


def tlr_from_dense(X, cfg: TlrConfig, policy: ExecutionPolicy | None = None) -> TlrMatrix:
    """Compress a symmetric dense matrix tile by tile (diagonal tiles stay dense)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ShapeError(f"expected a square matrix, got {X.shape}")
    lay = TileLayout(X.shape[0], cfg.m)
    return _compress_all(
        lay, cfg, lambda i, j: X[lay.span(i), lay.span(j)], lambda i: X[lay.span(i), lay.span(i)], policy
    )


def tlr_assemble(geom, params, cfg: TlrConfig, policy: ExecutionPolicy | None = None, nugget=0.0) -> TlrMatrix:
    """Build a TLR covariance straight from locations, never forming the full matrix."""
    from .field import cov_block

    lay = TileLayout(geom.n, cfg.m)

    def diag(i):
        d = cov_block(geom, lay.span(i), lay.span(i), params)
        if nugget:
            d[np.diag_indices_from(d)] += nugget
        return d

    return _compress_all(lay, cfg, lambda i, j: cov_block(geom, lay.span(i), lay.span(j), params), diag, policy)


def tlr_cholesky(A: TlrMatrix, policy: ExecutionPolicy | None = None) -> TlrMatrix:
    """Right-looking TLR Cholesky on the shared task graph.

    potrf on dense diagonal tiles; the panel solve touches only ``V``
    (``U V^T L^-T = U (L^-1 V)^T``); trailing updates form low-rank products
    and recompress them at the configured accuracy.
    """
    if A.factor:
        raise ParameterError("matrix is already a Cholesky factor")
    lay, cfg = A.layout, A.cfg
    D = {i: np.array(t, dtype=np.float64, order="F", copy=True) for i, t in A.diag.items()}
    T = {key: LowRankTile(t.U.copy(), t.V.copy(), t.capped) for key, t in A.lr.items()}
    for i, d in D.items():
        if not np.isfinite(d).all():
            raise ParameterError(f"diagonal tile {i} contains non-finite entries")

    def k_potrf(task):
        k = task.coords[0]
        D[k] = potrf_tile(D[k], lay.start(k))

    def k_trsm(task):
        i, k, _ = task.coords
        t = T[i, k]
        if t.k:
            V = blas.dtrsm(1.0, D[k], np.asfortranarray(t.V), side=0, lower=1, trans_a=0)
            T[i, k] = LowRankTile(t.U, np.ascontiguousarray(V), t.capped)

    def k_syrk(task):
        i, _, k = task.coords
        t = T[i, k]
        if t.k:
            D[i] -= t.U @ (t.V.T @ t.V) @ t.U.T

    def k_gemm(task):
        i, j, k = task.coords
        a, b, c = T[i, j], T[i, k], T[j, k]
        if b.k == 0 or c.k == 0:
            return
        # A_ij - U_b (V_b^T V_c) U_c^T, stacked then recompressed
        prod = b.U @ (b.V.T @ c.V)
        Us = np.hstack([a.U, -prod])
        Vs = np.hstack([a.V, c.U])
        new = recompress(Us, Vs, cfg)
        new.capped = new.capped or a.capped
        T[i, j] = new

    execute(build_cholesky_dag(lay.nt, "tlr"), {"potrf": k_potrf, "trsm": k_trsm, "syrk": k_syrk, "gemm": k_gemm}, policy)
    out = TlrMatrix(lay, {i: np.asfortranarray(d) for i, d in D.items()}, T, cfg, factor=True)
    _warn_capped(out)
    return out


def lr_gemm_update(A_tile, L_tile: LowRankTile, Y_tile, decompress=False):
    """``A - U (V^T Y)`` in factored form, or ``A - (U V^T) Y`` with ``decompress``.

    Returns the updated tile; ``A_tile`` is modified in place when it is a
    writable float64 array.
    """
    A = np.asarray(A_tile)
    Y = np.asarray(Y_tile, dtype=np.float64)
    rows, cols = L_tile.shape
    if A.ndim != 2 or Y.ndim != 2 or A.shape[0] != rows or Y.shape[0] != cols or Y.shape[1] != A.shape[1]:
        raise ShapeError(f"non-conformable tiles A{A.shape}, L{L_tile.shape}, Y{Y.shape}")
    if not (A.dtype == np.float64 and A.flags.writeable):
        A = np.array(A, dtype=np.float64)
    if L_tile.k == 0:
        return A
    if decompress:
        A -= L_tile.to_dense() @ Y
    else:
        A -= L_tile.U @ (L_tile.V.T @ Y)
    return A


@dataclass(frozen=True)
class RankStats:
    ranks: np.ndarray  # nt x nt, -1 on and above the diagonal
    min: int
    mean: float
    max: int
    capped: int

    def rows(self):
        nt = self.ranks.shape[0]
        return [(i, j, int(self.ranks[i, j])) for i in range(nt) for j in range(i)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "rank"])
            w.writerows(self.rows())

    def summary(self):
        return f"min={self.min} mean={self.mean:.3f} max={self.max} capped={self.capped}"


def rank_stats(A: TlrMatrix) -> RankStats:
    """Per-tile ranks of the strictly-lower tiles plus min/mean/max."""
    nt = A.nt
    ranks = np.full((nt, nt), -1, dtype=np.int64)
    for (i, j), t in A.lr.items():
        ranks[i, j] = t.k
    vals = [t.k for t in A.lr.values()]
    if not vals:
        return RankStats(ranks, 0, 0.0, 0, 0)
    return RankStats(ranks, min(vals), math.fsum(vals) / len(vals), max(vals), len(A.capped_tiles()))
