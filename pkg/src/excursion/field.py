"""Spatial geometry, Matérn covariance, posterior conditioning and field sampling."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial.distance import pdist, squareform
from scipy.special import gamma, kv

from .errors import DuplicateLocationWarning, ParameterError, ShapeError
from .tiles import CholeskyFactor, cholesky_lower


@dataclass(frozen=True)
class Geometry:
    """Ordered 2-D locations; the order is the index order of every vector and matrix."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ShapeError(f"geometry needs an (n, 2) array with n >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ParameterError("geometry contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    def subset(self, idx):
        return Geometry(self.points[np.asarray(idx)])


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    range_a: float
    nu: float

    def __post_init__(self):
        for name in ("sigma2", "range_a", "nu"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"Matérn {name} must be finite and > 0, got {v}")
            object.__setattr__(self, name, v)


WEAK = MaternParams(1.0, 0.033, 0.5)
MEDIUM = MaternParams(1.0, 0.1, 0.5)
STRONG = MaternParams(1.0, 0.234, 0.5)


def _half_integer_poly(x, nu):
    # nu = p + 1/2: finite sum from the closed form of K_{p+1/2}
    p = int(round(nu - 0.5))
    total = np.zeros_like(x)
    for k in range(p + 1):
        coef = math.factorial(p + k) / (math.factorial(k) * math.factorial(p - k))
        total = total + coef * (2.0 * x) ** (p - k)
    # (x^nu K_nu(x)) / (2^(nu-1) Gamma(nu)) reduces to a polynomial times e^-x
    return total * np.exp(-x) * (math.factorial(p) / math.factorial(2 * p))


def matern_cov(h, p: MaternParams):
    """Matérn covariance at distance(s) ``h``.

    ``sigma2 * (h/a)^nu K_nu(h/a) / (2^(nu-1) Gamma(nu))``, equal to ``sigma2``
    at ``h = 0``.  Half-integer smoothness uses the exact finite closed form.
    """
    h_arr = np.asarray(h, dtype=np.float64)
    if not np.isfinite(h_arr).all():
        raise ParameterError("distance must be finite")
    if (h_arr < 0).any():
        raise ParameterError("distance must be non-negative")
    x = h_arr / p.range_a
    out = np.full(x.shape, float(p.sigma2))
    pos = x > 0
    xp = x[pos]
    twice = 2.0 * p.nu
    if abs(twice - round(twice)) < 1e-12 and round(twice) % 2 == 1 and p.nu < 20:
        if p.nu == 0.5:
            corr = np.exp(-xp)
        else:
            corr = _half_integer_poly(xp, p.nu)
    else:
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            corr = xp**p.nu * kv(p.nu, xp) / (2.0 ** (p.nu - 1.0) * gamma(p.nu))
        corr = np.where(np.isfinite(corr), corr, 0.0)
        corr = np.minimum(corr, 1.0)
    out[pos] = p.sigma2 * corr
    return float(out) if out.ndim == 0 else out


def exponential_cov(h, sigma2=1.0, range_a=0.1):
    return matern_cov(h, MaternParams(sigma2, range_a, 0.5))


def assemble_cov(geom: Geometry, p: MaternParams, nugget=0.0):
    """Dense covariance matrix of ``geom`` under Matérn parameters ``p``.

    Each unordered pair is evaluated once, so the result is exactly symmetric.
    Coincident locations give a singular matrix and a DuplicateLocationWarning.
    """
    n = geom.n
    if n == 1:
        return np.array([[p.sigma2 + nugget]])
    d = pdist(geom.points)
    if (d == 0).any():
        warnings.warn(
            f"{int((d == 0).sum())} coincident location pair(s); covariance is singular",
            DuplicateLocationWarning,
            stacklevel=2,
        )
    sigma = squareform(matern_cov(d, p))
    np.fill_diagonal(sigma, p.sigma2 + nugget)
    return sigma


def cov_block(geom: Geometry, rows: slice, cols: slice, p: MaternParams):
    """One rectangular block of the covariance matrix, built straight from coordinates."""
    a = geom.points[rows]
    b = geom.points[cols]
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return matern_cov(d, p)


@dataclass(frozen=True)
class FieldModel:
    geometry: Geometry
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        n = self.geometry.n
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ShapeError(f"mean {mean.shape} / cov {cov.shape} do not match n={n}")
        scale = np.abs(cov).max() or 1.0
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ParameterError("covariance is not symmetric")
        if (np.diag(cov) <= 0).any():
            raise ParameterError("covariance diagonal must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self):
        return self.geometry.n


@dataclass(frozen=True)
class PosteriorModel:
    geometry: Geometry
    mean_post: np.ndarray
    cov_post: np.ndarray
    observed_idx: np.ndarray
    noise_sd: float

    @property
    def n(self):
        return self.geometry.n

    @property
    def mean(self):
        return self.mean_post

    @property
    def cov(self):
        return self.cov_post


def posterior_condition(model: FieldModel, observed_idx, y, noise_sd) -> PosteriorModel:
    """Condition a Gaussian field on noisy point observations.

    ``cov_post = (Sigma^-1 + A^T A / tau^2)^-1`` and
    ``mean_post = mu + cov_post A^T (y - A mu) / tau^2`` where ``A`` selects
    ``observed_idx`` and ``tau = noise_sd``.  A singular prior covariance
    raises :class:`FactorizationError` with the failing pivot row.
    """
    if not (math.isfinite(noise_sd) and noise_sd > 0):
        raise ParameterError("noise_sd must be finite and > 0")
    n = model.n
    idx = np.asarray(observed_idx, dtype=np.int64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if idx.shape != y.shape:
        raise ShapeError("observed_idx and y must have equal length")
    if ((idx < 0) | (idx >= n)).any():
        raise ParameterError("observed index out of range")
    tau2 = noise_sd**2
    L = cholesky_lower(model.cov)
    precision = cho_solve((L, True), np.eye(n))
    # A^T A is diagonal with observation counts (repeated indices add up)
    counts = np.bincount(idx, minlength=n).astype(np.float64)
    precision[np.diag_indices(n)] += counts / tau2
    precision = 0.5 * (precision + precision.T)
    Lp = cholesky_lower(precision)
    cov_post = cho_solve((Lp, True), np.eye(n))
    cov_post = 0.5 * (cov_post + cov_post.T)
    resid = np.zeros(n)
    np.add.at(resid, idx, y - model.mean[idx])
    mean_post = model.mean + cov_post @ resid / tau2
    return PosteriorModel(model.geometry, mean_post, cov_post, idx, float(noise_sd))


def sample_field(model, L, seed):
    """One exact draw ``mean + L z`` with ``z`` standard normal from ``seed``."""
    mean = np.asarray(model.mean, dtype=np.float64)
    Ld = L.dense() if isinstance(L, CholeskyFactor) else np.asarray(L, dtype=np.float64)
    n = mean.shape[0]
    if Ld.shape != (n, n):
        raise ShapeError(f"factor shape {Ld.shape} does not match mean length {n}")
    z = np.random.default_rng(seed).standard_normal(n)
    return mean + Ld @ z


def morton_order(points):
    """Permutation sorting 2-D points along a Z-order (Morton) curve."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-300)
    q = np.floor((pts - lo) / span * 65535.0).astype(np.uint64)

    def spread(v):
        v = v & np.uint64(0xFFFF)
        v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF)
        v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F)
        v = (v | (v << np.uint64(2))) & np.uint64(0x33333333)
        v = (v | (v << np.uint64(1))) & np.uint64(0x55555555)
        return v

    code = spread(q[:, 0]) | (spread(q[:, 1]) << np.uint64(1))
    return np.argsort(code, kind="stable")


def gen_geometry(kind, n, seed=0, order=None) -> Geometry:
    """Synthetic locations on the unit square.

    ``grid``: ``sqrt(n) x sqrt(n)`` regular lattice (``n`` must be a perfect
    square), x-major.  ``uniform-random``: ``n`` i.i.d. uniform points from
    ``seed``.  ``order`` is ``"natural"`` or ``"morton"``; the default keeps
    lattice order for grids and Morton-sorts random points so that index
    blocks are spatially compact.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if kind == "grid":
        k = math.isqrt(n)
        if k * k != n:
            raise ParameterError(f"grid geometry needs a perfect-square n, got {n}")
        ax = np.linspace(0.0, 1.0, k) if k > 1 else np.zeros(1)
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        order = order or "natural"
    elif kind in ("uniform-random", "random"):
        pts = np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, 2))
        order = order or "morton"
    else:
        raise ParameterError(f"unknown geometry kind {kind!r}")
    if order == "morton":
        pts = pts[morton_order(pts)]
    elif order != "natural":
        raise ParameterError(f"unknown order {order!r}")
    return Geometry(pts)
