"""Confidence-region (excursion set) detection from joint exceedance probabilities."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExcursionError, ParameterError, ShapeError
from .normdist import norm_sf
from .pmvn import IntegrationLimits, QmcPlan, pmvn, pmvn_prefixes
from .runtime import ExecutionPolicy
from .tiles import from_dense, tiled_cholesky
from .tlr import TlrConfig, tlr_cholesky, tlr_from_dense

METHODS = ("prefix", "sweep")


@dataclass(frozen=True)
class CrdConfig:
    """Detection settings.

    ``method="prefix"`` runs one integration per evaluated prefix on the
    factor of the correlation matrix in location order.  ``"sweep"``
    factors the correlation matrix once in marginal order and reads every
    prefix probability off a single pass; it is far cheaper and estimates
    the same quantities.
    """

    u: float
    alphas: tuple = (0.05,)
    prefix_stride: int = 1
    plan: QmcPlan = field(default_factory=QmcPlan)
    backend: str = "dense"
    tlr: TlrConfig | None = None
    method: str = "prefix"

    def __post_init__(self):
        if not math.isfinite(self.u):
            raise ParameterError("threshold u must be finite")
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas))
        if not alphas or any(not (0.0 < a < 1.0) for a in alphas):
            raise ParameterError(f"alphas must lie in (0, 1), got {alphas}")
        object.__setattr__(self, "alphas", alphas)
        if int(self.prefix_stride) < 1:
            raise ParameterError("prefix_stride must be >= 1")
        if self.backend not in ("dense", "tlr"):
            raise ParameterError(f"unknown backend {self.backend!r}")
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        if self.backend == "tlr" and self.tlr is None:
            object.__setattr__(self, "tlr", TlrConfig(m=self.plan.m))


@dataclass(frozen=True)
class ConfidenceFunction:
    """Per-location joint exceedance level, plus the prefix estimates it came from.

    ``sizes[k]`` prefixes (in ``order``) were evaluated with raw estimates
    ``raw[k]``, standard errors ``stderr[k]`` and monotone values ``mono[k]``.
    """

    f: np.ndarray
    order: np.ndarray
    p_marginal: np.ndarray
    sizes: np.ndarray
    raw: np.ndarray
    stderr: np.ndarray
    mono: np.ndarray

    @property
    def n(self):
        return self.f.shape[0]

    def prefix_stderr(self, size):
        """Standard error of the evaluated prefix that decides a region of ``size`` sites."""
        if size <= 0:
            return 0.0
        k = int(np.searchsorted(self.sizes, size))
        return float(self.stderr[min(k, len(self.sizes) - 1)])


@dataclass(frozen=True)
class ExcursionRegion:
    mask: np.ndarray
    level: float
    u: float = float("nan")

    @property
    def alpha(self):
        return 1.0 - self.level

    @property
    def size(self):
        return int(self.mask.sum())

    @property
    def empty(self):
        return not self.mask.any()


def marginal_probs(mean_eff, var_diag, u):
    """``P(X_i > u)`` for each location with mean ``mean_eff`` and variance ``var_diag``."""
    mean_eff = np.asarray(mean_eff, dtype=np.float64)
    var_diag = np.asarray(var_diag, dtype=np.float64)
    if mean_eff.shape != var_diag.shape:
        raise ShapeError("mean and variance vectors differ in length")
    if not (var_diag > 0).all():
        raise ParameterError("variances must be strictly positive")
    return norm_sf((u - mean_eff) / np.sqrt(var_diag))


def order_desc(p_M):
    """Indices sorting ``p_M`` descending; ties keep ascending index order."""
    return np.argsort(-np.asarray(p_M, dtype=np.float64), kind="stable")


def evaluated_sizes(n, stride):
    sizes = list(range(stride, n + 1, stride))
    if not sizes or sizes[-1] != n:
        sizes.append(n)
    return np.array(sizes, dtype=np.int64)


def _factor(R, cfg: CrdConfig, policy):
    if cfg.backend == "tlr":
        return tlr_cholesky(tlr_from_dense(R, cfg.tlr, policy), policy), dataclasses.replace(cfg.plan, m=cfg.tlr.m)
    return tiled_cholesky(from_dense(R, cfg.plan.m, True), policy), cfg.plan


def _with_prefix(exc, size):
    note = f"while integrating the prefix of size {size}"
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"{exc.args[0]} ({note})",) + exc.args[1:]
    else:
        exc.args = exc.args + (note,)
    return exc


def confidence_function(model, cfg: CrdConfig, policy: ExecutionPolicy | None = None, mean_eff=None):
    """Positive confidence function of a Gaussian field at threshold ``cfg.u``.

    Locations are sorted by marginal exceedance probability; for each
    evaluated prefix size ``i`` the joint probability that the first ``i``
    sorted locations all exceed ``u`` is estimated.  The raw estimates are
    made non-increasing by a running minimum, and each location takes the
    value of the smallest evaluated prefix that contains it.

    ``mean_eff`` overrides the model mean (e.g. posterior mean plus a field
    draw); variances always come from the model covariance.
    """
    mean = np.asarray(model.mean if mean_eff is None else mean_eff, dtype=np.float64)
    cov = np.asarray(model.cov, dtype=np.float64)
    n = mean.shape[0]
    if cov.shape != (n, n):
        raise ShapeError(f"covariance {cov.shape} does not match mean length {n}")
    var = np.diag(cov).copy()
    p_M = marginal_probs(mean, var, cfg.u)
    order = order_desc(p_M)
    sd = np.sqrt(var)
    z = (cfg.u - mean) / sd
    corr = cov / np.outer(sd, sd)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    sizes = evaluated_sizes(n, int(cfg.prefix_stride))

    if cfg.method == "sweep":
        perm_corr = corr[np.ix_(order, order)]
        L, plan = _factor(perm_corr, cfg, policy)
        vals, errs = pmvn_prefixes(IntegrationLimits.lower(z[order]), L, plan, policy=policy)
        raw, stderr = vals[sizes - 1], errs[sizes - 1]
    else:
        L, plan = _factor(corr, cfg, policy)
        limit_sets = []
        for i in sizes:
            a = np.full(n, -np.inf)
            a[order[:i]] = z[order[:i]]
            limit_sets.append(IntegrationLimits.lower(a))
        ests = []
        # stream k matches pmvn_batch, so results equal a batch call
        for k, lim in enumerate(limit_sets):
            try:
                ests.append(pmvn(lim, L, plan, policy=policy, stream=k))
            except ExcursionError as exc:
                raise _with_prefix(exc, int(sizes[k]))
        raw = np.array([e.value for e in ests])
        stderr = np.array([e.stderr for e in ests])

    mono = np.minimum.accumulate(raw)
    # sorted position p is covered first by the smallest evaluated size > p
    owner = np.searchsorted(sizes, np.arange(n), side="right")
    f = np.empty(n)
    f[order] = mono[owner]
    return ConfidenceFunction(f, order, p_M, sizes, raw, stderr, mono)


def extract_region(cf: ConfidenceFunction | np.ndarray, alpha, u=float("nan")) -> ExcursionRegion:
    """Locations with confidence function at least ``1 - alpha``."""
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    f = np.asarray(getattr(cf, "f", cf), dtype=np.float64)
    return ExcursionRegion(f >= 1.0 - alpha, 1.0 - alpha, u)


def marginal_region(p_M, alpha, u=float("nan")) -> ExcursionRegion:
    """Locations whose marginal exceedance probability is at least ``1 - alpha``."""
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    return ExcursionRegion(np.asarray(p_M) >= 1.0 - alpha, 1.0 - alpha, u)
