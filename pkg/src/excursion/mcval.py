"""Direct-sampling Monte Carlo oracles: MVN box probabilities and region confidence levels."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .pmvn import IntegrationLimits, ProbEstimate
from .runtime import ExecutionPolicy, TaskGraph, execute
from .tiles import CholeskyFactor, cholesky_lower
from .tlr import TlrMatrix

BLOCK = 4096


def _dense_factor(L):
    if isinstance(L, CholeskyFactor):
        return L.dense()
    if isinstance(L, TlrMatrix):
        return L.to_dense()
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ShapeError(f"expected a square factor, got {L.shape}")
    return L


def _block_sizes(N, block):
    return [min(block, N - s) for s in range(0, N, block)]


def _sample_blocks(Ld, mu, N, seed, reduce, policy, block=BLOCK):
    """Run ``reduce(b, X)`` on sample blocks ``X = mu + L z`` (one column per draw).

    Block ``b`` draws from ``SeedSequence([seed, b])``, so each block's samples
    are independent of the block schedule.  Returns results in block order.
    """
    n = mu.shape[0]
    sizes = _block_sizes(N, block)
    out = [None] * len(sizes)
    g = TaskGraph("mc")
    for b in range(len(sizes)):
        g.add("block", (b, 0, 0), writes=[("count", b)])

    def k_block(task):
        b = task.coords[0]
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        z = rng.standard_normal((n, sizes[b]))
        out[b] = reduce(b, mu[:, None] + Ld @ z)

    execute(g, {"block": k_block}, policy)
    return out


def mvn_mc_oracle(L, mu, limits: IntegrationLimits, N, seed, policy: ExecutionPolicy | None = None) -> ProbEstimate:
    """Fraction of ``N`` direct draws of ``N(mu, L L^T)`` that land in ``[a, b]``.

    ``stderr`` is the binomial ``sqrt(p (1 - p) / N)``.
    """
    if int(N) < 1:
        raise ParameterError("N must be >= 1")
    Ld = _dense_factor(L)
    n = Ld.shape[0]
    mu = np.zeros(n) if mu is None else np.asarray(mu, dtype=np.float64)
    if mu.shape != (n,) or limits.n != n:
        raise ShapeError("factor, mean and limits must share one dimension")
    a, b = limits.a[:, None], limits.b[:, None]
    counts = _sample_blocks(Ld, mu, int(N), seed, lambda _, X: int(((X >= a) & (X <= b)).all(axis=0).sum()), policy)
    p = sum(counts) / N
    return ProbEstimate(p, math.sqrt(p * (1.0 - p) / N), int(N), "mc", math.log(p) if p > 0 else -math.inf)


@dataclass(frozen=True)
class RegionCheck:
    p_hat: float
    count: int
    N: int
    empty: bool


def _region_counts(L, mu, masks, u, N, seed, policy):
    Ld = _dense_factor(L)
    n = Ld.shape[0]
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (n,):
        raise ShapeError("factor and mean dimensions differ")
    masks = [np.asarray(mk, dtype=bool) for mk in masks]
    for mk in masks:
        if mk.shape != (n,):
            raise ShapeError("region mask length differs from the field dimension")

    def reduce(_, X):
        over = X > u
        return [int(over[mk].all(axis=0).sum()) if mk.any() else X.shape[1] for mk in masks]

    per_block = _sample_blocks(Ld, mu, int(N), seed, reduce, policy)
    return [sum(c[i] for c in per_block) for i in range(len(masks))]


def validate_region(L, mu, region, u, N, seed, policy: ExecutionPolicy | None = None) -> RegionCheck:
    """Share of draws exceeding ``u`` at every site of ``region``.

    An empty region gives ``p_hat = 1`` (vacuous truth) with ``empty=True``.
    """
    if int(N) < 1:
        raise ParameterError("N must be >= 1")
    mask = np.asarray(getattr(region, "mask", region), dtype=bool)
    (count,) = _region_counts(L, mu, [mask], u, N, seed, policy)
    return RegionCheck(count / N, count, int(N), not mask.any())


@dataclass(frozen=True)
class ValidationReport:
    alphas: list
    p_hat: list
    diff: list
    N: int
    seed: int
    mc_err_bound: list
    region_sizes: list
    empty: list

    def rows(self):
        return [
            (1.0 - a, p, d, e) for a, p, d, e in zip(self.alphas, self.p_hat, self.diff, self.mc_err_bound)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["one_minus_alpha", "p_hat", "diff", "mc_err_bound"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def validation_curve(model, f, alphas, N, seed, u, L=None, policy: ExecutionPolicy | None = None) -> ValidationReport:
    """Estimated confidence level of the detected region at each ``alpha``.

    All levels share one set of draws.  ``mc_err_bound`` is
    ``3 sqrt(alpha (1 - alpha) / N)`` plus three standard errors of the joint
    estimate that decided the region.
    """
    from .crd import extract_region

    alphas = [float(a) for a in alphas]
    if L is None:
        L = cholesky_lower(model.cov)
    regions = [extract_region(f, a, u) for a in alphas]
    counts = _region_counts(L, model.mean, [r.mask for r in regions], u, N, seed, policy)
    p_hat = [c / N for c in counts]
    diff = [(1.0 - a) - p for a, p in zip(alphas, p_hat)]
    bound = []
    for a, r in zip(alphas, regions):
        se = f.prefix_stderr(r.size) if hasattr(f, "prefix_stderr") else 0.0
        bound.append(3.0 * math.sqrt(a * (1.0 - a) / N) + 3.0 * se)
    return ValidationReport(
        alphas, p_hat, diff, int(N), int(seed), bound, [r.size for r in regions], [r.empty for r in regions]
    )
