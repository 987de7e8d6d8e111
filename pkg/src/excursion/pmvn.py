"""Tiled separation-of-variables (SOV) estimator for multivariate normal probabilities.

``P(a <= X <= b)`` for ``X ~ N(mean, L L^T)`` is written as an integral over
the unit hypercube and averaged over ``N`` chains.  Chains are grouped in
column blocks; each block walks down the row tiles of ``L``: a diagonal
kernel advances the chains through one row tile, then the block's limits in
all later row tiles receive the GEMM correction ``- L[j, r] @ Y[r]``.
Blocks are independent tasks on the runtime, and the final reduction runs in
ascending chain order, so results do not depend on the worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, FactorizationIntegrityError, ParameterError, ShapeError
from .runtime import ExecutionPolicy, build_pmvn_dag, execute
from .tiles import CholeskyFactor, TileLayout
from .tlr import TlrMatrix

POINT_SETS = ("pseudo-random", "randomized-lattice")
_ALIASES = {"pseudo": "pseudo-random", "random": "pseudo-random", "lattice": "randomized-lattice"}
LATTICE_SHIFTS = 10


@dataclass(frozen=True)
class IntegrationLimits:
    """Box ``[a, b]``; ``-inf`` / ``+inf`` entries leave a side open."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64, ndmin=1)
        b = np.array(self.b, dtype=np.float64, ndmin=1)
        if a.ndim != 1 or a.shape != b.shape:
            raise ShapeError(f"limits must be equal-length vectors, got {a.shape} and {b.shape}")
        if np.isnan(a).any() or np.isnan(b).any():
            raise DomainError("integration limits contain NaN")
        if (a > b).any():
            i = int(np.argmax(a > b))
            raise ParameterError(f"lower limit exceeds upper limit at index {i}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.a.shape[0]

    @classmethod
    def lower(cls, a):
        """One-sided box ``[a, +inf)``."""
        a = np.asarray(a, dtype=np.float64)
        return cls(a, np.full_like(a, np.inf))


@dataclass(frozen=True)
class QmcPlan:
    """Sampling plan: ``N`` chains, row tile size ``m``, point set and seed.

    ``chain_block`` is the width of one chain column tile (default
    ``max(m, 128)``); it only affects scheduling granularity, not results.
    """

    N: int = 10_000
    m: int = 128
    point_set: str = "pseudo-random"
    seed: int = 0
    chain_block: int | None = None

    def __post_init__(self):
        if int(self.N) < 1 or int(self.m) < 1:
            raise ParameterError(f"need N >= 1 and m >= 1, got N={self.N}, m={self.m}")
        ps = _ALIASES.get(self.point_set, self.point_set)
        if ps not in POINT_SETS:
            raise ParameterError(f"unknown point set {self.point_set!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ParameterError("seed must be a non-negative 64-bit integer")
        if self.chain_block is not None and int(self.chain_block) < 1:
            raise ParameterError("chain_block must be >= 1")
        object.__setattr__(self, "point_set", ps)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def block(self):
        return int(self.chain_block or max(self.m, 128))


@dataclass
class ChainState:
    """Per-chain sweep state: adjusted limits, transformed samples, running probability.

    The running probability of chain ``j`` is ``mant[j] * 2**expo[j]``.
    """

    A: np.ndarray
    B: np.ndarray
    Y: np.ndarray
    mant: np.ndarray
    expo: np.ndarray

    @property
    def logp(self):
        with np.errstate(divide="ignore"):
            return np.log(self.mant) + self.expo * math.log(2.0)


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    stderr: float
    N: int
    backend: str = "dense"
    log_value: float = float("nan")
    point_set: str = "pseudo-random"

    def as_dict(self):
        return {
            "value": self.value,
            "stderr": self.stderr,
            "N": self.N,
            "backend": self.backend,
            "log_value": self.log_value,
            "point_set": self.point_set,
        }


def derive_key(seed, stream=0):
    """64-bit generator key for ``(seed, stream)``."""
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return int(ss.generate_state(1, np.uint64)[0])


def _korobov_multiplier(P):
    a = max(1, int(round(P * (math.sqrt(5.0) - 1.0) / 2.0)))
    while math.gcd(a, P) != 1:
        a += 1
    return a


def _lattice_rows(P, row0, nrows):
    a = _korobov_multiplier(P)
    z = pow(a, row0, P) if P > 1 else 0
    out = np.empty(nrows, dtype=np.int64)
    for i in range(nrows):
        out[i] = z
        z = (z * a) % P if P > 1 else 0
    return out


def uniform_block(plan: QmcPlan, key, row0, nrows, col0, ncols):
    """Rows ``row0:row0+nrows`` and chains ``col0:col0+ncols`` of the uniform matrix."""
    if plan.point_set == "pseudo-random":
        return kernels.uniform_tile(key, row0, nrows, col0, ncols)
    # randomized rank-1 lattice: P points per shift, one shift per chain group
    G = min(LATTICE_SHIFTS, plan.N)
    P = -(-plan.N // G)
    shifts = kernels.uniform_tile(key, row0, nrows, 0, G)
    cols = np.arange(col0, col0 + ncols)
    group, point = cols // P, cols % P
    z = _lattice_rows(P, row0, nrows)
    base = ((point[None, :] * z[:, None]) % P) / P
    x = base + shifts[:, group]
    x -= np.floor(x)
    return np.clip(x, 2.0**-53, 1.0 - 2.0**-53)


def gen_uniform_matrix(plan: QmcPlan, n, stream=0):
    """Full ``n x N`` matrix of uniforms in (0, 1) for ``plan`` (column j depends on (seed, j))."""
    return uniform_block(plan, derive_key(plan.seed, stream), 0, n, 0, plan.N)


class _DenseOps:
    def __init__(self, factor: CholeskyFactor, m):
        self.Ld = factor.dense()
        self.lay = TileLayout(factor.n, m)
        self.name = "dense"

    def diag(self, r):
        s = self.lay.span(r)
        return self.Ld[s, s]

    def diag_values(self):
        return np.diag(self.Ld)

    def gemm(self, A, B, j, r, Y):
        kernels.gemm_update(A, B, self.Ld[self.lay.span(j), self.lay.span(r)], Y)


class _TlrOps:
    def __init__(self, factor: TlrMatrix, m):
        if not factor.factor:
            raise ParameterError("TLR matrix must be factored with tlr_cholesky first")
        self.F = factor
        self.lay = factor.layout
        if TileLayout(factor.n, m).m != self.lay.m:
            raise ParameterError(f"plan tile size {m} differs from the TLR factor tile size {self.lay.m}")
        self.name = "tlr"

    def diag(self, r):
        return self.F.diag[r]

    def diag_values(self):
        return np.concatenate([np.diag(self.F.diag[i]) for i in range(self.lay.nt)])

    def gemm(self, A, B, j, r, Y):
        t = self.F.lr[j, r]
        if t.k:
            P = t.U @ (t.V.T @ Y)
            A -= P
            B -= P


def _ops(factor, m):
    if isinstance(factor, CholeskyFactor):
        return _DenseOps(factor, m)
    if isinstance(factor, TlrMatrix):
        return _TlrOps(factor, m)
    if isinstance(factor, np.ndarray):
        return _DenseOps(CholeskyFactor.from_lower(factor, m), m)
    raise ParameterError(f"unsupported factor type {type(factor).__name__}")


@dataclass
class _SweepResult:
    mant: np.ndarray
    expo: np.ndarray
    rec: np.ndarray | None
    backend: str
    state: ChainState | None = None
    n_eff: int = 0


def _sweep(limits, factor, plan, mean, policy, stream, record=False, keep_state=False):
    n = limits.n
    ops = _ops(factor, plan.m)
    if ops.lay.n != n:
        raise ShapeError(f"factor order {ops.lay.n} does not match {n} limits")
    a, b = limits.a, limits.b
    if mean is not None:
        mean = np.asarray(mean, dtype=np.float64)
        if mean.shape != (n,):
            raise ShapeError(f"mean has shape {mean.shape}, expected ({n},)")
        a, b = a - mean, b - mean
    N = plan.N
    # rows past the last finite limit contribute a factor of exactly 1
    finite = np.isfinite(a) | np.isfinite(b)
    n_eff = n if record or keep_state else (int(np.nonzero(finite)[0][-1]) + 1 if finite.any() else 0)
    mant = np.ones(N)
    expo = np.zeros(N, dtype=np.int64)
    if n_eff == 0:
        return _SweepResult(mant, expo, None, ops.name, n_eff=0)
    d = ops.diag_values()[:n_eff]
    bad = np.nonzero(~(d > 0))[0]
    if bad.size:
        raise FactorizationIntegrityError(int(bad[0]))
    lay = TileLayout(n_eff, ops.lay.m)
    nrt = lay.nt
    w = plan.block
    ncol = -(-N // w)
    key = derive_key(plan.seed, stream)
    rec = np.empty((n_eff, N)) if record else None
    blocks = {}
    kept = {}

    def col_span(k):
        return k * w, min(N, (k + 1) * w)

    def k_qmc(task):
        r, _, k = task.coords
        c0, c1 = col_span(k)
        if r == 0:
            A = np.repeat(a[:n_eff, None], c1 - c0, axis=1)
            B = np.repeat(b[:n_eff, None], c1 - c0, axis=1)
            blocks[k] = (A, B, np.zeros_like(A))
        A, B, Y = blocks[k]
        s = lay.span(r)
        R = uniform_block(plan, key, lay.start(r), lay.size(r), c0, c1 - c0)
        rt = np.empty((lay.size(r), c1 - c0)) if record else None
        kernels.qmc_tile(ops.diag(r), R, A[s], B[s], Y[s], mant[c0:c1], expo[c0:c1], rt)
        if record:
            rec[s, c0:c1] = rt
        if r == nrt - 1:
            if keep_state:
                kept[k] = blocks[k]
            del blocks[k]

    def k_gemm(task):
        j, r, k = task.coords
        A, B, Y = blocks[k]
        s = lay.span(j)
        ops.gemm(A[s], B[s], j, r, Y[lay.span(r)])

    execute(build_pmvn_dag(nrt, ncol), {"qmc": k_qmc, "gemm": k_gemm}, policy)
    state = None
    if keep_state:
        cat = [np.hstack([kept[k][i] for k in range(ncol)]) for i in range(3)]
        state = ChainState(cat[0], cat[1], cat[2], mant, expo)
    return _SweepResult(mant, expo, rec, ops.name, state, n_eff)


def _mean_stderr(mant, expo, groups=None):
    """Mean and standard error of ``mant * 2**expo`` without underflow.

    Returns ``(value, stderr, log_value)``.
    """
    N = mant.shape[0]
    pos = mant > 0
    if not pos.any():
        return 0.0, 0.0, -math.inf
    emax = int(expo[pos].max())
    scaled = np.ldexp(mant, (expo - emax).astype(np.int32).clip(-2000, 0))
    scaled[~pos] = 0.0
    if (scaled == scaled[0]).all():
        # constant integrand: exact value, no sampling error
        return min(math.ldexp(float(scaled[0]), emax), 1.0), 0.0, math.log(scaled[0]) + emax * math.log(2.0)
    mean_s = math.fsum(scaled) / N
    if groups is not None:
        gm = np.array([math.fsum(g) / g.size for g in np.array_split(scaled, groups)])
        sd = float(np.std(gm, ddof=1)) / math.sqrt(gm.size) if gm.size > 1 else 0.0
    else:
        sd = float(np.std(scaled, ddof=1)) / math.sqrt(N) if N > 1 else 0.0
    value = math.ldexp(mean_s, emax)
    log_value = math.log(mean_s) + emax * math.log(2.0)
    return min(value, 1.0), math.ldexp(sd, emax), log_value


def _groups(plan):
    if plan.point_set != "randomized-lattice":
        return None
    G = min(LATTICE_SHIFTS, plan.N)
    P = -(-plan.N // G)
    return [P * g for g in range(1, -(-plan.N // P))]


def pmvn(limits: IntegrationLimits, factor, plan: QmcPlan | None = None, mean=None,
         policy: ExecutionPolicy | None = None, stream=0, return_state=False):
    """Estimate ``P(a <= X <= b)`` with ``X ~ N(mean, L L^T)``.

    Parameters
    ----------
    limits : IntegrationLimits
    factor : CholeskyFactor or TlrMatrix
        Lower Cholesky factor (dense tiles or TLR factor form).
    plan : QmcPlan
        Chain count, tile size, point set and seed.
    mean : array, optional
        Defaults to zero.
    stream : int
        Independent random stream index (used by :func:`pmvn_batch`).

    Returns
    -------
    ProbEstimate
        ``stderr`` is the sample standard deviation of the chain values over
        ``sqrt(N)`` (pseudo-random points) or across the random shifts
        (lattice points).  ``log_value`` stays accurate when ``value``
        underflows.
    """
    plan = plan or QmcPlan()
    res = _sweep(limits, factor, plan, mean, policy, stream, keep_state=return_state)
    value, stderr, logv = _mean_stderr(res.mant, res.expo, _groups(plan))
    est = ProbEstimate(value, stderr, plan.N, res.backend, logv, plan.point_set)
    return (est, res.state) if return_state else est


def pmvn_batch(limit_sets, factor, plan: QmcPlan | None = None, mean=None,
               policy: ExecutionPolicy | None = None):
    """One :func:`pmvn` per limit set, sharing the factor; set ``i`` uses stream ``i``."""
    plan = plan or QmcPlan()
    return [pmvn(lim, factor, plan, mean, policy, stream=i) for i, lim in enumerate(limit_sets)]


def pmvn_prefixes(limits: IntegrationLimits, factor, plan: QmcPlan | None = None, mean=None,
                  policy: ExecutionPolicy | None = None, stream=0):
    """Estimates of ``P(a_t <= X_t <= b_t, t <= i)`` for every leading prefix ``i``.

    One sweep serves all prefixes: after row ``i`` the running chain
    probabilities are exactly those of the ``i + 1``-dimensional problem.
    Returns ``(values, stderrs)`` arrays of length ``n``.
    """
    plan = plan or QmcPlan()
    res = _sweep(limits, factor, plan, mean, policy, stream, record=True)
    rec = res.rec
    N = plan.N
    values = np.minimum(rec.mean(axis=1), 1.0)
    stderrs = rec.std(axis=1, ddof=1) / math.sqrt(N) if N > 1 else np.zeros(rec.shape[0])
    if plan.point_set == "randomized-lattice":
        groups = _groups(plan)
        gm = np.stack([g.mean(axis=1) for g in np.array_split(rec, groups, axis=1)], axis=1)
        stderrs = gm.std(axis=1, ddof=1) / math.sqrt(gm.shape[1]) if gm.shape[1] > 1 else np.zeros(rec.shape[0])
    const = (rec == rec[:, :1]).all(axis=1)
    values[const] = np.minimum(rec[const, 0], 1.0)
    stderrs[const] = 0.0
    return values, stderrs
