import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import genz_scalar, random_spd
from excursion import kernels
from excursion.pmvn import IntegrationLimits, QmcPlan, pmvn
from excursion.tiles import from_dense, tiled_cholesky

both = pytest.mark.skipif("compiled" not in kernels.available(), reason="compiled extension not built")


def tile_inputs(m, N, seed):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(random_spd(m, rng))
    R = rng.random((m, N))
    A = rng.normal(-0.5, 1.0, (m, N))
    B = A + rng.exponential(1.5, (m, N))
    A[rng.random((m, N)) < 0.1] = -np.inf
    B[rng.random((m, N)) < 0.1] = np.inf
    return L, R, A, B


def run_qmc(name, L, R, A, B, record=False):
    A, B = A.copy(), B.copy()
    m, N = R.shape
    Y, mant, expo = np.zeros((m, N)), np.ones(N), np.zeros(N, dtype=np.int64)
    rec = np.empty((m, N)) if record else None
    with kernels.use(name):
        kernels.qmc_tile(L, R, A, B, Y, mant, expo, rec)
    return A, B, Y, mant, expo, rec


@pytest.mark.parametrize("name", kernels.available())
def test_each_backend_matches_scalar_oracle(name):
    L, R, A, B = tile_inputs(12, 30, 1)
    a, b = A[:, 0], B[:, 0]
    A1 = np.repeat(a[:, None], 30, axis=1)
    B1 = np.repeat(b[:, None], 30, axis=1)
    _, _, Y, mant, expo, _ = run_qmc(name, L, R, A1, B1)
    m_ref, e_ref, Y_ref = genz_scalar(L, a, b, R)
    assert np.array_equal(Y, Y_ref)
    assert np.array_equal(mant, m_ref) and np.array_equal(expo, e_ref)


@both
@given(st.integers(1, 16), st.integers(1, 40), st.integers(0, 2**31))
def test_qmc_tile_backends_bitwise(m, N, seed):
    L, R, A, B = tile_inputs(m, N, seed)
    c = run_qmc("compiled", L, R, A, B, record=True)
    p = run_qmc("python", L, R, A, B, record=True)
    for x, y in zip(c, p):
        assert np.array_equal(x, y)


@both
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_gemm_backends_bitwise(mi, k, w, seed):
    rng = np.random.default_rng(seed)
    A0, B0 = rng.standard_normal((mi, w)), rng.standard_normal((mi, w))
    L, Y = rng.standard_normal((mi, k)), rng.standard_normal((k, w))
    out = {}
    for name in ("compiled", "python"):
        A, B = A0.copy(), B0.copy()
        with kernels.use(name):
            kernels.gemm_update(A, B, L, Y)
        out[name] = (A, B)
    assert np.array_equal(out["compiled"][0], out["python"][0])
    assert np.array_equal(out["compiled"][1], out["python"][1])


@both
@given(st.integers(0, 2**64 - 1), st.integers(0, 1000), st.integers(1, 9), st.integers(0, 5000), st.integers(1, 9))
def test_uniform_backends_bitwise(key, r0, nr, c0, nc):
    with kernels.use("compiled"):
        a = kernels.uniform_tile(key, r0, nr, c0, nc)
    with kernels.use("python"):
        b = kernels.uniform_tile(key, r0, nr, c0, nc)
    assert np.array_equal(a, b)
    assert a.min() > 0 and a.max() < 1


@both
def test_pmvn_backends_bitwise():
    S = random_spd(70, np.random.default_rng(3))
    L = tiled_cholesky(from_dense(S, 16, True))
    lim = IntegrationLimits(np.full(70, -1.5), np.full(70, 2.5))
    vals = []
    for name in ("compiled", "python"):
        with kernels.use(name):
            vals.append(pmvn(lim, L, QmcPlan(300, 16, seed=9)))
    assert vals[0].value == vals[1].value and vals[0].stderr == vals[1].stderr


def test_use_restores_backend():
    before = kernels.BACKEND
    with kernels.use("python"):
        assert kernels.BACKEND == "python"
    assert kernels.BACKEND == before
    with pytest.raises(ValueError):
        with kernels.use("fortran"):
            pass
