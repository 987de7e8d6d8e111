import csv
import os
import threading
import time

import numpy as np
import pytest

from excursion.errors import GraphError, ParameterError
from excursion.field import MEDIUM, assemble_cov, gen_geometry
from excursion.pmvn import IntegrationLimits, QmcPlan, pmvn
from excursion.runtime import (
    ExecutionPolicy,
    TaskGraph,
    build_cholesky_dag,
    build_pmvn_dag,
    cholesky_task_count,
    execute,
)
from excursion.tiles import from_dense, tiled_cholesky


def enumerate_cholesky_tasks(nt):
    # brute-force count of potrf, trsm, syrk and gemm tasks
    count = 0
    for k in range(nt):
        count += 1
        count += sum(1 for i in range(k + 1, nt))
        count += sum(1 for i in range(k + 1, nt) for j in range(k + 1, i + 1))
    return count


def test_cholesky_dag_small():
    g1 = build_cholesky_dag(1)
    assert len(g1) == 1 and g1.tasks[0].kernel == "potrf"
    g2 = build_cholesky_dag(2)
    assert len(g2) == 4 and g2.n_edges == 3
    assert [t.kernel for t in g2.tasks] == ["potrf", "trsm", "syrk", "potrf"]


@pytest.mark.parametrize("nt", [1, 2, 3, 5, 8])
def test_cholesky_task_count(nt):
    assert len(build_cholesky_dag(nt)) == enumerate_cholesky_tasks(nt) == cholesky_task_count(nt)


def test_cholesky_dag_same_shape_for_backends():
    a, b = build_cholesky_dag(4, "dense"), build_cholesky_dag(4, "tlr")
    assert [(t.kernel, t.coords) for t in a.tasks] == [(t.kernel, t.coords) for t in b.tasks]
    assert a.preds == b.preds


def test_pmvn_dag_shapes():
    g = build_pmvn_dag(1, 3)
    assert [t.kernel for t in g.tasks] == ["qmc"] * 3 and g.n_edges == 0
    g = build_pmvn_dag(2, 1)
    assert [t.kernel for t in g.tasks] == ["qmc", "gemm", "qmc"]
    assert g.topological_order() == [0, 1, 2]
    g = build_pmvn_dag(4, 5)
    assert len(g.components()) == 5


def test_cycle_detected():
    g = TaskGraph()
    a = g.add("x", (0,), writes=["t"])
    b = g.add("x", (1,), reads=["t"], writes=["u"])
    g.add_edge(b, a)
    with pytest.raises(GraphError):
        g.check_acyclic()
    with pytest.raises(GraphError):
        execute(g, {"x": lambda t: None})


def test_missing_kernel():
    g = TaskGraph()
    g.add("nope", (0,))
    with pytest.raises(GraphError):
        execute(g, {})


def test_policy_validation():
    with pytest.raises(ParameterError):
        ExecutionPolicy(0)


def test_serial_run_is_topological_min_id():
    g = build_cholesky_dag(3)
    seen = []
    execute(g, {k: (lambda t: seen.append(t.id)) for k in ("potrf", "trsm", "syrk", "gemm")})
    assert seen == g.topological_order()


@pytest.mark.parametrize("workers", [1, 2, 4])
def test_dependencies_respected(workers):
    g = build_cholesky_dag(5)
    done = set()
    lock = threading.Lock()
    errors = []

    def k(task):
        with lock:
            if not g.preds[task.id] <= done:
                errors.append(task.id)
        time.sleep(0.0005)
        with lock:
            done.add(task.id)

    execute(g, {n: k for n in ("potrf", "trsm", "syrk", "gemm")}, ExecutionPolicy(workers))
    assert not errors and len(done) == len(g)


def test_kernel_exception_propagates():
    g = build_pmvn_dag(2, 4)

    def boom(task):
        if task.coords == (1, 1, 2):
            raise ValueError("bad tile")

    with pytest.raises(ValueError, match="bad tile"):
        execute(g, {"qmc": boom, "gemm": lambda t: None}, ExecutionPolicy(3))


def test_trace_writers_disjoint_and_csv(tmp_path):
    g = build_cholesky_dag(4)
    tr = execute(
        g,
        {n: (lambda t: time.sleep(0.0002)) for n in ("potrf", "trsm", "syrk", "gemm")},
        ExecutionPolicy(3, trace=True),
    )
    assert len(tr.records) == len(g)
    assert tr.overlapping_writers(g) == []
    tr.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["task", "kernel", "i", "j", "k", "start_ns", "end_ns", "worker"]
    assert len(rows) == len(g) + 1


def test_cholesky_bitwise_across_workers():
    S = assemble_cov(gen_geometry("uniform-random", 256, seed=1), MEDIUM)
    ref = tiled_cholesky(from_dense(S, 32, True), ExecutionPolicy(1)).dense()
    assert np.array_equal(ref, tiled_cholesky(from_dense(S, 32, True), ExecutionPolicy(4)).dense())


def test_pmvn_bitwise_across_workers():
    S = assemble_cov(gen_geometry("uniform-random", 512, seed=2), MEDIUM)
    L = tiled_cholesky(from_dense(S, 64, True))
    lim = IntegrationLimits(np.full(512, -np.inf), np.full(512, 1.5))
    plan = QmcPlan(1000, 64, chain_block=128)
    a = pmvn(lim, L, plan, policy=ExecutionPolicy(1))
    b = pmvn(lim, L, plan, policy=ExecutionPolicy(8))
    assert a.value == b.value and a.stderr == b.stderr


W = 4


@pytest.mark.skipif((os.cpu_count() or 1) < W, reason=f"needs at least {W} CPUs for a throughput check")
def test_pmvn_column_phase_makespan():
    n, N = 4096, 10_000
    S = assemble_cov(gen_geometry("uniform-random", n, seed=3), MEDIUM)
    L = tiled_cholesky(from_dense(S, 256, True), ExecutionPolicy(W))
    lim = IntegrationLimits(np.full(n, -np.inf), np.full(n, 2.0))
    plan = QmcPlan(N, 256, chain_block=N // (2 * W))
    t0 = time.perf_counter()
    pmvn(lim, L, plan, policy=ExecutionPolicy(1))
    serial = time.perf_counter() - t0
    t0 = time.perf_counter()
    pmvn(lim, L, plan, policy=ExecutionPolicy(W))
    par = time.perf_counter() - t0
    delta = 0.5
    assert par <= serial / (W * (1 - delta))
