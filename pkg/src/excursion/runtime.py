"""Task-graph construction and execution for tiled algorithms.

Tasks name a kernel, tile coordinates, and the tiles they read and write.
Dependencies are derived from those access sets (read-after-write,
write-after-write, write-after-read), so every tile has a single writer at
any moment.  :func:`execute` runs a graph serially or on a pool of threads
with per-worker deques and work stealing; because kernels own their output
tiles exclusively, results do not depend on the worker count.
"""
from __future__ import annotations

import collections
import csv
import heapq
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping

from threadpoolctl import threadpool_limits

from .errors import GraphError, ParameterError


@dataclass(frozen=True)
class Task:
    id: int
    kernel: str
    coords: tuple
    reads: tuple
    writes: tuple


class TaskGraph:
    """Directed acyclic graph of tile tasks with access-derived edges."""

    def __init__(self, name=""):
        self.name = name
        self.tasks: list[Task] = []
        self.preds: list[set[int]] = []
        self.succs: list[set[int]] = []
        self._last_writer: dict[Hashable, int] = {}
        self._readers: dict[Hashable, list[int]] = collections.defaultdict(list)

    def __len__(self):
        return len(self.tasks)

    def add(self, kernel, coords, reads=(), writes=()):
        tid = len(self.tasks)
        reads = tuple(r for r in reads if r not in writes)
        writes = tuple(writes)
        self.tasks.append(Task(tid, kernel, tuple(coords), reads, writes))
        self.preds.append(set())
        self.succs.append(set())
        for tile in reads:
            w = self._last_writer.get(tile)
            if w is not None:
                self._link(w, tid)
            self._readers[tile].append(tid)
        for tile in writes:
            w = self._last_writer.get(tile)
            if w is not None:
                self._link(w, tid)
            for r in self._readers.pop(tile, ()):
                self._link(r, tid)
            self._last_writer[tile] = tid
        return tid

    def add_edge(self, src, dst):
        """Explicit extra dependency (may introduce a cycle; see :meth:`check_acyclic`)."""
        self._link(src, dst)

    def _link(self, src, dst):
        if src != dst:
            self.preds[dst].add(src)
            self.succs[src].add(dst)

    @property
    def n_edges(self):
        return sum(len(p) for p in self.preds)

    def topological_order(self):
        """Kahn's algorithm, lowest task id first among ready tasks."""
        indeg = [len(p) for p in self.preds]
        ready = [t for t, d in enumerate(indeg) if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            t = heapq.heappop(ready)
            order.append(t)
            for s in self.succs[t]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(ready, s)
        if len(order) != len(self.tasks):
            raise GraphError(f"task graph {self.name!r} contains a cycle")
        return order

    def check_acyclic(self):
        self.topological_order()

    def components(self):
        """Weakly connected components as sorted lists of task ids."""
        parent = list(range(len(self.tasks)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for t, ps in enumerate(self.preds):
            for p in ps:
                parent[find(p)] = find(t)
        groups = collections.defaultdict(list)
        for t in range(len(self.tasks)):
            groups[find(t)].append(t)
        return sorted(groups.values())


def build_cholesky_dag(nt, backend="dense"):
    """Right-looking tiled Cholesky DAG over an ``nt x nt`` lower tile grid.

    potrf(k) -> trsm(i, k) for i > k -> syrk/gemm(i, j, k) for i >= j > k.
    The shape is the same for the dense and TLR backends.
    """
    g = TaskGraph(f"cholesky-{backend}")
    for k in range(nt):
        g.add("potrf", (k, k, k), writes=[(k, k)])
        for i in range(k + 1, nt):
            g.add("trsm", (i, k, k), reads=[(k, k)], writes=[(i, k)])
        for i in range(k + 1, nt):
            for j in range(k + 1, i + 1):
                if i == j:
                    g.add("syrk", (i, i, k), reads=[(i, k)], writes=[(i, i)])
                else:
                    g.add("gemm", (i, j, k), reads=[(i, k), (j, k)], writes=[(i, j)])
    return g


def cholesky_task_count(nt):
    return nt + nt * (nt - 1) // 2 + nt * (nt - 1) * (nt + 1) // 6


def build_pmvn_dag(n_row_tiles, n_chain_tiles):
    """PMVN sweep DAG.

    For every chain column ``k``: ``qmc(0, k)`` -> ``gemm(j, 0, k)`` for all
    ``j >= 1`` -> ``qmc(1, k)`` -> ...  Columns share no writable tile, so they
    form independent components.
    """
    g = TaskGraph("pmvn")
    for k in range(n_chain_tiles):
        for r in range(n_row_tiles):
            if r > 0:
                for j in range(r, n_row_tiles):
                    g.add(
                        "gemm",
                        (j, r - 1, k),
                        reads=[("L", j, r - 1), ("Y", r - 1, k)],
                        writes=[("A", j, k), ("B", j, k)],
                    )
            g.add(
                "qmc",
                (r, r, k),
                reads=[("L", r, r)],
                writes=[("A", r, k), ("B", r, k), ("Y", r, k), ("p", k)],
            )
    return g


@dataclass
class ExecutionPolicy:
    workers: int = 1
    trace: bool = False

    def __post_init__(self):
        if int(self.workers) < 1:
            raise ParameterError("workers must be >= 1")
        self.workers = int(self.workers)


@dataclass(frozen=True)
class TraceRecord:
    task: int
    kernel: str
    coords: tuple
    start_ns: int
    end_ns: int
    worker: int


@dataclass
class TaskTrace:
    records: list[TraceRecord] = field(default_factory=list)
    wall_ns: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "kernel", "i", "j", "k", "start_ns", "end_ns", "worker"])
            for r in sorted(self.records, key=lambda r: r.task):
                i, j, k = (tuple(r.coords) + (None, None, None))[:3]
                w.writerow([r.task, r.kernel, i, j, k, r.start_ns, r.end_ns, r.worker])

    def overlapping_writers(self, graph: TaskGraph):
        """Pairs of tasks writing the same tile whose run intervals overlap."""
        by_tile = collections.defaultdict(list)
        for rec in self.records:
            for tile in graph.tasks[rec.task].writes:
                by_tile[tile].append(rec)
        bad = []
        for recs in by_tile.values():
            recs.sort(key=lambda r: r.start_ns)
            for x, y in zip(recs, recs[1:]):
                if y.start_ns < x.end_ns:
                    bad.append((x.task, y.task))
        return bad


KernelMap = Mapping[str, Callable[[Task], None]]


def execute(graph: TaskGraph, kernels: KernelMap, policy: ExecutionPolicy | None = None) -> TaskTrace:
    """Run every task of ``graph`` honouring its dependencies.

    BLAS is pinned to one thread while tasks run: the task pool is the only
    source of parallelism, and single-threaded BLAS keeps tile results
    independent of how many workers are active.
    """
    policy = policy or ExecutionPolicy()
    order = graph.topological_order()
    missing = {t.kernel for t in graph.tasks} - set(kernels)
    if missing:
        raise GraphError(f"no kernel registered for {sorted(missing)}")
    trace = TaskTrace()
    t0 = time.perf_counter_ns()
    with threadpool_limits(limits=1, user_api="blas"):
        if policy.workers == 1 or len(graph) <= 1:
            _run_serial(graph, order, kernels, trace, policy.trace)
        else:
            _run_stealing(graph, kernels, policy.workers, trace, policy.trace)
    trace.wall_ns = time.perf_counter_ns() - t0
    return trace


def _run_serial(graph, order, kernels, trace, record):
    for tid in order:
        task = graph.tasks[tid]
        start = time.perf_counter_ns()
        kernels[task.kernel](task)
        if record:
            trace.records.append(TraceRecord(tid, task.kernel, task.coords, start, time.perf_counter_ns(), 0))


def _run_stealing(graph, kernels, workers, trace, record):
    pending = [len(p) for p in graph.preds]
    deques = [collections.deque() for _ in range(workers)]
    roots = [t for t, c in enumerate(pending) if c == 0]
    for n, t in enumerate(roots):
        deques[n % workers].append(t)
    cond = threading.Condition()
    state = {"remaining": len(graph.tasks), "error": None}
    records = [[] for _ in range(workers)]

    def take(w):
        if deques[w]:
            return deques[w].pop()
        for off in range(1, workers):
            victim = deques[(w + off) % workers]
            if victim:
                return victim.popleft()
        return None

    def worker(w):
        while True:
            with cond:
                while True:
                    if state["error"] is not None or state["remaining"] == 0:
                        return
                    tid = take(w)
                    if tid is not None:
                        break
                    cond.wait()
            task = graph.tasks[tid]
            start = time.perf_counter_ns()
            try:
                kernels[task.kernel](task)
            except BaseException as exc:  # surfaced in the calling thread
                with cond:
                    if state["error"] is None:
                        state["error"] = exc
                    cond.notify_all()
                return
            end = time.perf_counter_ns()
            if record:
                records[w].append(TraceRecord(tid, task.kernel, task.coords, start, end, w))
            with cond:
                state["remaining"] -= 1
                for s in graph.succs[tid]:
                    pending[s] -= 1
                    if pending[s] == 0:
                        deques[w].append(s)
                cond.notify_all()

    threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(workers)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if state["error"] is not None:
        raise state["error"]
    for rs in records:
        trace.records.extend(rs)
