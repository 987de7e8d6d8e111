"""``excursion`` command line: data generation, posterior, PMVN, detection, validation, benchmarks.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O failure.
Every command that writes files also writes ``manifest.json`` with the full
argument list, package versions and seeds (no timestamps), so a run can be
repeated from its manifest alone.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .crd import CrdConfig, confidence_function, extract_region, marginal_region
from .errors import DomainError, ExcursionError, FactorizationError, MatrixFormatError, ParameterError, ShapeError
from .field import FieldModel, Geometry, MaternParams, assemble_cov, gen_geometry, posterior_condition, sample_field
from .io import read_csv, read_field, read_geometry, read_matrix, write_columns, write_csv, write_field, write_geometry, write_matrix
from .mcval import validation_curve
from .pmvn import IntegrationLimits, QmcPlan, pmvn
from .runtime import ExecutionPolicy
from .tiles import cholesky_lower, from_dense, tiled_cholesky
from .tlr import TlrConfig, rank_stats, tlr_cholesky, tlr_from_dense

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _strs(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _workers(args):
    env = os.environ.get("EXCURSION_WORKERS")
    if env:
        try:
            return ExecutionPolicy(int(env))
        except ValueError:
            raise UsageError(f"EXCURSION_WORKERS must be a positive integer, got {env!r}")
    return ExecutionPolicy(getattr(args, "workers", 1))


def _manifest(out, args, argv, outputs, extra=None):
    data = {
        "command": args.command,
        "argv": list(argv),
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": getattr(args, "seed", None),
        "workers_env": os.environ.get("EXCURSION_WORKERS"),
        "versions": {
            "excursion": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "kernels": kernels.BACKEND,
        "outputs": sorted(outputs),
    }
    if extra:
        data.update(extra)
    with open(Path(out) / "manifest.json", "w", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _outdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _tlr_cfg(args, m):
    return TlrConfig(args.tlr_eps, args.tlr_maxrank, m, args.tlr_tol)


def _factor(sigma, backend, m, args, policy):
    if backend == "tlr":
        return tlr_cholesky(tlr_from_dense(sigma, _tlr_cfg(args, m), policy), policy)
    return tiled_cholesky(from_dense(sigma, m, True), policy)


def cmd_gen(args, argv):
    kind = {"random": "uniform-random"}.get(args.kind, args.kind)
    geom = gen_geometry(kind, args.n, seed=args.seed)
    params = MaternParams(args.sigma2, args.range, args.nu)
    sigma = assemble_cov(geom, params)
    if args.nugget:
        sigma[np.diag_indices_from(sigma)] += args.nugget
    model = FieldModel(geom, np.zeros(geom.n), sigma)
    values = sample_field(model, cholesky_lower(sigma), args.seed)
    out = _outdir(args.out)
    write_geometry(out / "geometry.csv", geom.points)
    write_field(out / "field.csv", geom.points, values)
    write_matrix(out / "cov.tlmx", sigma)
    _manifest(out, args, argv, ["geometry.csv", "field.csv", "cov.tlmx"])
    return EXIT_OK


def cmd_posterior(args, argv):
    src = Path(args.field)
    points, values = read_field(src / "field.csv")
    sigma = read_matrix(src / "cov.tlmx")
    n = points.shape[0]
    if sigma.shape != (n, n):
        raise MatrixFormatError(f"{src / 'cov.tlmx'} is {sigma.shape}, expected ({n}, {n})")
    if not (1 <= args.obs_count <= n):
        raise UsageError(f"--obs-count must lie in [1, {n}], got {args.obs_count}")
    rng = np.random.default_rng(args.seed)
    obs = np.sort(rng.choice(n, size=args.obs_count, replace=False))
    y = values[obs] + args.noise_sd * rng.standard_normal(obs.size)
    geom = Geometry(points)
    post = posterior_condition(FieldModel(geom, np.zeros(n), sigma), obs, y, args.noise_sd)
    out = _outdir(args.out)
    write_matrix(out / "post_cov.tlmx", post.cov_post)
    write_field(out / "post_mean.csv", points, post.mean_post)
    write_field(out / "field.csv", points, values)
    write_geometry(out / "geometry.csv", points)
    write_columns(out / "observations.csv", index=obs, x=points[obs, 0], y=points[obs, 1], value=y)
    _manifest(out, args, argv, ["post_cov.tlmx", "post_mean.csv", "field.csv", "geometry.csv", "observations.csv"])
    return EXIT_OK


def _limit_vector(text, n, default):
    if text is None:
        return np.full(n, default)
    if text.startswith("@"):
        cols = read_csv(text[1:])
        return np.asarray(next(iter(cols.values())))
    vals = _floats(text)
    if len(vals) == 1:
        return np.full(n, vals[0])
    if len(vals) != n:
        raise UsageError(f"limit vector has {len(vals)} entries, expected 1 or {n}")
    return np.array(vals)


def cmd_pmvn(args, argv):
    backend = args.backend
    path = args.cov
    if args.cov_tlr is not None:
        path, backend = args.cov_tlr, "tlr"
    if path is None:
        raise UsageError("one of --cov or --cov-tlr is required")
    sigma = read_matrix(path)
    n = sigma.shape[0]
    a = _limit_vector(args.a, n, -np.inf)
    b = _limit_vector(args.b, n, np.inf)
    mean = None if args.mean is None else _limit_vector(args.mean, n, 0.0)
    policy = _workers(args)
    plan = QmcPlan(args.samples, args.tile, args.point_set, args.seed)
    t0 = time.perf_counter()
    L = _factor(sigma, backend, args.tile, args, policy)
    est = pmvn(IntegrationLimits(a, b), L, plan, mean=mean, policy=policy)
    wall_ms = (time.perf_counter() - t0) * 1e3
    result = {"value": est.value, "stderr": est.stderr, "N": est.N, "backend": est.backend, "wall_ms": wall_ms}
    print(json.dumps(result))
    if args.out:
        out = _outdir(args.out)
        stable = {k: v for k, v in result.items() if k != "wall_ms"}
        with open(out / "result.json", "w", newline="\n") as fh:
            json.dump(stable, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _manifest(out, args, argv, ["result.json"])
    return EXIT_OK


def _alpha_tag(alpha):
    return repr(float(alpha))


def cmd_crd(args, argv):
    if (args.posterior is None) == (args.field is None):
        raise UsageError("exactly one of --posterior or --field is required")
    if args.posterior is not None:
        src = Path(args.posterior)
        points, mean = read_field(src / "post_mean.csv")
        cov_path = src / "post_cov.tlmx"
    else:
        src = Path(args.field)
        points = read_geometry(src / "geometry.csv")
        mean = np.zeros(points.shape[0])
        cov_path = src / "cov.tlmx"
    sigma = read_matrix(cov_path)
    n = points.shape[0]
    if sigma.shape != (n, n):
        raise MatrixFormatError(f"{cov_path} is {sigma.shape}, expected ({n}, {n})")
    mean_eff = mean
    if args.mean_mode == "literal":
        _, y = read_field(src / "field.csv")
        mean_eff = mean + y
    policy = _workers(args)
    plan = QmcPlan(args.samples, args.tile, args.point_set, args.seed)
    tlr = _tlr_cfg(args, args.tile) if args.backend == "tlr" else None
    cfg = CrdConfig(args.u, tuple(args.alphas), args.stride, plan, args.backend, tlr, args.method)
    model = FieldModel(Geometry(points), mean, sigma)
    cf = confidence_function(model, cfg, policy, mean_eff=mean_eff)
    out = _outdir(args.out)
    outputs = ["confidence.csv", "marginal.csv", "prefix.csv", "mean_eff.csv", "crd_state.json"]
    write_columns(out / "confidence.csv", x=points[:, 0], y=points[:, 1], marginal_p=cf.p_marginal, f=cf.f)
    write_columns(out / "marginal.csv", x=points[:, 0], y=points[:, 1], marginal_p=cf.p_marginal)
    write_columns(out / "prefix.csv", size=cf.sizes, raw=cf.raw, stderr=cf.stderr, f=cf.mono)
    write_field(out / "mean_eff.csv", points, mean_eff)
    for alpha in cfg.alphas:
        tag = _alpha_tag(alpha)
        reg = extract_region(cf, alpha, args.u)
        mreg = marginal_region(cf.p_marginal, alpha, args.u)
        write_columns(out / f"region_{tag}.csv", x=points[:, 0], y=points[:, 1], in_region=reg.mask.astype(int))
        write_columns(out / f"marginal_region_{tag}.csv", x=points[:, 0], y=points[:, 1], in_region=mreg.mask.astype(int))
        outputs += [f"region_{tag}.csv", f"marginal_region_{tag}.csv"]
    state = {
        "u": args.u,
        "alphas": list(cfg.alphas),
        "cov": str(Path(cov_path).resolve()),
        "mean_mode": args.mean_mode,
        "method": args.method,
        "backend": args.backend,
    }
    with open(out / "crd_state.json", "w", newline="\n") as fh:
        json.dump(state, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(out, args, argv, outputs)
    return EXIT_OK


class _StoredCF:
    """Confidence function reloaded from ``confidence.csv`` and ``prefix.csv``."""

    def __init__(self, f, sizes, stderr):
        self.f = f
        self.sizes = sizes
        self.stderr = stderr

    def prefix_stderr(self, size):
        if size <= 0:
            return 0.0
        k = int(np.searchsorted(self.sizes, size))
        return float(self.stderr[min(k, len(self.sizes) - 1)])


def cmd_validate(args, argv):
    src = Path(args.crd_out)
    try:
        with open(src / "crd_state.json") as fh:
            state = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MatrixFormatError(f"{src / 'crd_state.json'}: {exc}") from exc
    conf = read_csv(src / "confidence.csv")
    prefix = read_csv(src / "prefix.csv")
    # validation samples the fitted model; the literal mean mode shifts it by the field draw
    points, mean = read_field(src / "mean_eff.csv")
    sigma = read_matrix(state["cov"])
    alphas = args.alphas or state["alphas"]
    cf = _StoredCF(conf["f"], prefix["size"].astype(np.int64), prefix["stderr"])
    model = FieldModel(Geometry(points), mean, sigma)
    rep = validation_curve(model, cf, alphas, args.N, args.seed, state["u"], policy=_workers(args))
    out = _outdir(args.out or src)
    rep.to_csv(out / "validation.csv")
    _manifest(out, args, argv, ["validation.csv"], {"crd_state": state})
    return EXIT_OK


def cmd_bench(args, argv):
    rows = []
    ratios = []
    kinds = args.kernels or [kernels.BACKEND]
    for name in kinds:
        if name not in kernels.available():
            raise UsageError(f"kernel backend {name!r} unavailable; have {kernels.available()}")
    for n in args.dims:
        geom = gen_geometry("uniform-random", n, seed=args.seed)
        sigma = assemble_cov(geom, MaternParams(1.0, args.range, 0.5))
        limits = IntegrationLimits(np.full(n, -np.inf), np.full(n, args.b))
        for N in args.samples:
            for backend in args.backends:
                for w in args.workers:
                    for kname in kinds:
                        policy = ExecutionPolicy(w)
                        cfg_rows = []
                        with kernels.use(kname):
                            for run in range(args.repeat):
                                t0 = time.perf_counter()
                                L = _factor(sigma, backend, args.tile, args, policy)
                                t1 = time.perf_counter()
                                pmvn(limits, L, QmcPlan(N, args.tile, seed=args.seed), policy=policy)
                                t2 = time.perf_counter()
                                cfg_rows.append([n, N, backend, w, run, (t2 - t0) * 1e3, (t1 - t0) * 1e3])
                        med = statistics.median(r[5] for r in cfg_rows)
                        rows += [r + [med, kname] for r in cfg_rows]
        if {"dense", "tlr"} <= set(args.backends):
            chol = {
                b: statistics.median(r[6] for r in rows if r[0] == n and r[2] == b and r[3] == args.workers[0])
                for b in ("dense", "tlr")
            }
            ratios.append((n, chol["dense"] / chol["tlr"]))
    header = ["n", "N", "backend", "workers", "run", "wall_ms", "chol_ms", "median_ms", "kernels"]
    write_csv(args.out or "/dev/stdout", header, rows)
    for n, r in ratios:
        print(f"n={n} dense/tlr cholesky time ratio: {r:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_rankmap(args, argv):
    sigma = read_matrix(args.cov)
    A = tlr_from_dense(sigma, TlrConfig(args.eps, args.maxrank, args.tile, args.tol), _workers(args))
    st = rank_stats(A)
    st.to_csv(args.out)
    print(f"ranks: {st.summary()} tiles={len(st.rows())}")
    return EXIT_OK


def _add_tlr_flags(p):
    p.add_argument("--tlr-eps", type=float, default=1e-3, help="TLR compression accuracy")
    p.add_argument("--tlr-tol", choices=("relative", "absolute"), default="relative")
    p.add_argument("--tlr-maxrank", type=int, default=None)


def _add_sampling_flags(p):
    p.add_argument("--samples", type=int, default=10_000, help="number of chains N")
    p.add_argument("--tile", type=int, default=128, help="tile size m")
    p.add_argument("--point-set", choices=("pseudo-random", "randomized-lattice"), default="pseudo-random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def build_parser():
    ap = _Parser(prog="excursion", description="MVN probabilities and excursion-set detection for Gaussian fields")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="synthetic geometry, Matérn covariance and one field draw")
    p.add_argument("--kind", choices=("grid", "random", "uniform-random"), default="grid")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--range", type=float, default=0.1)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--nugget", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("posterior", help="condition a generated field on noisy observations")
    p.add_argument("--field", required=True, help="output directory of `gen`")
    p.add_argument("--obs-count", type=int, required=True)
    p.add_argument("--noise-sd", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("pmvn", help="one MVN box probability")
    p.add_argument("--cov", help="TLMX covariance (dense backend unless --backend tlr)")
    p.add_argument("--cov-tlr", help="TLMX covariance to compress and factor in TLR form")
    p.add_argument("--a", help="lower limits: one value, a comma list, or @file.csv")
    p.add_argument("--b", help="upper limits: one value, a comma list, or @file.csv")
    p.add_argument("--mean", help="mean vector: one value, a comma list, or @file.csv")
    p.add_argument("--backend", choices=("dense", "tlr"), default="dense")
    _add_tlr_flags(p)
    _add_sampling_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pmvn)

    p = sub.add_parser("crd", help="confidence function and excursion regions")
    p.add_argument("--posterior", help="output directory of `posterior`")
    p.add_argument("--field", help="output directory of `gen` (prior model, zero mean)")
    p.add_argument("--u", type=float, required=True, help="threshold")
    p.add_argument("--alphas", type=_floats, default=[0.05])
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--method", choices=("prefix", "sweep"), default="prefix")
    p.add_argument("--mean-mode", choices=("posterior", "literal"), default="posterior",
                   help="literal: add the stored field draw to the mean")
    p.add_argument("--backend", choices=("dense", "tlr"), default="dense")
    _add_tlr_flags(p)
    _add_sampling_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crd)

    p = sub.add_parser("validate", help="Monte Carlo check of detected regions")
    p.add_argument("--crd-out", required=True)
    p.add_argument("--N", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alphas", type=_floats, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="timing table for Cholesky + PMVN")
    p.add_argument("--dims", type=_ints, default=[512])
    p.add_argument("--samples", type=_ints, default=[1000])
    p.add_argument("--backends", type=_strs, default=["dense", "tlr"])
    p.add_argument("--workers", type=_ints, default=[1])
    p.add_argument("--kernels", type=_strs, default=None, help="compiled,python")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--tile", type=int, default=128)
    p.add_argument("--range", type=float, default=0.234)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    _add_tlr_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rankmap", help="per-tile TLR ranks as CSV")
    p.add_argument("--cov", required=True)
    p.add_argument("--tile", type=int, default=128)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", choices=("relative", "absolute"), default="relative")
    p.add_argument("--maxrank", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rankmap)
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, ShapeError) as exc:
        print(f"excursion: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MatrixFormatError, OSError) as exc:
        print(f"excursion: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FactorizationError, DomainError, ArithmeticError, ExcursionError) as exc:
        print(f"excursion: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
