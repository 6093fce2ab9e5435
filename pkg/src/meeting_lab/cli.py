"""``meeting-lab`` command-line front end.

Single-value commands print one JSON document ``{"command", "result",
"manifest"}``; sweeps print CSV preceded by a ``# manifest:`` comment line.
Exit status is 0 on success, 1 on bad input or violated preconditions and 2
on numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import bound_scan, first_order_exact, meeting_error_bound
from .errors import KernelError, MeetingLabError, NumericalError, PreconditionError
from .files import RunManifest, format_edge_list, read_edge_list, read_kernel_csv
from .kernel import (
    KernelMatrix,
    kernel_from_graph,
    named_kernel,
    random_regular_graph,
    require_valid,
    validate_kernel,
)
from .oracle import MeetingTail, exact_pair_laplace, higher_order_residual, simulate_meeting
from .spectral import (
    TraceSeq,
    green_ratio,
    green_ratio_resolvent,
    hitting_laplace,
    spectrum,
    tree_green_ratio,
)
from .voter import alpha_table, laplace_series_approx, laplace_series_exact

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 1, 2
THREADS_ENV = "MEETING_LAB_THREADS"
#: above this size convergence-study falls back on simulation
SOLVE_SIZE_CAP = 5000


class UsageError(PreconditionError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _default_workers() -> int:
    try:
        return max(int(os.environ.get(THREADS_ENV, "1")), 1)
    except ValueError:
        return 1


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


# -- inputs ---------------------------------------------------------------------------


def _add_kernel_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("kernel source (choose one)")
    g.add_argument("--graph", metavar="FILE", help="edge-list file of a regular graph")
    g.add_argument("--kernel", metavar="FILE", help="kernel CSV file")
    g.add_argument("--family", choices=["complete", "cycle"], help="named walk-regular kernel")
    g.add_argument("--random-regular", type=int, metavar="K", help="random K-regular graph")
    g.add_argument("--nodes", type=int, metavar="N", help="vertex count for --family / --random-regular")
    g.add_argument("--graph-seed", type=int, default=0, help="seed for --random-regular")


def _load_kernel(args) -> tuple[KernelMatrix, list[str]]:
    sources = [s for s in ("graph", "kernel", "family", "random_regular") if getattr(args, s, None) is not None]
    if len(sources) != 1:
        raise UsageError("give exactly one of --graph, --kernel, --family, --random-regular")
    src = sources[0]
    if src == "graph":
        return kernel_from_graph(read_edge_list(args.graph)), [args.graph]
    if src == "kernel":
        K = read_kernel_csv(args.kernel)
        require_valid(K)
        return K, [args.kernel]
    if args.nodes is None:
        raise UsageError("--nodes is required with --family / --random-regular")
    if src == "family":
        return named_kernel(args.family, args.nodes), []
    G = random_regular_graph(args.random_regular, args.nodes, args.graph_seed)
    return kernel_from_graph(G), []


# -- output ---------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flags(args) -> dict:
    flags = {("lambda" if k == "lam" else k): v for k, v in vars(args).items() if k not in ("func", "out", "gnuplot")}
    return _clean(flags)


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(args, manifest: RunManifest, result: dict) -> None:
    doc = {"command": manifest.command, "result": _clean(result), "manifest": manifest.finish().as_dict()}
    _emit(args, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _emit_rows(args, manifest: RunManifest, rows: list[dict], columns: list[str]) -> None:
    manifest.finish()
    if getattr(args, "format", "csv") == "json":
        _emit_json(args, manifest, {"rows": rows})
        return
    buf = io.StringIO()
    buf.write(manifest.as_comment() + "\n")
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if v is None else v) for k, v in _clean(row).items()})
    _emit(args, buf.getvalue())


def _write_gnuplot(path: str, data: str, x: str, ys: list[str], columns: list[str], logy: bool = True) -> None:
    idx = {c: i + 1 for i, c in enumerate(columns)}
    plots = ", ".join(f"'{data}' using {idx[x]}:{idx[y]} title '{y}' with linespoints" for y in ys)
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x}'",
        "set logscale y" if logy else "",
        f"plot {plots}",
        "pause -1",
    ]
    Path(path).write_text("\n".join(l for l in lines if l) + "\n")


def _start(args, input_paths=(), seed=None) -> RunManifest:
    return RunManifest.start(args.command, _flags(args), input_paths, seed)


# -- subcommands ----------------------------------------------------------------------


def cmd_validate(args) -> int:
    paths = [p for p in (args.graph, args.kernel) if p]
    manifest = _start(args, paths)
    try:
        # a kernel file is reported on, not rejected
        K = read_kernel_csv(args.kernel) if args.kernel else _load_kernel(args)[0]
    except KernelError as exc:
        _emit_json(args, manifest, {"accepted": False, "error": type(exc).__name__, "message": str(exc)})
        return EXIT_PRECONDITION
    rep = validate_kernel(K)
    result = {
        "accepted": rep.accepted,
        "n": K.n,
        "symmetric": rep.symmetric,
        "zero_trace": rep.zero_trace,
        "stochastic": rep.stochastic,
        "irreducible": rep.irreducible,
        "n_gt_8": rep.n_gt_8,
        "max_asymmetry": rep.max_asymmetry,
        "max_row_defect": rep.max_row_defect,
        "failures": rep.failures(),
    }
    _emit_json(args, manifest, result)
    return EXIT_OK if rep.accepted else EXIT_PRECONDITION


def cmd_rrg(args) -> int:
    manifest = _start(args, seed=args.seed)
    G = random_regular_graph(args.k, args.nodes, args.seed, max_tries=args.max_tries)
    text = format_edge_list(G, comment=manifest.finish().as_comment()[2:])
    if args.out:
        Path(args.out).write_text(text)
        result = {"k": args.k, "n": G.n, "edges": G.m, "seed": args.seed, "file": args.out}
        doc = {"command": "rrg", "result": result, "manifest": manifest.as_dict()}
        sys.stdout.write(json.dumps(_clean(doc), indent=2) + "\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    S = spectrum(K)
    s_max = args.s_max if args.s_max is not None else 12
    traces = TraceSeq.from_spectrum(S, s_max)
    result = {
        "n": K.n,
        "k": _degree(K),
        "value": S.eigenvalues,
        "has_unit": S.has_unit,
        "unit_multiplicity": S.unit_multiplicity,
        "traces": traces.values,
    }
    _emit_json(args, manifest, result)
    return EXIT_OK


def _degree(K: KernelMatrix) -> Optional[int]:
    if K.graph is None:
        return None
    return int(K.graph.degrees()[0])


def cmd_green_ratio(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    S = spectrum(K, vectors=False)
    result = {"lambda": args.lam, "value": green_ratio(S, args.lam), "n": K.n, "k": _degree(K)}
    if K.n <= 2000:
        result["value_resolvent"] = green_ratio_resolvent(K, args.lam)
    _emit_json(args, manifest, result)
    return EXIT_OK


def cmd_tree_limit(args) -> int:
    manifest = _start(args)
    result = {"lambda": args.lam, "value": tree_green_ratio(args.k, args.lam), "n": None, "k": args.k}
    _emit_json(args, manifest, result)
    return EXIT_OK


def cmd_alpha_table(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    S = spectrum(K, vectors=False)
    A = alpha_table(TraceSeq.from_spectrum(S, args.n_max), args.n_max)
    rows = [A.row(n) for n in range(args.n_max + 1)]
    if args.format == "csv":
        out = [{"n": n, "s": s, "alpha": float(v)} for n, row in enumerate(rows) for s, v in enumerate(row)]
        _emit_rows(args, manifest, out, ["n", "s", "alpha"])
    else:
        _emit_json(args, manifest, {"n": K.n, "n_max": args.n_max, "rows": rows, "traces": A.traces.values})
    return EXIT_OK


def cmd_laplace_exact(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    sv = laplace_series_exact(K, args.lam, u=args.u, tol=args.tol)
    result = {
        "lambda": args.lam,
        "value": sv.value,
        "n": K.n,
        "u": args.u,
        "tol": args.tol,
        "n_terms": sv.n_terms,
        "tail_bound": sv.tail_bound,
    }
    _emit_json(args, manifest, result)
    return EXIT_OK


def cmd_laplace_approx(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    S = spectrum(K, vectors=False)
    tr = laplace_series_approx(S, args.lam, u=args.u, mode="trace_ratio")
    al = laplace_series_approx(S, args.lam, u=args.u, mode="alpha_series", tol=args.tol)
    result = {
        "lambda": args.lam,
        "value": tr.value,
        "n": K.n,
        "trace_ratio": tr.value,
        "alpha_series": al.value,
        "n_terms": al.n_terms,
        "tail_bound": al.tail_bound,
        "tol": args.tol,
    }
    _emit_json(args, manifest, result)
    return EXIT_OK


def cmd_bound(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    rep = meeting_error_bound(
        K, args.lam, args.epsilon, args.m, args.gamma, args.s_max, with_lhs=args.with_lhs, lhs_method=args.lhs_method
    )
    _emit_json(args, manifest, rep.as_dict())
    return EXIT_OK


BOUND_COLUMNS = [
    "lambda", "epsilon", "m", "gamma", "n", "term1", "term2", "term3", "total", "delta", "delta_literal",
    "c_eps", "s_star", "s_max", "walk_regular", "vacuous", "ratio", "exact", "lhs_exact", "lhs_method",
    "lhs_tolerance", "violated", "literal_violated", "error",
]


def cmd_bound_scan(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    rows = bound_scan(
        K,
        _floats(args.lam),
        _floats(args.epsilon),
        _ints(args.m),
        _floats(args.gamma),
        s_max=args.s_max,
        with_lhs=args.with_lhs,
        lhs_method=args.lhs_method,
        workers=args.workers,
    )
    _emit_rows(args, manifest, [r.as_dict() for r in rows], BOUND_COLUMNS)
    if args.gnuplot and args.out:
        _write_gnuplot(args.gnuplot, args.out, "m", ["term1", "term2", "term3", "total"], BOUND_COLUMNS)
    return EXIT_OK


def cmd_oracle(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    table = exact_pair_laplace(K, args.lam, method=args.method)
    Q = K.sparse().tocoo()
    value = math.fsum(Q.data * table.phi[Q.row, Q.col]) / K.n
    result = {
        "lambda": args.lam,
        "value": value,
        "n": K.n,
        "method": table.method,
        "residual": table.residual,
        "iterations": table.iterations,
    }
    if args.x is not None and args.y is not None:
        result["pair"] = [args.x, args.y]
        result["pair_value"] = table.phi[args.x, args.y]
        result["hitting_laplace"] = hitting_laplace(K, args.x, args.y, args.lam)
        if args.t is not None:
            result["t"] = args.t
            result["tail"] = MeetingTail(K)(args.x, args.y, args.t)
    _emit_json(args, manifest, result)
    return EXIT_OK


def cmd_simulate(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths, seed=args.seed)
    est = simulate_meeting(K, args.start, args.lam, args.samples, args.seed, workers=args.workers)
    result = est.as_dict()
    result["n"] = K.n
    _emit_json(args, manifest, result)
    return EXIT_OK


def cmd_higher_order(args) -> int:
    K, paths = _load_kernel(args)
    manifest = _start(args, paths)
    tail = MeetingTail(K)
    times = _floats(args.t)
    res = [higher_order_residual(K, args.m, args.n, t, args.quad_points, tail=tail) for t in times]
    result = {"n": K.n, "m": args.m, "order_n": args.n, "t": times, "value": max(res), "residuals": res,
              "quad_points": args.quad_points}
    _emit_json(args, manifest, result)
    return EXIT_OK


CONVERGENCE_COLUMNS = [
    "k", "n", "lambda", "replicate", "graph_seed", "method", "exact", "std_error", "green_ratio",
    "tree_limit", "gap_ratio", "gap_tree", "error",
]


def _replicate_seed(seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(n, rep)).generate_state(1)[0])


def convergence_rows(
    k: int,
    n_list,
    lambda_list,
    graphs_per_n: int,
    seed: int,
    method: str = "auto",
    samples: int = 100_000,
    workers: int = 1,
) -> list[dict]:
    """One row per ``(n, lambda, replicate)``; failures are reported in the ``error`` column."""
    if k < 3:
        raise PreconditionError("k must be at least 3")
    tree = {lam: tree_green_ratio(k, lam) for lam in lambda_list}

    def cell(job):
        n, rep = job
        gseed = _replicate_seed(seed, n, rep)
        base = {"k": k, "n": n, "replicate": rep, "graph_seed": gseed}
        try:
            K = kernel_from_graph(random_regular_graph(k, n, gseed))
            S = spectrum(K, vectors=False)
        except MeetingLabError as exc:
            return [dict(base, **{"lambda": lam, "error": f"{type(exc).__name__}: {exc}"}) for lam in lambda_list]
        out = []
        for lam in lambda_list:
            row = dict(base, **{"lambda": lam, "tree_limit": tree[lam]})
            try:
                ratio = green_ratio(S, lam)
                use = method
                if use == "auto":
                    use = "exact" if n <= SOLVE_SIZE_CAP else "simulate"
                if use == "simulate":
                    est = simulate_meeting(K, "q_adjacent_pair", lam, samples, gseed)
                    value, se, tag = est.value, est.std_error, "simulate"
                else:
                    value, tag, _ = first_order_exact(K, lam, "auto")
                    se = 0.0
                row.update(method=tag, exact=value, std_error=se, green_ratio=ratio,
                           gap_ratio=abs(value - ratio), gap_tree=abs(value - tree[lam]), error="")
            except MeetingLabError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            out.append(row)
        return out

    jobs = [(n, rep) for n in sorted(n_list) for rep in range(graphs_per_n)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(cell, jobs))
    else:
        parts = [cell(j) for j in jobs]
    rows = [r for part in parts for r in part]
    rows.sort(key=lambda r: (r["n"], r["lambda"], r["replicate"]))
    return rows


def cmd_convergence_study(args) -> int:
    manifest = _start(args, seed=args.seed)
    rows = convergence_rows(
        args.k, _ints(args.n_list), _floats(args.lambda_list), args.graphs_per_n, args.seed,
        method=args.method, samples=args.samples, workers=args.workers,
    )
    _emit_rows(args, manifest, rows, CONVERGENCE_COLUMNS)
    if args.gnuplot and args.out:
        _write_gnuplot(args.gnuplot, args.out, "n", ["gap_ratio", "gap_tree"], CONVERGENCE_COLUMNS)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meeting-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help, kernel=True, fmt="json"):
        p = sub.add_parser(name, help=help, description=help)
        if kernel:
            _add_kernel_source(p)
        p.add_argument("--format", choices=["json", "csv"], default=fmt)
        p.add_argument("--out", metavar="FILE", help="write output here instead of stdout")
        p.set_defaults(func=func)
        return p

    def lam(p, default=None):
        p.add_argument("--lambda", dest="lam", type=float, required=default is None, default=default)

    p = add("validate", cmd_validate, "check symmetry, zero trace, stochasticity and irreducibility")

    p = add("rrg", cmd_rrg, "generate a random regular graph as an edge list", kernel=False)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--nodes", "--n", dest="nodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-tries", type=int, default=10_000)

    p = add("spectrum", cmd_spectrum, "eigenvalues and traces of Q")
    p.add_argument("--s-max", type=int)

    p = add("green-ratio", cmd_green_ratio, "Green-function ratio tr(Q/(l+2-2Q))/tr(1/(l+2-2Q))")
    lam(p)

    p = add("tree-limit", cmd_tree_limit, "infinite-tree limit of the Green ratio", kernel=False)
    p.add_argument("--k", type=int, required=True)
    lam(p)

    p = add("alpha-table", cmd_alpha_table, "alpha coefficients of the L0 iteration")
    p.add_argument("--n-max", type=int, default=20)

    for name, func, help in (
        ("laplace-exact", cmd_laplace_exact, "E[exp(-l M_UV)] from the voter-correlation series"),
        ("laplace-approx", cmd_laplace_approx, "Green ratio spectrally and as the alpha series"),
    ):
        p = add(name, func, help)
        lam(p)
        p.add_argument("--u", type=float, default=0.5)
        p.add_argument("--tol", type=float, default=1e-12)

    p = add("bound", cmd_bound, "explicit error bound for the Green-ratio approximation")
    lam(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--s-max", type=int)
    p.add_argument("--with-lhs", action="store_true")
    p.add_argument("--lhs-method", choices=["auto", "series", "solve"], default="auto")

    p = add("bound-scan", cmd_bound_scan, "error bound over a parameter grid (CSV)", fmt="csv")
    p.add_argument("--lambda", dest="lam", required=True, help="comma-separated list")
    p.add_argument("--epsilon", required=True, help="comma-separated list")
    p.add_argument("--m", default="1", help="comma-separated list")
    p.add_argument("--gamma", default="0", help="comma-separated list")
    p.add_argument("--s-max", type=int)
    p.add_argument("--with-lhs", action="store_true")
    p.add_argument("--lhs-method", choices=["auto", "series", "solve"], default="auto")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--gnuplot", metavar="FILE")

    p = add("oracle", cmd_oracle, "product-chain solve for E[exp(-l M_xy)]")
    lam(p)
    p.add_argument("--method", choices=["auto", "direct", "cg"], default="auto")
    p.add_argument("--x", type=int)
    p.add_argument("--y", type=int)
    p.add_argument("--t", type=float, help="also report P(M_xy > t)")

    p = add("simulate", cmd_simulate, "Monte Carlo estimate of E[exp(-l M)]")
    lam(p)
    p.add_argument("--start", default="q_adjacent_pair",
                   help="uniform_pair, q_adjacent_pair, fixed:X,Y, s_step:S, branch:M,N or path:L,S")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=_default_workers())

    p = add("higher-order", cmd_higher_order, "residual of the first-epoch identity for higher-order meeting times")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--n", type=int, default=0)
    p.add_argument("--t", default="2", help="comma-separated times")
    p.add_argument("--quad-points", type=int, default=512)

    p = add("convergence-study", cmd_convergence_study, "random-regular-graph convergence to the tree limit (CSV)",
            kernel=False, fmt="csv")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--n-list", default="100,200,400,800,1600")
    p.add_argument("--lambda-list", default="1")
    p.add_argument("--graphs-per-n", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["auto", "exact", "simulate"], default="auto")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--gnuplot", metavar="FILE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_PRECONDITION
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_PRECONDITION
        return args.func(args)
    except UsageError as exc:
        print(f"meeting-lab: error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except PreconditionError as exc:
        print(f"meeting-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"meeting-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"meeting-lab: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
