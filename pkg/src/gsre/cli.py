"""Command-line front end: fits, solution paths, graph estimation,
simulation, and benchmark tables over CSV/JSON files.

File conventions
----------------
Matrices are headerless RFC-4180-style CSV (comma separator, ``.`` decimal,
UTF-8, one row per line); blank lines and lines starting with ``#`` are
skipped, which lets every artifact carry its configuration echo as comment
lines while remaining directly consumable as input.  Response vectors are
one value per line.  Graph files use the 1-based ``i j`` edge-list format.
JSON artifacts are pretty-printed with sorted keys so re-runs are
byte-identical.

Exit codes: 0 success/converged, 1 input error (message names the offending
file and line), 2 non-convergence (iteration budget exhausted or numerical
breakdown).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import graph as gr
from .errors import GsreError, MaxIterationsExceeded, NumericalBreakdown
from .glasso import estimate_graph
from .graph import NodeWeights, PredictorGraph, default_weights
from .sim import METHODS, SimScenario, generate_dataset, run_benchmark
from .solver import AdmmSettings, Problem
from .solver import fit as solve_fit
from .tuning import fit_path, lambda_grid_paper, lambda_pilot, select


class CliInputError(Exception):
    """Bad flags or unreadable/ill-formed input files (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route its errors through
    # the input-error path instead so 2 stays reserved for non-convergence
    def error(self, message):
        raise CliInputError(message)


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _config_comment_lines(config: dict) -> list[str]:
    return [f"# {key}={_fmt(config[key])}" for key in sorted(config)]


def _write_text(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_matrix(path: Path, arr: np.ndarray, config: dict) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    lines = _config_comment_lines(config)
    lines += [",".join(repr(float(v)) for v in row) for row in arr]
    _write_text(path, lines)


def _write_vector(path: Path, arr: np.ndarray, config: dict) -> None:
    lines = _config_comment_lines(config)
    lines += [repr(float(v)) for v in np.asarray(arr, dtype=float)]
    _write_text(path, lines)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_matrix(path: str) -> np.ndarray:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as err:
        raise CliInputError(f"cannot read {path}: {err.strerror}") from None
    rows: list[list[float]] = []
    width = None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise CliInputError(
                    f"{path}:{lineno}: expected {width} fields, found {len(fields)}"
                )
            row = []
            for field in fields:
                try:
                    value = float(field)
                except ValueError:
                    raise CliInputError(
                        f"{path}:{lineno}: non-numeric value {field.strip()!r}"
                    ) from None
                if not np.isfinite(value):
                    raise CliInputError(f"{path}:{lineno}: non-finite value {field.strip()!r}")
                row.append(value)
            rows.append(row)
    if not rows:
        raise CliInputError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def _read_vector(path: str) -> np.ndarray:
    arr = _read_matrix(path)
    if arr.shape[1] != 1:
        raise CliInputError(
            f"{path}: expected one field per row, found {arr.shape[1]}"
        )
    return arr[:, 0]


def _read_design(ns) -> tuple[np.ndarray, np.ndarray]:
    X = _read_matrix(ns.x)
    y = _read_vector(ns.y)
    if X.shape[0] != y.shape[0]:
        raise CliInputError(
            f"{ns.x} has {X.shape[0]} rows but {ns.y} has {y.shape[0]} rows"
        )
    return X, y


# ---------------------------------------------------------------------------
# flag resolution
# ---------------------------------------------------------------------------


def _resolve_graph(spec: str, p: int) -> PredictorGraph:
    if spec == "edgeless":
        return gr.edgeless(p)
    if spec == "complete":
        return gr.complete(p)
    if spec.startswith("banded:"):
        try:
            width = int(spec.split(":", 1)[1])
        except ValueError:
            raise CliInputError(f"--graph banded:K needs an integer K, got {spec!r}") from None
        try:
            return gr.banded(p, width)
        except ValueError as err:
            raise CliInputError(f"--graph {spec!r}: {err}") from None
    candidate = Path(spec)
    if not candidate.exists():
        raise CliInputError(
            f"--graph must be edgeless, complete, banded:K, or an edge-list "
            f"file; {spec!r} is none of these"
        )
    try:
        edges = gr.parse_edge_list(candidate.read_text(encoding="utf-8"))
        return gr.from_edge_list(p, edges)
    except (OSError, ValueError) as err:
        raise CliInputError(f"{spec}: {err}") from None


def _resolve_weights(spec: str | None, graph: PredictorGraph) -> NodeWeights:
    if spec is None:
        return default_weights(graph)
    try:
        value = float(spec)
    except ValueError:
        tau = _read_vector(spec)
        if tau.size != graph.p:
            raise CliInputError(
                f"{spec}: expected {graph.p} weights, found {tau.size}"
            ) from None
        return NodeWeights(tau)
    return NodeWeights(np.full(graph.p, value))


def _resolve_lambda(
    spec: str, X: np.ndarray, graph: PredictorGraph, weights: NodeWeights
) -> float:
    if spec.startswith("pilot:"):
        parts = spec[len("pilot:") :].split(",")
        if len(parts) != 2:
            raise CliInputError("--lambda pilot spec must be pilot:ALPHA,R")
        try:
            alpha, r = float(parts[0]), float(parts[1])
        except ValueError:
            raise CliInputError(f"--lambda pilot spec {spec!r} is not numeric") from None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            value = lambda_pilot(X, graph, weights, alpha=alpha, r=r, strict=False)
        for item in caught:
            print(f"warning: {item.message}", file=sys.stderr)
        return value
    try:
        value = float(spec)
    except ValueError:
        raise CliInputError(
            f"--lambda must be a positive number or pilot:ALPHA,R, got {spec!r}"
        ) from None
    if not value > 0:
        raise CliInputError("--lambda must be positive")
    return value


_ADMM_FLAGS = (
    ("admm.rho", "rho"),
    ("admm.gamma", "gamma"),
    ("admm.tol-primal", "tol_primal"),
    ("admm.tol-dual", "tol_dual"),
    ("admm.max-iter", "max_iter"),
    ("admm.switch-ratio", "projection_switch_ratio"),
    ("admm.support-tol", "support_tol"),
)


def _resolve_settings(ns) -> tuple[AdmmSettings, bool]:
    """Merge --admm.* overrides into the defaults.

    Also reports whether any override was supplied, so harness commands can
    keep their own data-adaptive defaults when the user sets nothing.
    """
    overrides = {}
    for flag, attr in _ADMM_FLAGS:
        value = getattr(ns, flag.replace(".", "_").replace("-", "_"))
        if value is not None:
            overrides[attr] = value
    return replace(AdmmSettings(), **overrides), bool(overrides)


def _settings_config(settings: AdmmSettings) -> dict:
    return {flag: getattr(settings, attr) for flag, attr in _ADMM_FLAGS}


def _scenario_from_flags(ns) -> SimScenario:
    return SimScenario(
        example=ns.example,
        noise=ns.noise,
        n_train=ns.n_train,
        n_val=ns.n_val,
        n_test=ns.n_test,
        p=ns.p,
        seed=ns.seed,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(ns) -> int:
    X, y = _read_design(ns)
    graph = _resolve_graph(ns.graph, X.shape[1])
    weights = _resolve_weights(ns.tau, graph)
    lam = _resolve_lambda(getattr(ns, "lambda"), X, graph, weights)
    settings, _ = _resolve_settings(ns)
    config = {
        "command": "fit",
        "x": ns.x,
        "y": ns.y,
        "graph": ns.graph,
        "tau": ns.tau if ns.tau is not None else "default",
        "lambda": getattr(ns, "lambda"),
        "loss": ns.loss,
        "out": ns.out,
    }
    config.update(_settings_config(settings))
    prob = Problem(X, y, graph, weights, lam, loss=ns.loss.replace("-", "_"))
    result = solve_fit(prob, settings)
    doc = {
        "beta_hat": [float(v) for v in result.beta_hat],
        "config": config,
        "iterations": result.iterations,
        "kkt_certificate": result.kkt_certificate,
        "lambda": lam,
        "objective": result.objective,
        "rss": result.rss,
        "status": result.status,
        "support": [int(i) + 1 for i in result.support],
    }
    _write_json(Path(ns.out), doc)
    return 0 if result.status == "converged" else 2


def cmd_path(ns) -> int:
    X, y = _read_design(ns)
    graph = _resolve_graph(ns.graph, X.shape[1])
    weights = _resolve_weights(ns.tau, graph)
    settings, _ = _resolve_settings(ns)
    use_validation = ns.select_method == "validation"
    if (ns.x_val is None) != (ns.y_val is None):
        raise CliInputError("--x-val and --y-val must be given together")
    if use_validation and ns.x_val is None:
        raise CliInputError("--select.method validation needs --x-val and --y-val")
    X_val = y_val = None
    if ns.x_val is not None:
        X_val = _read_matrix(ns.x_val)
        y_val = _read_vector(ns.y_val)
        if X_val.shape[0] != y_val.shape[0]:
            raise CliInputError(
                f"{ns.x_val} has {X_val.shape[0]} rows but {ns.y_val} has "
                f"{y_val.shape[0]} rows"
            )
        if X_val.shape[1] != X.shape[1]:
            raise CliInputError(
                f"{ns.x_val} has {X_val.shape[1]} columns but {ns.x} has "
                f"{X.shape[1]} columns"
            )
    try:
        grid = lambda_grid_paper(
            X, min_exp=ns.grid_min_exp, max_exp=ns.grid_max_exp, step=ns.grid_step
        )
    except ValueError as err:
        raise CliInputError(str(err)) from None
    config = {
        "command": "path",
        "x": ns.x,
        "y": ns.y,
        "graph": ns.graph,
        "tau": ns.tau if ns.tau is not None else "default",
        "loss": ns.loss,
        "grid.min-exp": ns.grid_min_exp,
        "grid.max-exp": ns.grid_max_exp,
        "grid.step": ns.grid_step,
        "select.method": ns.select_method,
        "x-val": ns.x_val if ns.x_val is not None else "",
        "y-val": ns.y_val if ns.y_val is not None else "",
        "out": ns.out,
    }
    config.update(_settings_config(settings))
    path = fit_path(
        X, y, graph, weights, grid, settings=settings, loss=ns.loss.replace("-", "_")
    )
    idx = select(
        path,
        method=ns.select_method,
        X_val=X_val if use_validation else None,
        y_val=y_val if use_validation else None,
    )
    with_val = X_val is not None
    val_err = None
    if with_val:
        if path.validation_error is None:
            # validation columns were requested but selection ran on HBIC;
            # compute the column for the report
            val_err = np.array(
                [
                    float(np.sum((y_val - X_val @ f.beta_hat) ** 2)) / len(y_val)
                    if f is not None
                    else np.inf
                    for f in path.fits
                ]
            )
        else:
            val_err = path.validation_error
    header = ["lambda", "objective", "support_size", "hbic"]
    if with_val:
        header.append("validation_error")
    header.append("selected")
    lines = _config_comment_lines(config)
    lines.append(",".join(header))
    for k, lam in enumerate(grid.values):
        fit_k = path.fits[k]
        if fit_k is None:
            cells = [repr(float(lam)), "", "", ""]
        else:
            cells = [
                repr(float(lam)),
                repr(float(fit_k.objective)),
                str(int(fit_k.support.size)),
                repr(float(path.hbic[k])),
            ]
        if with_val:
            cells.append("" if fit_k is None else repr(float(val_err[k])))
        cells.append("1" if k == idx else "0")
        lines.append(",".join(cells))
    _write_text(Path(ns.out), lines)
    selected_fit = path.fits[idx]
    if selected_fit is None or selected_fit.status != "converged":
        print(
            f"warning: selected fit (lambda={grid.values[idx]!r}) did not converge",
            file=sys.stderr,
        )
        return 2
    return 0


def cmd_graph(ns) -> int:
    X = _read_matrix(ns.x)
    config = {
        "command": "graph",
        "x": ns.x,
        "penalty": ns.penalty,
        "edge-tol": ns.edge_tol,
        "out": ns.out,
    }
    try:
        graph, est = estimate_graph(
            X, penalty=ns.penalty, edge_tol=ns.edge_tol, return_precision=True
        )
    except ValueError as err:
        raise CliInputError(str(err)) from None
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = _config_comment_lines(config)
    lines.append(f"# nodes={graph.p} edges={len(graph.edges())}")
    body = gr.format_edge_list(graph)
    lines += body.splitlines()
    _write_text(out_dir / "edges.txt", lines)
    # the precision matrix is on the correlation scale (columns are
    # standardized before the sparse inverse is fit)
    _write_matrix(out_dir / "precision.csv", est.omega, config)
    return 0


def cmd_simulate(ns) -> int:
    scen = _scenario_from_flags(ns)
    data = generate_dataset(scen, rep=ns.rep)
    config = {
        "command": "simulate",
        "example": scen.example,
        "noise": scen.noise,
        "n-train": scen.n_train,
        "n-val": scen.n_val,
        "n-test": scen.n_test,
        "p": scen.p,
        "seed": scen.seed,
        "rep": ns.rep,
        "out": ns.out,
    }
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_matrix(out_dir / "X_train.csv", data.X_train, config)
    _write_vector(out_dir / "y_train.csv", data.y_train, config)
    _write_matrix(out_dir / "X_val.csv", data.X_val, config)
    _write_vector(out_dir / "y_val.csv", data.y_val, config)
    _write_matrix(out_dir / "X_test.csv", data.X_test, config)
    _write_vector(out_dir / "y_test.csv", data.y_test, config)
    model = data.model
    doc = {
        "beta_star": [float(v) for v in model.beta_star],
        "config": config,
        "edges": [[i + 1, j + 1] for i, j in model.true_graph.edges()],
        "sigma": model.sigma,
        "support": [int(i) + 1 for i in np.flatnonzero(model.beta_star)],
    }
    _write_json(out_dir / "model.json", doc)
    return 0


def cmd_bench(ns) -> int:
    scen = _scenario_from_flags(ns)
    methods = tuple(m.strip() for m in ns.methods.split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise CliInputError(f"unknown method {m!r}; choose among {', '.join(METHODS)}")
    if not methods:
        raise CliInputError("--methods must list at least one method")
    settings, overridden = _resolve_settings(ns)
    config = {
        "command": "bench",
        "example": scen.example,
        "noise": scen.noise,
        "n-train": scen.n_train,
        "n-val": scen.n_val,
        "n-test": scen.n_test,
        "p": scen.p,
        "seed": scen.seed,
        "reps": ns.reps,
        "methods": ",".join(methods),
        "select.method": ns.select_method,
        "graph.penalty": ns.graph_penalty,
        "format": ns.format,
        "out": ns.out,
    }
    if overridden:
        config.update(_settings_config(settings))
    else:
        config["admm"] = "adaptive"
    result = run_benchmark(
        scen,
        methods=methods,
        reps=ns.reps,
        selection=ns.select_method,
        graph_penalty=ns.graph_penalty,
        settings=settings if overridden else None,
    )
    out_path = Path(ns.out)
    if ns.format == "csv":
        lines = _config_comment_lines(config)
        lines += result.to_csv().splitlines()
        _write_text(out_path, lines)
    else:
        summary: dict = {}
        for method, metric, mean, sd in result.summary():
            cell = summary.setdefault(method, {})
            cell[metric] = {
                "mean": float(mean) if np.isfinite(mean) else None,
                "sd": float(sd) if np.isfinite(sd) else None,
            }
        doc = {
            "config": config,
            "summary": summary,
            "completed": {m: len(result.rows[m]) for m in methods},
            "failures": {
                m: [[rep, msg] for rep, msg in result.failures[m]] for m in methods
            },
        }
        _write_json(out_path, doc)
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_admm_flags(parser) -> None:
    group = parser.add_argument_group("solver options")
    group.add_argument("--admm.rho", dest="admm_rho", type=float, default=None)
    group.add_argument("--admm.gamma", dest="admm_gamma", type=float, default=None)
    group.add_argument(
        "--admm.tol-primal", dest="admm_tol_primal", type=float, default=None
    )
    group.add_argument(
        "--admm.tol-dual", dest="admm_tol_dual", type=float, default=None
    )
    group.add_argument("--admm.max-iter", dest="admm_max_iter", type=int, default=None)
    group.add_argument(
        "--admm.switch-ratio", dest="admm_switch_ratio", type=float, default=None
    )
    group.add_argument(
        "--admm.support-tol", dest="admm_support_tol", type=float, default=None
    )


def _add_design_flags(parser) -> None:
    parser.add_argument("--x", required=True, help="design matrix CSV (headerless)")
    parser.add_argument("--y", required=True, help="response CSV, one value per line")
    parser.add_argument(
        "--graph",
        required=True,
        help="edgeless | complete | banded:K | edge-list file (1-based 'i j' lines)",
    )
    parser.add_argument(
        "--tau",
        default=None,
        help="node weights: a constant, or a file with one weight per line "
        "(default: degree-based weights)",
    )
    parser.add_argument(
        "--loss",
        choices=("sqrt", "least-squares"),
        default="sqrt",
        help="square-root loss (default) or least-squares loss",
    )


def _add_scenario_flags(parser) -> None:
    parser.add_argument("--example", type=int, required=True, choices=(1, 2, 3))
    parser.add_argument(
        "--noise", required=True, choices=("gaussian", "student_t", "laplace", "uniform")
    )
    parser.add_argument("--n-train", dest="n_train", type=int, required=True)
    parser.add_argument("--n-val", dest="n_val", type=int, required=True)
    parser.add_argument("--n-test", dest="n_test", type=int, required=True)
    parser.add_argument("--p", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="gsre",
        description="Sparse regression with a graph-structured penalty: "
        "fits, solution paths, graph estimation, simulation, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one penalty level, write JSON")
    _add_design_flags(p_fit)
    p_fit.add_argument(
        "--lambda",
        required=True,
        help="penalty level: a positive number, or pilot:ALPHA,R for the "
        "noise-scale-free reference value",
    )
    p_fit.add_argument("--out", required=True, help="output JSON path")
    _add_admm_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_path = sub.add_parser("path", help="fit the penalty grid, write CSV")
    _add_design_flags(p_path)
    p_path.add_argument("--x-val", dest="x_val", default=None)
    p_path.add_argument("--y-val", dest="y_val", default=None)
    p_path.add_argument(
        "--grid.min-exp", dest="grid_min_exp", type=float, default=-13.0
    )
    p_path.add_argument("--grid.max-exp", dest="grid_max_exp", type=float, default=-5.0)
    p_path.add_argument("--grid.step", dest="grid_step", type=float, default=0.2)
    p_path.add_argument(
        "--select.method",
        dest="select_method",
        choices=("hbic", "validation"),
        default="hbic",
    )
    p_path.add_argument("--out", required=True, help="output CSV path")
    _add_admm_flags(p_path)
    p_path.set_defaults(func=cmd_path)

    p_graph = sub.add_parser(
        "graph", help="estimate the predictor graph, write edge list + precision"
    )
    p_graph.add_argument("--x", required=True, help="sample matrix CSV")
    p_graph.add_argument("--penalty", type=float, default=0.1)
    p_graph.add_argument("--edge-tol", dest="edge_tol", type=float, default=1e-8)
    p_graph.add_argument("--out", required=True, help="output directory")
    p_graph.set_defaults(func=cmd_graph)

    p_sim = sub.add_parser(
        "simulate", help="write one simulated train/val/test split"
    )
    _add_scenario_flags(p_sim)
    p_sim.add_argument("--rep", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="replicated benchmark table")
    _add_scenario_flags(p_bench)
    p_bench.add_argument("--reps", type=int, default=50)
    p_bench.add_argument(
        "--methods",
        default=",".join(METHODS),
        help=f"comma-separated subset of {', '.join(METHODS)}",
    )
    p_bench.add_argument(
        "--select.method",
        dest="select_method",
        choices=("hbic", "validation"),
        default="hbic",
    )
    p_bench.add_argument(
        "--graph.penalty", dest="graph_penalty", type=float, default=0.36
    )
    p_bench.add_argument("--format", choices=("csv", "json"), default="csv")
    p_bench.add_argument("--out", required=True, help="output file path")
    _add_admm_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except CliInputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except CliInputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (MaxIterationsExceeded, NumericalBreakdown) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except GsreError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
