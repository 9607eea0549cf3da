"""``graphcox`` command line.

Exit codes: 0 success, 1 usage error, 2 data or model error, 3 a fit that
did not converge (its output is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .benchmark import (
    MODEL_KINDS,
    BenchmarkError,
    BenchmarkRun,
    FitSettings,
    fit_model,
    run_benchmark,
)
from .graph import (
    PredictorGraph,
    generate_graph,
    graph_from_data,
    read_edge_list,
    topology_from_dict,
    with_seed,
    write_edge_list,
)
from .metrics import c_index, prediction_errors
from .model_selection import build_model, cross_validate
from .penalties import node_weights, read_weights
from .simulation import StudySpec, generate_replication
from .solver import FitResult
from .survival import read_csv, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_UNCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_text(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def _load_spec(path: Optional[str], seed: Optional[int] = None) -> Optional[StudySpec]:
    if path is None:
        return None
    spec = StudySpec.load(path)
    if seed is not None:
        spec.seed = seed
    return spec


def _settings(args) -> FitSettings:
    spec = _load_spec(args.spec)
    return FitSettings() if spec is None else FitSettings.from_spec(spec)


def _load_graph(args, p: int) -> Optional[PredictorGraph]:
    if args.graph is None:
        return None
    return read_edge_list(args.graph, p)


def _weights(args, graph: Optional[PredictorGraph], settings: FitSettings):
    if graph is None:
        return None
    default = node_weights(graph, settings.tau_rule)
    if args.weights is None:
        return default
    return read_weights(args.weights, graph.p, default)


def _parse_lambda(text: str) -> Optional[float]:
    if text == "cv":
        return None
    try:
        lam = float(text)
    except ValueError:
        raise UsageError("--lambda must be a number or 'cv'") from None
    if not lam >= 0:
        raise UsageError("--lambda must be non-negative")
    return lam


# -- commands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    _require(args, "spec", "out")
    spec = _load_spec(args.spec, args.seed)
    if not 0 <= args.replication < spec.replications:
        raise UsageError(f"--replication must lie in [0, {spec.replications})")
    rep = generate_replication(spec, args.replication)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rep.train, out / "train.csv")
    write_csv(rep.test, out / "test.csv")
    write_edge_list(rep.graph, out / "graph.txt")
    truth = {"replication": rep.index, "seed": rep.seed, "beta0": [float(b) for b in rep.beta0]}
    (out / "truth.json").write_text(_dump(truth), encoding="utf-8")
    return EXIT_OK


def cmd_graph(args) -> int:
    _require(args, "out")
    if (args.data is None) == (args.spec is None):
        raise UsageError("graph needs exactly one of --data or --spec")
    if args.data is not None:
        graph = graph_from_data(read_csv(args.data).covariates, args.alpha)
    else:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        topo = topology_from_dict(raw.get("topology", raw))
        if args.seed is not None and hasattr(topo, "seed"):
            topo = with_seed(topo, args.seed)
        graph = generate_graph(topo)
    for extra in args.merge or ():
        graph = graph.merge(read_edge_list(extra, graph.p))
    write_edge_list(graph, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    _require(args, "data", "out")
    data = read_csv(args.data)
    settings = _settings(args)
    graph = _load_graph(args, data.p)
    if args.penalty == "graph" and graph is None:
        raise UsageError("--penalty graph needs --graph")
    lam = _parse_lambda(args.lam)
    fit, cv = fit_model(args.penalty, data, graph, settings, seed=args.seed or 0, lam=lam,
                        weights=_weights(args, graph, settings))
    out = fit.to_dict()
    if cv is not None:
        out["cv"] = cv.to_dict()
    _write_text(args.out, _dump(out))
    if not fit.converged:
        print(f"warning: fit did not converge after {fit.iterations} iterations", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_predict(args) -> int:
    _require(args, "data", "fit")
    data = read_csv(args.data)
    fit = FitResult.from_dict(json.loads(Path(args.fit).read_text(encoding="utf-8")))
    if fit.beta.size != data.p:
        raise ValueError(f"fit has {fit.beta.size} coefficients, data has {data.p} features")
    scores = data.covariates @ fit.beta
    text = "score\n" + "".join(f"{float(s)!r}\n" for s in scores)
    _write_text(args.out, text)
    return EXIT_OK


def _read_scores(path: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["score"]:
        raise ValueError("score file must have a single 'score' column")
    return np.array([float(r[0]) for r in rows[1:] if r], dtype=float)


def cmd_evaluate(args) -> int:
    _require(args, "data", "scores")
    data = read_csv(args.data)
    scores = _read_scores(args.scores)
    if scores.size != data.n:
        raise ValueError(f"{scores.size} scores for {data.n} observations")
    out = {"c_index": c_index(scores, data.times, data.status)}
    if args.truth is not None:
        _require(args, "fit")
        fit = FitResult.from_dict(json.loads(Path(args.fit).read_text(encoding="utf-8")))
        beta0 = np.array(json.loads(Path(args.truth).read_text(encoding="utf-8"))["beta0"], dtype=float)
        out["l2_error"], out["rpe"] = prediction_errors(fit.beta, beta0, data.covariates)
    _write_text(args.out, _dump(out))
    return EXIT_OK


def cmd_cv(args) -> int:
    _require(args, "data", "out")
    data = read_csv(args.data)
    settings = _settings(args)
    graph = _load_graph(args, data.p)
    if args.penalty == "graph" and graph is None:
        raise UsageError("--penalty graph needs --graph")
    if args.penalty in ("zero", "cox_unregularized"):
        raise UsageError(f"{args.penalty} has no penalty level to tune")
    plan = settings.plan(args.seed or 0, data.n_events)
    model = build_model(args.penalty, data, graph, _weights(args, graph, settings), pilot_plan=plan,
                        config=settings.config(), cv_config=settings.cv_config())
    result = cross_validate(data, model, plan, settings.cv_config())
    _write_text(args.out, result.to_json() + "\n")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    _require(args, "spec", "out")
    spec = _load_spec(args.spec, args.seed)
    if args.replications is not None:
        spec.replications = args.replications
    models = tuple(args.models.split(",")) if args.models else MODEL_KINDS
    try:
        run = BenchmarkRun(spec, models, Path(args.out), args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_benchmark(run)
    for row in report.summary():
        print(f"{row['model']:>18s}  c-index {row['cindex_mean']:.3f} ({row['cindex_sd']:.3f})"
              f"  l2 {row['l2_mean']:.3f} ({row['l2_sd']:.3f})"
              f"  rpe {row['rpe_mean']:.3f} ({row['rpe_sd']:.3f})")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "graph": cmd_graph, "fit": cmd_fit, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "cv": cmd_cv, "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphcox", description="Graph-regularised Cox regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *flags):
        if "data" in flags:
            p.add_argument("--data", help="survival CSV with header time,status,<features>")
        if "graph" in flags:
            p.add_argument("--graph", help="edge list, one 0-based 'i j' pair per line")
        if "weights" in flags:
            p.add_argument("--weights", help="node weights, one 'k tau_k' pair per line")
        if "penalty" in flags:
            p.add_argument("--penalty", default="graph", choices=MODEL_KINDS)
        if "spec" in flags:
            p.add_argument("--spec", help="study specification JSON")
        if "seed" in flags:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output path (stdout when omitted, where allowed)")

    p = sub.add_parser("simulate", help="write one replication's train/test data, graph and truth")
    common(p, "spec", "seed")
    p.add_argument("--replication", type=int, default=0)

    p = sub.add_parser("graph", help="build a predictor graph from data or a topology")
    common(p, "data", "spec", "seed")
    p.add_argument("--alpha", type=float, default=0.05, help="partial-correlation test level")
    p.add_argument("--merge", action="append", help="extra edge list to merge (repeatable)")

    p = sub.add_parser("fit", help="fit a model and write FitResult JSON")
    common(p, "data", "graph", "weights", "penalty", "spec", "seed")
    p.add_argument("--lambda", dest="lam", default="cv", help="penalty level, or 'cv' to tune")

    p = sub.add_parser("predict", help="risk scores x'beta for each row")
    common(p, "data")
    p.add_argument("--fit", help="FitResult JSON from 'fit'")

    p = sub.add_parser("evaluate", help="c-index (and coefficient errors given the truth)")
    common(p, "data")
    p.add_argument("--scores", help="score CSV from 'predict'")
    p.add_argument("--fit", help="FitResult JSON (needed with --truth)")
    p.add_argument("--truth", help="truth JSON from 'simulate'")

    p = sub.add_parser("cv", help="cross-validation curve for the penalty level")
    common(p, "data", "graph", "weights", "penalty", "spec", "seed")

    p = sub.add_parser("benchmark", help="run a simulation study and write reports")
    common(p, "spec", "seed")
    p.add_argument("--threads", type=int, default=1, help="parallel replications")
    p.add_argument("--models", help=f"comma-separated subset of {','.join(MODEL_KINDS)}")
    p.add_argument("--replications", type=int, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits for --help/--version and usage errors; report the code instead
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"graphcox {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BenchmarkError as exc:
        print(f"graphcox benchmark failed (partial results kept): {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        print(f"graphcox {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
