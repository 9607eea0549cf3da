"""Simulation benchmark: tune every model on each replication's training set,
score it on the test set, and write per-replication and aggregated reports.

All report files are deterministic functions of the study specification, so
a rerun with the same seed reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import PredictorGraph
from .metrics import MetricReport, MetricRow, c_index, prediction_errors
from .model_selection import CvPlan, CvResult, build_model, tune_and_fit
from .penalties import node_weights
from .simulation import StudySpec, generate_replication
from .solver import ConvergenceWarning, FitConfig, FitResult, fit_cox_newton
from .survival import SurvivalDataset

MODEL_KINDS = ("graph", "lasso", "ridge", "elastic_net", "scad", "adaptive_lasso",
               "zero", "cox_unregularized")
DEFAULT_MODELS = MODEL_KINDS

ROW_FIELDS = ("model", "replication", "seed", "l2_error", "rpe", "c_index", "converged", "lambda")
REPORT_FIELDS = ("model", "l2_mean", "l2_sd", "rpe_mean", "rpe_sd", "cindex_mean", "cindex_sd",
                 "replications", "seed", "n_unconverged")


class BenchmarkError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitSettings:
    """Tuning and solver settings shared by the benchmark and the CLI ``fit``."""

    n_folds: int = 5
    n_lambda: int = 30
    lambda_ratio: float = 1e-3
    lambda_grid: Optional[tuple] = None
    criterion: str = "cv_partial_likelihood"
    max_iter: int = 5000
    cv_max_iter: int = 2000
    tol: float = 1e-6
    tau_rule: str = "sqrt_degree"

    @classmethod
    def from_spec(cls, spec: StudySpec) -> FitSettings:
        grid = None if spec.lambda_grid is None else tuple(float(x) for x in spec.lambda_grid)
        return cls(spec.n_folds, spec.n_lambda, spec.lambda_ratio, grid, spec.criterion,
                   spec.max_iter, spec.cv_max_iter, spec.tol, spec.tau_rule)

    def config(self) -> FitConfig:
        return FitConfig(max_iter=self.max_iter, tol=self.tol)

    def cv_config(self) -> FitConfig:
        return FitConfig(max_iter=self.cv_max_iter, tol=self.tol)

    def plan(self, seed: int, n_events: Optional[int] = None) -> CvPlan:
        k = self.n_folds if n_events is None else min(self.n_folds, n_events)
        grid = None if self.lambda_grid is None else np.asarray(self.lambda_grid, dtype=float)
        return CvPlan(n_folds=k, lambda_grid=grid, n_lambda=self.n_lambda,
                      lambda_ratio=self.lambda_ratio, criterion=self.criterion, seed=seed)


def fit_model(kind: str, train: SurvivalDataset, graph: Optional[PredictorGraph],
              settings: FitSettings = FitSettings(), seed: int = 0,
              lam: Optional[float] = None, weights=None) -> tuple[FitResult, Optional[CvResult]]:
    """Fit one benchmark model; ``lam=None`` tunes the penalty level by CV.

    ``seed`` drives the fold assignment (and the adaptive-lasso pilot's folds).
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model {kind!r}; choose from {MODEL_KINDS}")
    if kind == "zero":
        return FitResult(np.zeros(train.p), [train.loss.value(np.zeros(train.p))], 0, True,
                         0.0, "zero"), None
    if kind == "cox_unregularized":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return fit_cox_newton(train), None
    if kind == "graph" and weights is None:
        weights = node_weights(graph, settings.tau_rule)
    plan = settings.plan(seed, train.n_events)
    model = build_model(kind, train, graph, weights, pilot_plan=plan,
                        config=settings.config(), cv_config=settings.cv_config())
    if lam is None:
        return tune_and_fit(train, model, plan, settings.config(), settings.cv_config())
    return model.fit(train, float(lam), settings.config()), None


def score_fit(beta, beta0, test: SurvivalDataset) -> tuple[float, float, float]:
    """``(l2_error, rpe, c_index)`` of coefficients ``beta`` on the test set."""
    l2, rpe = prediction_errors(beta, beta0, test.covariates)
    return l2, rpe, c_index(test.covariates @ beta, test.times, test.status)


def run_replication(spec: StudySpec, r: int, models: Sequence[str]) -> list[MetricRow]:
    rep = generate_replication(spec, r)
    settings = FitSettings.from_spec(spec)
    rows = []
    for kind in models:
        fit, _ = fit_model(kind, rep.train, rep.graph, settings, seed=rep.seed)
        l2, rpe, ci = score_fit(fit.beta, rep.beta0, rep.test)
        rows.append(MetricRow(kind, r, l2, rpe, ci, bool(fit.converged), float(fit.lambda_used)))
    return rows


@dataclass
class BenchmarkRun:
    spec: StudySpec
    models: tuple = DEFAULT_MODELS
    out_dir: Optional[Path] = None
    threads: int = 1

    def __post_init__(self):
        self.models = tuple(self.models)
        if not self.models:
            raise ValueError("model list must be non-empty")
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad:
            raise ValueError(f"unknown models {bad}; choose from {MODEL_KINDS}")
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate model names")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass
class StudyReport:
    spec: StudySpec
    models: tuple
    metrics: MetricReport = field(default_factory=MetricReport)
    complete: bool = True
    error: Optional[str] = None

    def rows_table(self) -> list[dict]:
        seed = self.spec.seed
        return [{
            "model": r.model, "replication": r.replication, "seed": seed + r.replication,
            "l2_error": r.l2_error, "rpe": r.rpe, "c_index": r.c_index,
            "converged": r.converged, "lambda": r.lam,
        } for r in sorted(self.metrics.rows, key=lambda r: (r.replication, self.models.index(r.model)))]

    def summary(self) -> list[dict]:
        out = []
        for row in self.metrics.aggregate():
            row = dict(row)
            row["seed"] = self.spec.seed
            out.append({k: row[k] for k in REPORT_FIELDS})
        return out

    def n_unconverged(self) -> int:
        return sum(not r.converged for r in self.metrics.rows)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "models": list(self.models),
            "summary": self.summary(),
            "rows": self.rows_table(),
        }

    def write(self, out_dir: Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "rows": out_dir / "replications.csv",
            "report": out_dir / "report.csv",
            "json": out_dir / "report.json",
            "manifest": out_dir / "manifest.json",
        }
        files["rows"].write_text(_csv_text(ROW_FIELDS, self.rows_table()), encoding="utf-8")
        files["report"].write_text(_csv_text(REPORT_FIELDS, self.summary()), encoding="utf-8")
        files["json"].write_text(_json_text(self.to_dict()), encoding="utf-8")
        done = sorted({r.replication for r in self.metrics.rows})
        manifest = {
            "status": "complete" if self.complete else "partial",
            "error": self.error,
            "replications_requested": self.spec.replications,
            "replications_completed": done,
            "models": list(self.models),
            "seed": self.spec.seed,
            "n_unconverged": self.n_unconverged(),
            "files": {k: v.name for k, v in files.items() if k != "manifest"},
        }
        files["manifest"].write_text(_json_text(manifest), encoding="utf-8")
        return files


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else str(v))
    return str(v)


def _csv_text(fields, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(row[f]) for f in fields])
    return buf.getvalue()


def _json_text(obj) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def _replication_job(args):
    spec, r, models = args
    return run_replication(spec, r, models)


def run_benchmark(run: BenchmarkRun) -> StudyReport:
    """Run every replication of the study; write reports if ``run.out_dir`` is set.

    Replications run in index order (or in a process pool with
    ``run.threads > 1``) and are collected in index order, so the report
    does not depend on scheduling. If a replication raises, the finished
    ones are still written with a ``partial`` manifest and the error is
    re-raised as :class:`BenchmarkError`.
    """
    spec = run.spec
    report = StudyReport(spec, run.models)
    jobs = [(spec, r, run.models) for r in range(spec.replications)]
    try:
        if run.threads == 1:
            for job in jobs:
                for row in _replication_job(job):
                    report.metrics.add(row)
        else:
            with ProcessPoolExecutor(max_workers=run.threads) as pool:
                for rows in pool.map(_replication_job, jobs):
                    for row in rows:
                        report.metrics.add(row)
    except Exception as exc:
        report.complete = False
        report.error = f"{type(exc).__name__}: {exc}"
        if run.out_dir is not None:
            report.write(run.out_dir)
        raise BenchmarkError(report.error) from exc
    if run.out_dir is not None:
        report.write(run.out_dir)
    return report
