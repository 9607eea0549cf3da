"""K-fold cross-validation of the penalty level along a warm-started path."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import PredictorGraph
from .metrics import MetricError, c_index
from .penalties import AdaptiveLasso, DuplicatedDesign, Penalty, Ridge, duplicate_design, make_penalty, node_weights
from .solver import FitConfig, FitResult, fit_graph_cox, fit_penalized_cox, lambda_max, penalized_lambda_max
from .survival import DataError, SurvivalDataset

CRITERIA = ("cv_partial_likelihood", "cv_c_index")


class GraphModel:
    """Graph-regularised Cox model with fixed node weights."""

    name = "graph"

    def __init__(self, graph: PredictorGraph, weights=None):
        self.graph = graph
        self.weights = node_weights(graph) if weights is None else np.asarray(weights, dtype=float)
        self.design: DuplicatedDesign = duplicate_design(None, graph)

    def lambda_max(self, data: SurvivalDataset) -> float:
        return lambda_max(data, self.graph, self.weights)

    def fit(self, data, lam, config: FitConfig, warm: Optional[FitResult] = None) -> FitResult:
        cfg = config.replace(lam=lam, weights=self.weights)
        init = None
        if warm is not None:
            init = warm.expanded
            cfg = cfg.replace(step=warm.step)
        return fit_graph_cox(data, self.graph, cfg, design=self.design, init=init)


class PenaltyModel:
    """Cox model with one of the classical penalties."""

    def __init__(self, penalty: Penalty, name: Optional[str] = None):
        self.penalty = penalty
        self.name = name or penalty.kind

    def lambda_max(self, data: SurvivalDataset) -> float:
        return penalized_lambda_max(data, self.penalty)

    def fit(self, data, lam, config: FitConfig, warm: Optional[FitResult] = None) -> FitResult:
        cfg = config.replace(lam=lam)
        init = None
        if warm is not None:
            init = warm.beta
            cfg = cfg.replace(step=warm.step)
        return fit_penalized_cox(data, self.penalty, cfg, init=init)


@dataclass
class CvPlan:
    n_folds: int = 5
    folds: Optional[np.ndarray] = None
    lambda_grid: Optional[np.ndarray] = None
    n_lambda: int = 30
    lambda_ratio: float = 1e-3
    criterion: str = "cv_partial_likelihood"
    seed: int = 0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.n_folds < 2:
            raise ValueError("need at least two folds")


@dataclass
class CvResult:
    lambda_grid: np.ndarray
    criterion: np.ndarray
    best_lambda: float
    best_index: int
    folds: np.ndarray = field(repr=False)
    criterion_name: str = "cv_partial_likelihood"

    def to_dict(self) -> dict:
        return {
            "lambda_grid": [float(x) for x in self.lambda_grid],
            "criterion": [float(x) for x in self.criterion],
            "best_lambda": float(self.best_lambda),
            "criterion_name": self.criterion_name,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def make_folds(status, n_folds: int, seed: int = 0) -> np.ndarray:
    """Event-stratified fold labels; per-fold event counts differ by at most one."""
    status = np.asarray(status)
    n = status.size
    if n_folds > n:
        raise DataError(f"{n_folds} folds requested for {n} observations")
    events = np.flatnonzero(status == 1)
    if events.size < n_folds:
        raise DataError(f"only {events.size} events; every one of {n_folds} folds needs one")
    censored = np.flatnonzero(status != 1)
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    ev = rng.permutation(events)
    folds[ev] = np.arange(ev.size) % n_folds
    ce = rng.permutation(censored)
    # continue the round-robin so fold sizes stay balanced too
    folds[ce] = (np.arange(ce.size) + ev.size) % n_folds
    return folds


def lambda_grid(lam_max: float, n_lambda: int = 30, ratio: float = 1e-3) -> np.ndarray:
    """Descending log-spaced grid from ``lam_max`` to ``ratio * lam_max``."""
    if lam_max <= 0:
        return np.zeros(1)
    if n_lambda == 1:
        return np.array([lam_max])
    return lam_max * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def fit_path(model, data: SurvivalDataset, lambdas, config: FitConfig) -> list[FitResult]:
    """Fit each penalty level in order, warm-starting from the previous one."""
    fits, warm = [], None
    for lam in lambdas:
        warm = model.fit(data, float(lam), config, warm)
        fits.append(warm)
    return fits


def _log_partial_likelihood(beta, data: SurvivalDataset) -> float:
    return -data.n * data.loss.value(beta)


def cross_validate(data: SurvivalDataset, model, plan: CvPlan = CvPlan(),
                   config: FitConfig = FitConfig()) -> CvResult:
    """Choose the penalty level by k-fold cross-validation.

    ``cv_partial_likelihood`` scores a fold by ``l_full(b) - l_train(b)``,
    the held-out contribution to the partial log-likelihood; ``cv_c_index``
    averages held-out concordance. The best level maximises the criterion,
    ties going to the larger penalty.
    """
    folds = plan.folds if plan.folds is not None else make_folds(data.status, plan.n_folds, plan.seed)
    folds = np.asarray(folds)
    if folds.shape[0] != data.n:
        raise DataError("fold labels must cover every observation")
    labels = np.unique(folds)
    for f in labels:
        if not np.any(data.status[folds == f] == 1):
            raise DataError(f"fold {f} contains no events")
    if plan.lambda_grid is not None:
        grid = np.sort(np.asarray(plan.lambda_grid, dtype=float))[::-1]
    else:
        grid = lambda_grid(model.lambda_max(data), plan.n_lambda, plan.lambda_ratio)

    score = np.zeros(grid.size)
    counts = np.zeros(grid.size)
    for f in labels:
        held = folds == f
        train = data.subset(np.flatnonzero(~held))
        fits = fit_path(model, train, grid, config)
        if plan.criterion == "cv_partial_likelihood":
            for i, fit in enumerate(fits):
                score[i] += _log_partial_likelihood(fit.beta, data) - _log_partial_likelihood(fit.beta, train)
                counts[i] += 1
        else:
            test = data.subset(np.flatnonzero(held))
            for i, fit in enumerate(fits):
                try:
                    score[i] += c_index(test.covariates @ fit.beta, test.times, test.status)
                    counts[i] += 1
                except MetricError:
                    pass
    if plan.criterion == "cv_c_index":
        with np.errstate(invalid="ignore"):
            score = np.where(counts > 0, score / np.maximum(counts, 1), -np.inf)
    best = int(np.argmax(score))
    return CvResult(grid, score, float(grid[best]), best, folds, plan.criterion)


def tune_and_fit(data: SurvivalDataset, model, plan: CvPlan = CvPlan(),
                 config: FitConfig = FitConfig(),
                 cv_config: Optional[FitConfig] = None) -> tuple[FitResult, CvResult]:
    """Cross-validate, then refit on all of ``data`` along the path to the best level.

    ``cv_config`` (default ``config``) governs the fold fits, so a cheaper
    iteration budget can be spent on the many path fits than on the refit.
    """
    cv = cross_validate(data, model, plan, cv_config or config)
    fits = fit_path(model, data, cv.lambda_grid[: cv.best_index + 1], config)
    return fits[-1], cv


def adaptive_lasso_penalty(data: SurvivalDataset, gamma: float = 1.0,
                           plan: Optional[CvPlan] = None,
                           config: FitConfig = FitConfig(),
                           cv_config: Optional[FitConfig] = None) -> AdaptiveLasso:
    """Adaptive-lasso weights ``1/|b|^gamma`` from a cross-validated ridge pilot."""
    plan = plan or CvPlan(n_folds=min(5, data.n_events))
    pilot, _ = tune_and_fit(data, PenaltyModel(Ridge()), plan, config, cv_config)
    mag = np.maximum(np.abs(pilot.beta), 1e-10)
    return AdaptiveLasso(mag ** -gamma)


def build_model(kind: str, data: SurvivalDataset, graph: Optional[PredictorGraph] = None,
                weights=None, pilot_plan: Optional[CvPlan] = None,
                config: FitConfig = FitConfig(), cv_config: Optional[FitConfig] = None):
    """Model object for a penalty name (``graph`` needs a graph)."""
    if kind == "graph":
        if graph is None:
            raise ValueError("graph model needs a predictor graph")
        return GraphModel(graph, weights)
    if kind == "adaptive_lasso":
        return PenaltyModel(adaptive_lasso_penalty(data, plan=pilot_plan, config=config,
                                                   cv_config=cv_config))
    return PenaltyModel(make_penalty(kind))
