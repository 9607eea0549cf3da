"""Fitting regularised Cox models.

Graph-penalised fits run accelerated proximal gradient on the duplicated
(group-lasso) coordinates; classical penalties reuse the same loop with their
own proximal maps; the unpenalised MLE uses damped Newton-Raphson.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .graph import PredictorGraph
from .penalties import (
    DuplicatedDesign,
    Penalty,
    block_soft_threshold,
    check_weights,
    duplicate_design,
    make_penalty,
    node_weights,
)
from .survival import DataError, SurvivalDataset

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e3


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class FitConfig:
    lam: float = 0.0
    weights: Optional[np.ndarray] = None
    max_iter: int = 5000
    tol: float = 1e-7
    shrink: float = 0.5
    step: float = 1.0
    accelerate: bool = True

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError("lambda must be finite and non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not self.step > 0:
            raise ValueError("initial step must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def replace(self, **changes) -> FitConfig:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return FitConfig(**d)


@dataclass
class FitResult:
    beta: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    lambda_used: float
    penalty: str
    decomposition: Optional[np.ndarray] = None
    expanded: Optional[np.ndarray] = field(default=None, repr=False)
    diverged: bool = False
    step: float = 1.0

    @property
    def beta_hat(self) -> np.ndarray:
        return self.beta

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self) -> dict:
        out = {
            "beta": [float(b) for b in self.beta],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "objective": [float(v) for v in self.objective_trace],
            "lambda": float(self.lambda_used),
            "penalty": self.penalty,
        }
        if self.diverged:
            out["diverged"] = True
        if self.decomposition is not None:
            out["decomposition"] = self.decomposition.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> FitResult:
        dec = d.get("decomposition")
        return cls(
            beta=np.array(d["beta"], dtype=float),
            objective_trace=list(d.get("objective", [])),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", False)),
            lambda_used=float(d.get("lambda", 0.0)),
            penalty=str(d.get("penalty", "unknown")),
            decomposition=None if dec is None else np.array(dec, dtype=float),
            diverged=bool(d.get("diverged", False)),
        )


def proximal_gradient(
    value_and_grad: Callable[[np.ndarray], tuple],
    value: Callable[[np.ndarray], float],
    prox: Callable[[np.ndarray, float], np.ndarray],
    penalty_value: Callable[[np.ndarray], float],
    x0: np.ndarray,
    config: FitConfig,
):
    """Minimise ``f(x) + h(x)`` by (accelerated) proximal gradient.

    ``prox(w, t)`` must return ``argmin_x h(x) + ||x - w||^2 / (2t)``.
    Step sizes come from backtracking on the smooth part. With acceleration
    on, an iterate that would raise the objective triggers a momentum restart
    and is replaced by a plain proximal step, so the recorded trace never
    increases.

    Returns ``(x, trace, iterations, converged, step)``.
    """
    x = np.array(x0, dtype=float)
    Fx = value(x) + penalty_value(x)
    trace = [Fx]
    t = config.step
    y = x
    extrapolated = False
    theta = 1.0
    converged = False
    it = 0
    while it < config.max_iter:
        it += 1
        fy, gy = value_and_grad(y)
        while True:
            x_new = prox(y - t * gy, t)
            d = x_new - y
            f_new = value(x_new)
            dd = float(d @ d)
            if f_new <= fy + float(gy @ d) + dd / (2.0 * t) + 1e-15 * abs(fy):
                break
            t *= config.shrink
            if t < 1e-20:
                raise FloatingPointError("backtracking failed to find a descent step")
        F_new = f_new + penalty_value(x_new)
        if extrapolated and F_new > Fx:
            # restart from x with no momentum
            theta = 1.0
            y = x
            extrapolated = False
            continue
        grad_map = np.sqrt(dd) / t
        rel = abs(Fx - F_new) / max(1.0, abs(Fx))
        trace.append(F_new)
        y = x_new
        extrapolated = False
        if config.accelerate:
            theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
            coef = (theta - 1.0) / theta_new
            if coef > 0:
                y = x_new + coef * (x_new - x)
                extrapolated = True
            theta = theta_new
        x, Fx = x_new, F_new
        if rel < config.tol and grad_map < config.tol:
            converged = True
            break
    return x, trace, it, converged, t


# -- graph-penalised Cox ----------------------------------------------------------

def _resolve_weights(graph: PredictorGraph, weights) -> np.ndarray:
    return node_weights(graph) if weights is None else check_weights(weights, graph.p)


def lambda_max(data: SurvivalDataset, graph: PredictorGraph, weights=None) -> float:
    """Smallest ``lam`` at which the all-zero latent vector is optimal."""
    if graph.p != data.p:
        raise DataError("graph and data dimensions differ")
    tau = _resolve_weights(graph, weights)
    g0 = data.loss.gradient(np.zeros(data.p))
    if not np.any(g0):
        return 0.0
    norms = np.array([np.linalg.norm(g0[list(nb)]) for nb in graph.neighborhoods])
    return float(np.max(norms / tau))


def fit_graph_cox(
    data: SurvivalDataset,
    graph: PredictorGraph,
    config: FitConfig,
    design: Optional[DuplicatedDesign] = None,
    init: Optional[np.ndarray] = None,
) -> FitResult:
    """Graph-regularised Cox fit via predictor duplication.

    ``init`` is a warm start on the expanded coordinates (length ``D``).
    """
    if graph.p != data.p:
        raise DataError(f"graph has p={graph.p}, data has p={data.p}")
    tau = _resolve_weights(graph, config.weights)
    if design is None:
        design = duplicate_design(None, graph)
    loss = data.loss
    X = loss.X
    fi = design.feature_index
    p = data.p
    offsets, sizes = design.offsets, design.sizes
    tau_c = tau[design.group_order]
    lam = config.lam

    def vg(v):
        beta = np.bincount(fi, weights=v, minlength=p)
        f, g_eta = loss.value_and_grad_eta(X @ beta)
        return f, (X.T @ g_eta)[fi]

    def val(v):
        return loss.value_eta(X @ np.bincount(fi, weights=v, minlength=p))

    def prox(w, t):
        return block_soft_threshold(w, t * lam * tau_c, offsets, sizes)

    def pen(v):
        return lam * float(tau_c @ np.sqrt(np.add.reduceat(v * v, offsets)))

    v0 = np.zeros(design.D) if init is None else np.asarray(init, dtype=float)
    if v0.shape[0] != design.D:
        raise DataError("warm start has the wrong length")
    if lam > 0 and lam >= lambda_max(data, graph, tau):
        # zero satisfies the optimality conditions; skip iterating so that
        # rounding in the prox step cannot leave ~1e-17 residues
        v = np.zeros(design.D)
        return FitResult(
            beta=np.zeros(p), objective_trace=[val(v)], iterations=0, converged=True,
            lambda_used=lam, penalty="graph", decomposition=design.decomposition(v), expanded=v,
        )
    v, trace, it, ok, step = proximal_gradient(vg, val, prox, pen, v0, config)
    beta = design.collapse(v)
    return FitResult(
        beta=beta, objective_trace=trace, iterations=it, converged=ok, lambda_used=lam,
        penalty="graph", decomposition=design.decomposition(v), expanded=v, step=step,
    )


# -- classical penalties ------------------------------------------------------------

def fit_penalized_cox(
    data: SurvivalDataset,
    penalty: Union[Penalty, str],
    config: FitConfig,
    init: Optional[np.ndarray] = None,
) -> FitResult:
    """Proximal-gradient fit with a classical penalty.

    ``penalty`` may be a :class:`Penalty` or one of the names ``lasso``,
    ``ridge``, ``elastic_net``, ``scad``, ``adaptive_lasso``; the adaptive
    lasso's weights then come from a cross-validated ridge pilot fit.
    """
    if isinstance(penalty, str):
        if penalty == "adaptive_lasso":
            from .model_selection import adaptive_lasso_penalty

            penalty = adaptive_lasso_penalty(data)
        else:
            penalty = make_penalty(penalty)
    loss = data.loss
    X = loss.X
    lam = config.lam

    if penalty.smooth:
        def vg(b):
            f, g_eta = loss.value_and_grad_eta(X @ b)
            return f + penalty.value(b, lam), X.T @ g_eta + penalty.gradient(b, lam)

        def val(b):
            return loss.value_eta(X @ b) + penalty.value(b, lam)

        def prox(w, t):
            return w

        def pen(b):
            return 0.0
    else:
        def vg(b):
            f, g_eta = loss.value_and_grad_eta(X @ b)
            return f, X.T @ g_eta

        def val(b):
            return loss.value_eta(X @ b)

        def prox(w, t):
            return penalty.prox(w, t, lam)

        def pen(b):
            return penalty.value(b, lam)

    b0 = np.zeros(data.p) if init is None else np.asarray(init, dtype=float)
    if b0.shape[0] != data.p:
        raise DataError("warm start has the wrong length")
    beta, trace, it, ok, step = proximal_gradient(vg, val, prox, pen, b0, config)
    return FitResult(
        beta=beta, objective_trace=trace, iterations=it, converged=ok, lambda_used=lam,
        penalty=penalty.kind, step=step,
    )


def penalized_lambda_max(data: SurvivalDataset, penalty: Penalty) -> float:
    return penalty.lambda_max(data.loss.gradient(np.zeros(data.p)))


# -- unpenalised MLE -------------------------------------------------------------------

def fit_cox_newton(
    data: SurvivalDataset,
    config: Optional[FitConfig] = None,
    max_iter: int = 200,
    grad_tol: float = 1e-9,
) -> FitResult:
    """Maximum partial-likelihood estimate by damped Newton-Raphson.

    Each Newton direction is halved until the objective decreases; a step
    that succeeds at full length is also tried at double length, so runaway
    estimates under (quasi-)separation reach the divergence bound quickly.
    Coefficients beyond ``DIVERGENCE_BOUND`` stop the fit with
    ``converged=False, diverged=True`` and are clipped to the bound.
    """
    loss = data.loss
    p = data.p
    beta = np.zeros(p)
    f, g = loss.value_and_grad(beta)
    trace = [f]
    converged = diverged = False
    jitter_warned = False
    it = 0
    for it in range(1, max_iter + 1):
        H = loss.hessian(beta)
        try:
            d = -np.linalg.solve(H, g)
            if not np.all(np.isfinite(d)) or np.linalg.cond(H) > 1e12:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            if not jitter_warned:
                warnings.warn("singular Hessian; using a ridge-jittered Newton step",
                              ConvergenceWarning, stacklevel=2)
                jitter_warned = True
            d = -np.linalg.solve(H + 1e-8 * np.eye(p), g)
        decrement = float(-g @ d)
        if decrement < 1e-20 and np.max(np.abs(g)) < grad_tol:
            converged = True
            break
        step = 1.0
        f_new = loss.value(beta + d)
        while not f_new < f and step > 1e-10:
            step *= 0.5
            f_new = loss.value(beta + step * d)
        if not f_new < f:
            # no further decrease possible in floating point
            converged = np.max(np.abs(g)) < 1e-6
            break
        if step == 1.0:
            while True:
                f_try = loss.value(beta + 2.0 * step * d)
                if f_try < f_new and np.max(np.abs(beta + 2.0 * step * d)) <= 2 * DIVERGENCE_BOUND:
                    step, f_new = 2.0 * step, f_try
                else:
                    break
        beta = beta + step * d
        f, g = loss.value_and_grad(beta)
        trace.append(f)
        if np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            diverged = True
            break
        if np.max(np.abs(g)) < grad_tol and decrement < 1e-12:
            converged = True
            break
    if converged and np.any(beta):
        # Under complete separation the loss can flatten to its infimum in
        # floating point while the gradient underflows. A finite maximiser
        # makes the loss grow along the ray through it; a recession
        # direction does not.
        far = beta * (2.0 * DIVERGENCE_BOUND / np.max(np.abs(beta)))
        if np.max(np.abs(beta)) < DIVERGENCE_BOUND and loss.value(far) <= f:
            beta, diverged, converged = far, True, False
    if diverged:
        beta = np.clip(beta, -DIVERGENCE_BOUND, DIVERGENCE_BOUND)
    return FitResult(
        beta=beta, objective_trace=trace, iterations=it, converged=converged and not diverged,
        lambda_used=0.0, penalty="cox_unregularized", diverged=diverged,
    )
