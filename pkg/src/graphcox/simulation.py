"""Synthetic benchmark data: structured precision matrices, true
coefficients, Gaussian predictors and censored Cox survival times."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import expit

from .graph import (
    Community,
    ErdosRenyi,
    GraphTopologySpec,
    PredictorGraph,
    Ring,
    generate_graph,
    topology_from_dict,
    topology_to_dict,
    validate_topology,
    with_seed,
)
from .survival import SurvivalDataset

EDGE_VALUE = 0.5
PD_FLOOR = 1e-3


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class PrecisionMatrix:
    matrix: np.ndarray
    provenance: GraphTopologySpec
    repaired: bool = False

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


def nearest_pd(A: np.ndarray, floor_ratio: float = PD_FLOOR) -> tuple[np.ndarray, bool]:
    """Symmetrise and floor the spectrum at ``floor_ratio * max eigenvalue``.

    Returns the (possibly unchanged) matrix and whether a repair happened.
    """
    S = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(S)
    floor = floor_ratio * w[-1]
    if w[0] >= floor:
        return S, False
    R = (V * np.maximum(w, floor)) @ V.T
    return 0.5 * (R + R.T), True


def _path_band(p: int) -> np.ndarray:
    B = np.zeros((p, p))
    idx = np.arange(p - 1)
    B[idx, idx + 1] = B[idx + 1, idx] = EDGE_VALUE
    return B


def ring_shift(B: np.ndarray, target_cond: float, rtol: float = 1e-9) -> float:
    """Find ``delta`` with ``cond(B + delta I) = target_cond`` by bisection."""
    mu = np.linalg.eigvalsh(B)
    lo_eig, hi_eig = mu[0], mu[-1]
    if target_cond <= 1.0 or hi_eig <= lo_eig:
        raise SimulationError("condition-number target cannot be met")

    def cond(delta):
        return (hi_eig + delta) / (lo_eig + delta)

    lo = -lo_eig + 1e-300 + abs(lo_eig) * 1e-15
    hi = max(1.0, abs(lo_eig)) - lo_eig
    while cond(hi) > target_cond:
        hi = 2.0 * hi + 1.0
        if hi > 1e300:
            raise SimulationError("bisection bracket failed")
    # cond is decreasing in delta on (-lo_eig, inf)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        c = cond(mid)
        if abs(c / target_cond - 1.0) < rtol:
            return mid
        if c > target_cond:
            lo = mid
        else:
            hi = mid
    raise SimulationError("bisection did not reach the condition-number target")


def build_precision(spec: GraphTopologySpec) -> tuple[PrecisionMatrix, PredictorGraph]:
    """Precision matrix and the predictor graph it was drawn from.

    ER and community graphs put 0.5 on every drawn edge and 1 on the
    diagonal, followed by the eigenvalue-floor repair. The ring uses the path
    band ``B_ij = 0.5`` for ``|i - j| = 1`` shifted so ``cond = p``, while the
    returned graph is the full ring.
    """
    validate_topology(spec)
    p = spec.p
    if isinstance(spec, Ring):
        B = _path_band(p)
        delta = ring_shift(B, float(p))
        omega = B + delta * np.eye(p)
        return PrecisionMatrix(omega, spec, False), generate_graph(spec)
    graph = generate_graph(spec)
    omega = np.eye(p) + EDGE_VALUE * graph.adjacency()
    omega, repaired = nearest_pd(omega)
    return PrecisionMatrix(omega, spec, repaired), graph


@dataclass(frozen=True)
class CoefficientRule:
    kind: str = "top_degree"
    count: int = 4
    value: float = 10.0


def default_rule(spec: GraphTopologySpec) -> CoefficientRule:
    return CoefficientRule("all_ones") if isinstance(spec, Ring) else CoefficientRule()


def true_coefficients(omega, graph: PredictorGraph, rule: CoefficientRule = CoefficientRule()) -> np.ndarray:
    """``beta0 = Omega c`` with ``c`` set by the rule.

    ``top_degree`` puts ``value`` on the ``count`` highest-degree nodes (ties
    to the lowest index); ``all_ones`` uses ``c = 1``.
    """
    Om = omega.matrix if isinstance(omega, PrecisionMatrix) else np.asarray(omega, dtype=float)
    p = Om.shape[0]
    if rule.kind == "all_ones":
        c = np.ones(p)
    elif rule.kind == "top_degree":
        top = np.argsort(-graph.degrees, kind="stable")[: rule.count]
        c = np.zeros(p)
        c[top] = rule.value
    else:
        raise SimulationError(f"unknown coefficient rule {rule.kind!r}")
    return Om @ c


def sample_predictors(n: int, omega, seed) -> np.ndarray:
    """Rows i.i.d. ``N(0, Omega^{-1})`` via ``L' x = z`` with ``Omega = L L'``."""
    Om = omega.matrix if isinstance(omega, PrecisionMatrix) else np.asarray(omega, dtype=float)
    L = cholesky(Om, lower=True)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((Om.shape[0], n))
    return solve_triangular(L.T, z, lower=False).T


def censoring_rate(eta: np.ndarray, target: float) -> float:
    """Exponential censoring rate giving expected censored fraction ``target``.

    With event hazard ``exp(eta_i)`` and censoring rate ``theta`` the
    censoring probability is ``theta / (theta + exp(eta_i))``; the mean over
    observations is matched by bisection on ``log theta``.
    """
    if not 0.0 < target < 1.0:
        raise SimulationError("censor rate must lie in (0, 1)")

    def frac(log_theta):
        return float(np.mean(expit(log_theta - eta)))

    lo, hi = float(eta.min()) - 50.0, float(eta.max()) + 50.0
    while frac(lo) > target:
        lo -= 50.0
    while frac(hi) < target:
        hi += 50.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        f = frac(mid)
        if abs(f - target) < 1e-12:
            break
        if f < target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def _break_ties(y: np.ndarray) -> np.ndarray:
    order = np.argsort(y, kind="stable")
    ys = y[order]
    start = np.searchsorted(ys, ys, side="left")
    rank = np.arange(ys.size) - start
    if not rank.any():
        return y
    out = np.empty_like(y)
    out[order] = ys * (1.0 + 1e-12 * rank)
    return out


def simulate_survival(X: np.ndarray, beta0, target_censor_rate: float, seed,
                      feature_names=()) -> SurvivalDataset:
    """Cox event times with unit exponential baseline and exponential censoring."""
    X = np.asarray(X, dtype=float)
    eta = X @ np.asarray(beta0, dtype=float)
    theta = censoring_rate(eta, target_censor_rate)
    rng = np.random.default_rng(seed)
    # U in [0, 1) so 1 - U never hits zero
    T = -np.log1p(-rng.random(eta.size)) * np.exp(-eta)
    C = rng.exponential(1.0 / theta, size=eta.size)
    y = _break_ties(np.minimum(T, C))
    status = (T <= C).astype(int)
    return SurvivalDataset(y, status, X, tuple(feature_names))


# -- study configuration -----------------------------------------------------------

@dataclass
class StudySpec:
    topology: GraphTopologySpec
    n_train: int = 100
    n_test: int = 400
    censor_rate: float = 0.3
    replications: int = 20
    seed: int = 0
    lambda_grid: Optional[list] = None
    n_lambda: int = 30
    lambda_ratio: float = 1e-3
    n_folds: int = 5
    tau_rule: str = "sqrt_degree"
    coefficient_rule: Optional[CoefficientRule] = None
    criterion: str = "cv_partial_likelihood"
    max_iter: int = 5000
    cv_max_iter: int = 2000
    tol: float = 1e-6

    def __post_init__(self):
        validate_topology(self.topology)
        if self.n_train <= 0 or self.n_test <= 0 or self.replications <= 0:
            raise SimulationError("sizes and replication count must be positive")
        if not 0.0 < self.censor_rate < 1.0:
            raise SimulationError("censor rate must lie in (0, 1)")
        if self.coefficient_rule is None:
            self.coefficient_rule = default_rule(self.topology)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["topology"] = topology_to_dict(self.topology)
        d["coefficient_rule"] = asdict(self.coefficient_rule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> StudySpec:
        d = dict(d)
        d["topology"] = topology_from_dict(d["topology"])
        if d.get("coefficient_rule") is not None:
            d["coefficient_rule"] = CoefficientRule(**d["coefficient_rule"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SimulationError(f"unknown study fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> StudySpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Replication:
    index: int
    seed: int
    omega: PrecisionMatrix
    graph: PredictorGraph
    beta0: np.ndarray
    train: SurvivalDataset
    test: SurvivalDataset


def replication_seed(spec: StudySpec, r: int) -> int:
    return spec.seed + r


def generate_replication(spec: StudySpec, r: int) -> Replication:
    """Data for replication ``r``; each replication draws its own graph."""
    seed = replication_seed(spec, r)
    topo = spec.topology
    if not isinstance(topo, Ring):
        topo = with_seed(topo, topo.seed + r)
    omega, graph = build_precision(topo)
    beta0 = true_coefficients(omega, graph, spec.coefficient_rule)
    s_xtr, s_xte, s_str, s_ste = np.random.SeedSequence(seed).generate_state(4)
    names = tuple(f"x{j}" for j in range(omega.p))
    X_train = sample_predictors(spec.n_train, omega, s_xtr)
    X_test = sample_predictors(spec.n_test, omega, s_xte)
    train = simulate_survival(X_train, beta0, spec.censor_rate, s_str, names)
    test = simulate_survival(X_test, beta0, spec.censor_rate, s_ste, names)
    return Replication(r, seed, omega, graph, beta0, train, test)

