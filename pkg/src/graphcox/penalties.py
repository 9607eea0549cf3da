"""Graph (latent overlapping group) norm, predictor duplication, and the
classical penalties used as baselines.

The graph norm of ``beta`` is the cheapest weighted sum of block norms over
decompositions ``beta = sum_k V_k`` with each ``V_k`` supported on the
neighbourhood of node ``k``. Duplicating each neighbourhood's columns turns
that into an ordinary non-overlapping group lasso on the expanded
coordinates; :class:`DuplicatedDesign` holds the coordinate map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import PredictorGraph


class PenaltyError(ValueError):
    pass


# -- node weights -------------------------------------------------------------

def node_weights(graph: PredictorGraph, rule: str = "sqrt_degree") -> np.ndarray:
    """Default per-node weights: ``sqrt(d_k)`` or all ones."""
    if rule == "sqrt_degree":
        return np.sqrt(graph.degrees.astype(float))
    if rule == "unit":
        return np.ones(graph.p)
    raise PenaltyError(f"unknown weight rule {rule!r}")


def check_weights(weights, p: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != p:
        raise PenaltyError(f"expected {p} node weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise PenaltyError("node weights must be finite and strictly positive")
    return w


def read_weights(path: str | Path, p: int, default: np.ndarray) -> np.ndarray:
    """Read ``k tau_k`` lines; nodes not listed keep their default weight."""
    w = np.array(default, dtype=float, copy=True)
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise PenaltyError(f"{path}:{lineno}: expected 'k tau_k'")
        k = int(parts[0])
        if not 0 <= k < p:
            raise PenaltyError(f"{path}:{lineno}: node {k} out of range")
        w[k] = float(parts[1])
    return check_weights(w, p)


# -- predictor duplication ------------------------------------------------------

@dataclass(frozen=True)
class DuplicatedDesign:
    """Coordinate map of the duplicated (non-overlapping) group design.

    Expanded coordinate ``c`` belongs to group ``group_of[c]`` and copies
    original feature ``feature_index[c]``. Groups are laid out contiguously in
    ``group_order``; within a group features ascend.
    """

    p: int
    group_order: np.ndarray
    feature_index: np.ndarray
    group_of: np.ndarray
    offsets: np.ndarray
    sizes: np.ndarray
    X: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def D(self) -> int:
        return self.feature_index.shape[0]

    @property
    def n_groups(self) -> int:
        return self.sizes.shape[0]

    def expand(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X)[:, self.feature_index]

    def collapse(self, expanded) -> np.ndarray:
        v = np.asarray(expanded, dtype=float).reshape(-1)
        if v.shape[0] != self.D:
            raise PenaltyError(f"expanded vector has length {v.shape[0]}, expected {self.D}")
        return np.bincount(self.feature_index, weights=v, minlength=self.p)

    def gather(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`collapse`: copy feature values into every group."""
        return np.asarray(g)[self.feature_index]

    def collapse_matrix(self) -> np.ndarray:
        C = np.zeros((self.p, self.D))
        C[self.feature_index, np.arange(self.D)] = 1.0
        return C

    def group_norms(self, v: np.ndarray) -> np.ndarray:
        return np.sqrt(np.add.reduceat(v * v, self.offsets))

    def decomposition(self, v: np.ndarray) -> np.ndarray:
        """Latent vectors as rows: ``V[k]`` is node ``k``'s ``p``-vector."""
        V = np.zeros((self.p, self.p))
        V[self.group_of, self.feature_index] = v
        return V

    def from_decomposition(self, V: np.ndarray) -> np.ndarray:
        return np.asarray(V)[self.group_of, self.feature_index]

    def copies(self) -> np.ndarray:
        """How many groups contain each original feature."""
        return np.bincount(self.feature_index, minlength=self.p)


def duplicate_design(
    X: Optional[np.ndarray], graph: PredictorGraph, group_order: Optional[Sequence[int]] = None
) -> DuplicatedDesign:
    """Build the expanded design ``[X_{N_1} X_{N_2} ... X_{N_p}]``."""
    p = graph.p
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != p:
            raise PenaltyError(f"design has {np.shape(X)} columns, graph has p={p}")
    order = np.arange(p) if group_order is None else np.asarray(group_order, dtype=int)
    if sorted(order.tolist()) != list(range(p)):
        raise PenaltyError("group_order must be a permutation of 0..p-1")
    nbrs = graph.neighborhoods
    feats, owners, sizes = [], [], []
    for k in order:
        feats.extend(nbrs[k])
        owners.extend([k] * len(nbrs[k]))
        sizes.append(len(nbrs[k]))
    sizes = np.array(sizes, dtype=int)
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(int)
    fi = np.array(feats, dtype=int)
    design = DuplicatedDesign(p, order, fi, np.array(owners, dtype=int), offsets, sizes)
    if X is not None:
        object.__setattr__(design, "X", X[:, fi])
    for a in (design.group_order, design.feature_index, design.group_of, design.offsets, design.sizes):
        a.setflags(write=False)
    return design


def collapse(expanded, design: DuplicatedDesign) -> np.ndarray:
    return design.collapse(expanded)


# -- proximal maps --------------------------------------------------------------

def soft_threshold(v, threshold):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def group_soft_threshold(v, threshold: float) -> np.ndarray:
    """Prox of ``threshold * ||.||_2``: shrink ``v`` towards 0 by ``threshold``."""
    if threshold < 0:
        raise PenaltyError("threshold must be non-negative")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= threshold:
        return np.zeros_like(v)
    return v * (1.0 - threshold / norm)


def block_soft_threshold(v: np.ndarray, thresholds: np.ndarray, offsets: np.ndarray,
                         sizes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`group_soft_threshold` over contiguous blocks."""
    norms = np.sqrt(np.add.reduceat(v * v, offsets))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > thresholds, 1.0 - thresholds / norms, 0.0)
    return v * np.repeat(scale, sizes)


# -- graph norm -----------------------------------------------------------------

@dataclass
class NormResult:
    value: float
    lower_bound: float
    decomposition: np.ndarray
    iterations: int
    converged: bool


def graph_norm(
    beta,
    graph: PredictorGraph,
    weights=None,
    tol: float = 1e-8,
    max_iter: int = 50_000,
    full_output: bool = False,
):
    """Evaluate ``||beta||_{G,tau}`` by ADMM on the duplicated coordinates.

    Each iterate yields a feasible decomposition (upper bound) and, from the
    scaled dual variable, a feasible point of the dual problem
    ``max a'beta s.t. ||a_{N_k}|| <= tau_k`` (lower bound). Iteration stops
    once the gap is below ``tol * max(1, value)``.
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != graph.p:
        raise PenaltyError(f"beta has length {beta.shape[0]}, graph has p={graph.p}")
    if not np.all(np.isfinite(beta)):
        raise PenaltyError("beta contains non-finite entries")
    if tol <= 0:
        raise PenaltyError("tol must be positive")
    tau = node_weights(graph) if weights is None else check_weights(weights, graph.p)
    design = duplicate_design(None, graph)
    fi, offsets, sizes = design.feature_index, design.offsets, design.sizes
    tau_c = tau[design.group_order]
    copies = design.copies().astype(float)

    def result(value, lower, v, it, ok):
        if not full_output:
            return value
        return NormResult(value, lower, design.decomposition(v), it, ok)

    if not np.any(beta):
        return result(0.0, 0.0, np.zeros(design.D), 0, True)

    def project(w):
        resid = (np.bincount(fi, weights=w, minlength=graph.p) - beta) / copies
        return w - resid[fi]

    def primal(v):
        return float(tau_c @ np.sqrt(np.add.reduceat(v * v, offsets)))

    def dual_lower(y):
        alpha = np.bincount(fi, weights=y, minlength=graph.p) / copies
        a = alpha[fi]
        ratio = np.sqrt(np.add.reduceat(a * a, offsets)) / tau_c
        return float(alpha @ beta) / max(1.0, ratio.max())

    # start from the decomposition that puts each feature in its own group
    z = np.zeros(design.D)
    own = np.flatnonzero(design.group_of == fi)
    z[own] = beta[fi[own]]
    best_v = z.copy()
    best = primal(best_v)
    lower = -np.inf
    rho = float(np.mean(tau)) / max(float(np.sqrt(np.mean(beta * beta))), 1e-300)
    u = np.zeros(design.D)
    it = 0
    for it in range(1, max_iter + 1):
        v = project(z - u)
        z_old = z
        z = block_soft_threshold(v + u, tau_c / rho, offsets, sizes)
        u = u + v - z
        if it % 10 == 0 or it == 1:
            val = primal(v)
            if val < best:
                best, best_v = val, v
            lower = max(lower, dual_lower(rho * u))
            if best - lower <= tol * max(1.0, best):
                return result(best, lower, best_v, it, True)
            # residual balancing
            r = np.linalg.norm(v - z)
            s = rho * np.linalg.norm(z - z_old)
            if it < max_iter // 2:
                if r > 10.0 * s:
                    rho *= 2.0
                    u /= 2.0
                elif s > 10.0 * r:
                    rho /= 2.0
                    u *= 2.0
    return result(best, lower, best_v, it, False)


# -- penalty specifications ------------------------------------------------------

class Penalty:
    """A coefficient penalty ``g(beta)`` scaled by ``lam``.

    Smooth penalties (ridge) contribute a gradient; the rest supply an exact
    proximal map.
    """

    kind = "none"
    smooth = False

    def value(self, beta, lam: float) -> float:
        return 0.0

    def gradient(self, beta, lam: float):
        return 0.0

    def prox(self, v, step: float, lam: float) -> np.ndarray:
        return np.asarray(v, dtype=float)

    def lambda_max(self, grad0: np.ndarray) -> float:
        """Smallest ``lam`` with 0 optimal, given the loss gradient at 0."""
        return float(np.max(np.abs(grad0))) if grad0.size else 0.0

    def describe(self) -> dict:
        return {"kind": self.kind}


class Lasso(Penalty):
    kind = "lasso"

    def value(self, beta, lam):
        return lam * float(np.sum(np.abs(beta)))

    def prox(self, v, step, lam):
        return soft_threshold(v, step * lam)


class AdaptiveLasso(Penalty):
    kind = "adaptive_lasso"

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise PenaltyError("adaptive-lasso weights must be finite and positive")
        self.weights = w

    def value(self, beta, lam):
        return lam * float(self.weights @ np.abs(beta))

    def prox(self, v, step, lam):
        return soft_threshold(v, step * lam * self.weights)

    def lambda_max(self, grad0):
        return float(np.max(np.abs(grad0) / self.weights))

    def describe(self):
        return {"kind": self.kind, "weights": self.weights.tolist()}


class Ridge(Penalty):
    """``(lam/2) ||beta||^2``, handled as part of the smooth objective."""

    kind = "ridge"
    smooth = True
    # the grid for ridge starts this many times above the lasso anchor
    grid_scale = 10.0

    def value(self, beta, lam):
        beta = np.asarray(beta)
        return 0.5 * lam * float(beta @ beta)

    def gradient(self, beta, lam):
        return lam * np.asarray(beta)

    def lambda_max(self, grad0):
        return self.grid_scale * super().lambda_max(grad0)


class ElasticNet(Penalty):
    """``(gamma/2) sum b^2 + lam1 sum |b|`` with ``lam1 = r lam``,
    ``gamma = (1 - r) lam`` for mixing ratio ``r``."""

    kind = "elastic_net"

    def __init__(self, l1_ratio: float = 0.5):
        if not 0.0 < l1_ratio <= 1.0:
            raise PenaltyError("l1_ratio must lie in (0, 1]")
        self.l1_ratio = l1_ratio

    def value(self, beta, lam):
        beta = np.asarray(beta)
        l1, l2 = self.l1_ratio * lam, (1.0 - self.l1_ratio) * lam
        return 0.5 * l2 * float(beta @ beta) + l1 * float(np.sum(np.abs(beta)))

    def prox(self, v, step, lam):
        l1, l2 = self.l1_ratio * lam, (1.0 - self.l1_ratio) * lam
        return soft_threshold(v, step * l1) / (1.0 + step * l2)

    def lambda_max(self, grad0):
        return super().lambda_max(grad0) / self.l1_ratio

    def describe(self):
        return {"kind": self.kind, "l1_ratio": self.l1_ratio}


class SCAD(Penalty):
    kind = "scad"

    def __init__(self, a: float = 3.7):
        if not a > 2:
            raise PenaltyError("SCAD requires a > 2")
        self.a = float(a)

    def value(self, beta, lam):
        return float(np.sum(scad_penalty(beta, lam, self.a)))

    def prox(self, v, step, lam):
        return scad_prox(v, step, lam, self.a)

    def describe(self):
        return {"kind": self.kind, "a": self.a}


class GroupLasso(Penalty):
    """``lam * sum_g w_g ||beta_g||`` over disjoint groups covering every feature."""

    kind = "group_lasso"

    def __init__(self, groups: Sequence[Sequence[int]], weights=None):
        perm = np.concatenate([np.asarray(g, dtype=int) for g in groups])
        self.p = perm.size
        if sorted(perm.tolist()) != list(range(self.p)):
            raise PenaltyError("groups must partition 0..p-1")
        self.perm = perm
        self.sizes = np.array([len(g) for g in groups], dtype=int)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(int)
        w = np.ones(len(groups)) if weights is None else np.asarray(weights, dtype=float)
        if w.shape[0] != len(groups) or np.any(w <= 0):
            raise PenaltyError("one positive weight per group required")
        self.weights = w

    def value(self, beta, lam):
        b = np.asarray(beta)[self.perm]
        return lam * float(self.weights @ np.sqrt(np.add.reduceat(b * b, self.offsets)))

    def prox(self, v, step, lam):
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        out[self.perm] = block_soft_threshold(
            v[self.perm], step * lam * self.weights, self.offsets, self.sizes
        )
        return out

    def lambda_max(self, grad0):
        g = grad0[self.perm]
        return float(np.max(np.sqrt(np.add.reduceat(g * g, self.offsets)) / self.weights))

    def describe(self):
        return {"kind": self.kind, "groups": [self.perm[o:o + s].tolist()
                                               for o, s in zip(self.offsets, self.sizes)],
                "weights": self.weights.tolist()}


def scad_penalty(beta, lam: float, a: float = 3.7) -> np.ndarray:
    t = np.abs(np.asarray(beta, dtype=float))
    return np.where(
        t <= lam,
        lam * t,
        np.where(t <= a * lam, (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1)),
                 0.5 * (a + 1) * lam * lam),
    )


def scad_prox(v, step: float, lam: float, a: float = 3.7) -> np.ndarray:
    """Exact minimiser of ``0.5 (x - v)^2 + step * SCAD_lam(x)``, coordinatewise.

    The three pieces are minimised separately and the best candidate kept,
    so the map is exact even when ``step >= a - 1`` makes the middle piece
    concave.
    """
    v = np.asarray(v, dtype=float)
    u = np.abs(v)
    if lam == 0:
        return v.copy()
    c1 = np.clip(u - step * lam, 0.0, lam)
    denom = a - 1.0 - step
    if denom > 0:
        c2 = np.clip(((a - 1.0) * u - step * a * lam) / denom, lam, a * lam)
    else:
        c2 = np.full_like(u, lam)
    c3 = np.maximum(u, a * lam)
    # each candidate lies in its own piece, so its penalty has a closed form;
    # the breakpoint a*lam is covered by c3
    o1 = 0.5 * (c1 - u) ** 2 + step * lam * c1
    o2 = 0.5 * (c2 - u) ** 2 + step * (2 * a * lam * c2 - c2 * c2 - lam * lam) / (2 * (a - 1))
    o3 = 0.5 * (c3 - u) ** 2 + step * 0.5 * (a + 1) * lam * lam
    best = np.where((o1 <= o2) & (o1 <= o3), c1, np.where(o2 <= o3, c2, c3))
    return np.sign(v) * best


def penalty_prox(penalty: Penalty, v, step: float, lam: float) -> np.ndarray:
    if step <= 0:
        raise PenaltyError("step must be positive")
    if lam < 0:
        raise PenaltyError("lambda must be non-negative")
    return penalty.prox(v, step, lam)


PENALTY_KINDS = ("lasso", "ridge", "elastic_net", "scad", "adaptive_lasso", "group_lasso")


def make_penalty(kind: str, **kwargs) -> Penalty:
    if kind == "lasso":
        return Lasso()
    if kind == "ridge":
        return Ridge()
    if kind == "elastic_net":
        return ElasticNet(kwargs.get("l1_ratio", 0.5))
    if kind == "scad":
        return SCAD(kwargs.get("a", 3.7))
    if kind == "adaptive_lasso":
        return AdaptiveLasso(kwargs["weights"])
    if kind == "group_lasso":
        return GroupLasso(kwargs["groups"], kwargs.get("weights"))
    raise PenaltyError(f"unknown penalty {kind!r}")
