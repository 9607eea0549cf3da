"""Undirected predictor graphs, their generators, and estimation from data."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from scipy import stats

from .survival import DataError


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorGraph:
    """Undirected graph on ``p`` predictors.

    Edges are stored once as sorted pairs ``(i, j)`` with ``i < j``.
    Neighbourhoods include the node itself.
    """

    p: int
    edges: frozenset

    def __post_init__(self):
        if self.p <= 0:
            raise GraphError("graph needs at least one node")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.p and 0 <= j < self.p):
                raise GraphError(f"edge ({i}, {j}) out of range for p={self.p}")
            if i != j:
                clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @classmethod
    def from_edges(cls, p: int, edges: Iterable) -> PredictorGraph:
        return cls(p, frozenset(tuple(e) for e in edges))

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> PredictorGraph:
        A = np.asarray(adjacency) != 0
        i, j = np.nonzero(np.triu(A | A.T, k=1))
        return cls(A.shape[0], frozenset(zip(i.tolist(), j.tolist())))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    @property
    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    @property
    def neighborhoods(self) -> tuple[tuple[int, ...], ...]:
        nbrs = [{k} for k in range(self.p)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return tuple(tuple(sorted(s)) for s in nbrs)

    @property
    def degrees(self) -> np.ndarray:
        """Neighbourhood sizes ``d_k = |N_k|`` (self included)."""
        d = np.ones(self.p, dtype=int)
        for i, j in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    def merge(self, other: Union[PredictorGraph, Iterable]) -> PredictorGraph:
        extra = other.edges if isinstance(other, PredictorGraph) else other
        return PredictorGraph.from_edges(self.p, set(self.edges) | {tuple(e) for e in extra})


@dataclass(frozen=True)
class ErdosRenyi:
    p: int
    p0: float
    seed: int = 0
    kind = "erdos_renyi"


@dataclass(frozen=True)
class Ring:
    p: int
    kind = "ring"


@dataclass(frozen=True)
class Community:
    p: int
    community_sizes: tuple[int, ...]
    p_in: float
    p_out: float
    seed: int = 0
    kind = "community"


GraphTopologySpec = Union[ErdosRenyi, Ring, Community]


def topology_from_dict(d: dict) -> GraphTopologySpec:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "erdos_renyi":
        spec = ErdosRenyi(int(d["p"]), float(d["p0"]), int(d.get("seed", 0)))
    elif kind == "ring":
        spec = Ring(int(d["p"]))
    elif kind == "community":
        spec = Community(
            int(d["p"]), tuple(int(s) for s in d["community_sizes"]),
            float(d["p_in"]), float(d["p_out"]), int(d.get("seed", 0)),
        )
    else:
        raise GraphError(f"unknown topology kind {kind!r}")
    validate_topology(spec)
    return spec


def topology_to_dict(spec: GraphTopologySpec) -> dict:
    out = {"kind": spec.kind}
    for name in spec.__dataclass_fields__:
        val = getattr(spec, name)
        out[name] = list(val) if isinstance(val, tuple) else val
    return out


def with_seed(spec: GraphTopologySpec, seed: int) -> GraphTopologySpec:
    if isinstance(spec, Ring):
        return spec
    return type(spec)(**{**{k: getattr(spec, k) for k in spec.__dataclass_fields__}, "seed": seed})


def validate_topology(spec: GraphTopologySpec) -> None:
    if spec.p <= 0:
        raise GraphError("p must be positive")
    if isinstance(spec, ErdosRenyi) and not 0.0 <= spec.p0 <= 1.0:
        raise GraphError("p0 must lie in [0, 1]")
    if isinstance(spec, Ring) and spec.p < 3:
        raise GraphError("a ring needs p >= 3")
    if isinstance(spec, Community):
        if not (0.0 <= spec.p_in <= 1.0 and 0.0 <= spec.p_out <= 1.0):
            raise GraphError("community probabilities must lie in [0, 1]")
        if any(s < 0 for s in spec.community_sizes) or sum(spec.community_sizes) > spec.p:
            raise GraphError("community sizes must be non-negative and sum to at most p")


def _upper_pairs(p: int):
    return np.triu_indices(p, k=1)


def generate_graph(spec: GraphTopologySpec) -> PredictorGraph:
    """Draw a graph from a topology spec; deterministic given the seed."""
    validate_topology(spec)
    p = spec.p
    if isinstance(spec, Ring):
        return PredictorGraph.from_edges(p, [(k, (k + 1) % p) for k in range(p)])
    rng = np.random.default_rng(spec.seed)
    iu, ju = _upper_pairs(p)
    if isinstance(spec, ErdosRenyi):
        prob = np.full(iu.size, spec.p0)
    else:
        label = np.full(p, -1)
        start = 0
        for c, size in enumerate(spec.community_sizes):
            label[start:start + size] = c
            start += size
        same = (label[iu] == label[ju]) & (label[iu] >= 0)
        prob = np.where(same, spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < prob
    return PredictorGraph.from_edges(p, zip(iu[keep].tolist(), ju[keep].tolist()))


def partial_correlations(covariates: np.ndarray, ridge: float = 1e-4) -> np.ndarray:
    """Partial correlation matrix from the ridge-stabilised sample precision.

    Columns are standardised first, so the estimate (ridge included) is
    invariant to rescaling any column.
    """
    X = np.asarray(covariates, dtype=float)
    sd = X.std(axis=0, ddof=1)
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        raise DataError("constant or non-finite column in covariates")
    R = np.corrcoef(X, rowvar=False)
    R = np.atleast_2d(R)
    p = R.shape[0]
    gamma = ridge * np.trace(R) / p
    try:
        omega = np.linalg.inv(R + gamma * np.eye(p))
    except np.linalg.LinAlgError as exc:
        raise DataError("covariance is singular after stabilisation") from exc
    if not np.all(np.isfinite(omega)):
        raise DataError("covariance is singular after stabilisation")
    d = np.sqrt(np.diag(omega))
    pc = -omega / np.outer(d, d)
    np.fill_diagonal(pc, 1.0)
    return pc


def graph_from_data(covariates: np.ndarray, alpha: float = 0.05) -> PredictorGraph:
    """Connect predictors whose partial correlation is significant at ``alpha``.

    Two-sided t-test with ``n - p`` degrees of freedom on each entry of the
    partial correlation matrix.
    """
    X = np.asarray(covariates, dtype=float)
    n, p = X.shape
    if n <= p + 2:
        raise DataError(f"need n > p + 2 observations, got n={n}, p={p}")
    pc = partial_correlations(X)
    df = n - p
    iu, ju = _upper_pairs(p)
    r = np.clip(pc[iu, ju], -1 + 1e-15, 1 - 1e-15)
    t = r * np.sqrt(df / (1.0 - r * r))
    pval = 2.0 * stats.t.sf(np.abs(t), df)
    keep = pval < alpha
    return PredictorGraph.from_edges(p, zip(iu[keep].tolist(), ju[keep].tolist()))


def read_edge_list(path: str | Path, p: int) -> PredictorGraph:
    """Read ``i j`` pairs (0-based, ``#`` comments); self-loops are dropped."""
    edges = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'i j'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise GraphError(f"{path}:{lineno}: non-integer node index") from exc
        if i != j:
            edges.append((i, j))
    return PredictorGraph.from_edges(p, edges)


def write_edge_list(graph: PredictorGraph, path: str | Path) -> None:
    lines = [f"# p={graph.p} edges={len(graph.edges)}"]
    lines += [f"{i} {j}" for i, j in graph.sorted_edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
