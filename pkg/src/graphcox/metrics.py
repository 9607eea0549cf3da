"""Evaluation measures: Harrell's c-index, coefficient error, RPE, and
mean(sd) aggregation across replications."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def _check_lengths(*arrays):
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise MetricError("scores, times and status must have equal length")


def c_index(scores, times, status) -> float:
    """Harrell's concordance index in O(n log n).

    A pair is comparable when ``times[i] < times[j]`` and ``status[i] == 1``;
    it is concordant when ``scores[i] > scores[j]`` (higher score means
    higher risk) and tied scores count one half.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    t = np.asarray(times, dtype=float).reshape(-1)
    e = np.asarray(status).reshape(-1)
    _check_lengths(s, t, e)
    n = s.size
    ranks = np.unique(s, return_inverse=True)[1].reshape(-1) + 1
    m = int(ranks.max()) if n else 0
    tree = [0] * (m + 1)

    def add(i):
        while i <= m:
            tree[i] += 1
            i += i & -i

    def prefix(i):
        total = 0
        while i > 0:
            total += tree[i]
            i -= i & -i
        return total

    order = np.argsort(-t, kind="stable")
    conc = ties = pairs = 0
    inserted = 0
    k = 0
    while k < n:
        block_end = k
        while block_end + 1 < n and t[order[block_end + 1]] == t[order[k]]:
            block_end += 1
        block = order[k:block_end + 1]
        # tree holds every observation with a strictly later time
        for i in block:
            if e[i] == 1:
                r = int(ranks[i])
                below = prefix(r - 1)
                equal = prefix(r) - below
                conc += below
                ties += equal
                pairs += inserted
        for i in block:
            add(int(ranks[i]))
        inserted += block.size
        k = block_end + 1
    if pairs == 0:
        raise MetricError("no comparable pairs")
    return (conc + 0.5 * ties) / pairs


def c_index_pairwise(scores, times, status) -> float:
    """Quadratic reference implementation of :func:`c_index`."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    t = np.asarray(times, dtype=float).reshape(-1)
    e = np.asarray(status).reshape(-1)
    _check_lengths(s, t, e)
    comparable = (t[:, None] < t[None, :]) & (e[:, None] == 1)
    pairs = int(comparable.sum())
    if pairs == 0:
        raise MetricError("no comparable pairs")
    credit = np.where(s[:, None] > s[None, :], 1.0, np.where(s[:, None] == s[None, :], 0.5, 0.0))
    return float(credit[comparable].sum()) / pairs


def prediction_errors(beta_hat, beta0, X_test) -> tuple[float, float]:
    """Return ``(||b - b0||_2, (1/m) (b - b0)' X'X (b - b0))``."""
    b = np.asarray(beta_hat, dtype=float).reshape(-1)
    b0 = np.asarray(beta0, dtype=float).reshape(-1)
    X = np.asarray(X_test, dtype=float)
    if b.shape != b0.shape or X.ndim != 2 or X.shape[1] != b.size:
        raise MetricError("dimension mismatch between coefficients and test design")
    diff = b - b0
    proj = X @ diff
    return float(np.linalg.norm(diff)), float(proj @ proj) / X.shape[0]


def mean_sd(values) -> tuple[float, float]:
    """Two-pass mean and sample (n-1) standard deviation; sd is 0 for one value."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    mean = float(v.sum() / v.size)
    if v.size == 1:
        return mean, 0.0
    return mean, math.sqrt(float(((v - mean) ** 2).sum()) / (v.size - 1))


class RunningStats:
    """Welford accumulator; agrees with :func:`mean_sd`."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    @property
    def sd(self) -> float:
        return math.sqrt(self._m2 / (self.count - 1)) if self.count > 1 else 0.0


@dataclass
class MetricRow:
    model: str
    replication: int
    l2_error: float
    rpe: float
    c_index: float
    converged: bool = True
    lam: float = math.nan


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, row: MetricRow) -> None:
        if not 0.0 <= row.c_index <= 1.0 or row.rpe < 0 or row.l2_error < 0:
            raise MetricError(f"metric out of range in {row}")
        self.rows.append(row)

    def models(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    def aggregate(self) -> list[dict]:
        out = []
        for model in self.models():
            rows = sorted((r for r in self.rows if r.model == model), key=lambda r: r.replication)
            l2m, l2s = mean_sd([r.l2_error for r in rows])
            rpm, rps = mean_sd([r.rpe for r in rows])
            cm, cs = mean_sd([r.c_index for r in rows])
            out.append({
                "model": model, "l2_mean": l2m, "l2_sd": l2s, "rpe_mean": rpm, "rpe_sd": rps,
                "cindex_mean": cm, "cindex_sd": cs, "replications": len(rows),
                "n_unconverged": sum(not r.converged for r in rows),
            })
        return out
