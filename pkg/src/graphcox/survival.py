"""Right-censored survival data and the Cox partial likelihood.

All likelihood quantities are on the per-observation scale: the objective is
``-(1/n) * l(beta)`` where ``l`` is the partial log-likelihood, so penalties of
different kinds can be compared on a common footing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed survival data or inconsistent dimensions."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalDataset:
    """Event/censoring times, event indicators and a covariate matrix.

    Event times (rows with ``status == 1``) must be pairwise distinct.
    Censored times may tie with each other and with event times; a censored
    observation tied with an event stays in that event's risk set.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        status_raw = np.asarray(self.status)
        X = np.array(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n = times.shape[0]
        if status_raw.reshape(-1).shape[0] != n or X.shape[0] != n:
            raise DataError(
                f"row counts disagree: times={n}, status={status_raw.size}, "
                f"covariates={X.shape[0]}"
            )
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            raise DataError("times must be finite and strictly positive")
        status_f = np.asarray(status_raw, dtype=float).reshape(-1)
        if not np.all((status_f == 0) | (status_f == 1)):
            raise DataError("status values must be exactly 0 or 1")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain missing or non-finite values")
        event_times = times[status_f == 1]
        if np.unique(event_times).size != event_times.size:
            raise DataError("tied event times are not supported")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length must equal the column count")

        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "status", _readonly(status_f.astype(np.int64)))
        object.__setattr__(self, "covariates", _readonly(X))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @cached_property
    def risk_order(self) -> RiskSetOrder:
        return RiskSetOrder.from_times(self.times, self.status)

    @cached_property
    def loss(self) -> CoxPartialLikelihood:
        return CoxPartialLikelihood(self)

    def subset(self, index) -> SurvivalDataset:
        index = np.asarray(index)
        return SurvivalDataset(
            self.times[index], self.status[index], self.covariates[index], self.feature_names
        )

    def with_covariates(self, X: np.ndarray, feature_names: Sequence[str] = ()) -> SurvivalDataset:
        return SurvivalDataset(self.times, self.status, X, tuple(feature_names))


@dataclass(frozen=True)
class RiskSetOrder:
    """Descending-time ordering plus the tie bookkeeping for risk sets.

    ``block_end[k]`` is the last sorted position whose time is ``>=`` the time
    at position ``k``; ``block_start[k]`` is the first position sharing that
    time. The risk set of the observation at sorted position ``k`` is
    ``order[:block_end[k] + 1]``.
    """

    order: np.ndarray
    sorted_times: np.ndarray
    sorted_status: np.ndarray
    block_start: np.ndarray
    block_end: np.ndarray

    @classmethod
    def from_times(cls, times: np.ndarray, status: np.ndarray) -> RiskSetOrder:
        # stable sort keeps results independent of how ties are presented
        order = np.argsort(-times, kind="stable")
        t = times[order]
        neg = -t
        block_start = np.searchsorted(neg, neg, side="left")
        block_end = np.searchsorted(neg, neg, side="right") - 1
        return cls(
            _readonly(order),
            _readonly(t),
            _readonly(np.asarray(status)[order]),
            _readonly(block_start),
            _readonly(block_end),
        )

    @property
    def risk_set_sizes(self) -> np.ndarray:
        """Risk-set size ``|{j : y_j >= y_i}|`` for each event, in sorted order."""
        ev = self.sorted_status == 1
        return self.block_end[ev] + 1


class CoxPartialLikelihood:
    """Negative partial log-likelihood ``-(1/n) l(beta)`` on a fixed dataset.

    The rows are presorted once, so each evaluation is a handful of
    vectorised passes. Risk-set sums are accumulated in log space with
    ``logaddexp.accumulate``, which never overflows.
    """

    def __init__(self, data: SurvivalDataset):
        rs = data.risk_order
        self.n = data.n
        self.p = data.p
        self.X = _readonly(np.ascontiguousarray(data.covariates[rs.order]))
        self.status = rs.sorted_status.astype(float)
        self.event = rs.sorted_status == 1
        self.block_start = rs.block_start
        self.block_end = rs.block_end
        self._event_end = rs.block_end[self.event]

    def _check(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if beta.shape[0] != self.p:
            raise DataError(f"beta has length {beta.shape[0]}, expected {self.p}")
        if not np.all(np.isfinite(beta)):
            raise DataError("beta contains non-finite entries")
        return beta

    def _log_risk(self, eta: np.ndarray) -> np.ndarray:
        # log sum_{j: y_j >= y_k} exp(eta_j) for every sorted position k
        return np.logaddexp.accumulate(eta)[self.block_end]

    def value_eta(self, eta: np.ndarray) -> float:
        if self.n == 0 or not self.event.any():
            return 0.0
        ev = self.event
        log_risk = np.logaddexp.accumulate(eta)[self._event_end]
        return -float(np.sum(eta[ev] - log_risk)) / self.n

    def value_and_grad_eta(self, eta: np.ndarray) -> tuple[float, np.ndarray]:
        """Objective and its gradient with respect to the sorted linear predictor."""
        if self.n == 0 or not self.event.any():
            return 0.0, np.zeros_like(eta)
        ev = self.event
        log_risk = np.logaddexp.accumulate(eta)[self._event_end]
        value = -float(np.sum(eta[ev] - log_risk)) / self.n
        # acc[k] = log sum over events i at positions >= k of 1/S_i, so that
        # exp(eta_j + acc[block_start[j]]) = sum_{i: j in R_i} exp(eta_j)/S_i <= #events
        inv = np.full(self.n, -np.inf)
        inv[ev] = -log_risk
        acc = np.logaddexp.accumulate(inv[::-1])[::-1]
        weight = np.exp(eta + acc[self.block_start])
        return value, (weight - self.status) / self.n

    def value(self, beta) -> float:
        beta = self._check(beta)
        return self.value_eta(self.X @ beta)

    def value_and_grad(self, beta) -> tuple[float, np.ndarray]:
        beta = self._check(beta)
        v, g_eta = self.value_and_grad_eta(self.X @ beta)
        return v, self.X.T @ g_eta

    def gradient(self, beta) -> np.ndarray:
        return self.value_and_grad(beta)[1]

    def hessian(self, beta) -> np.ndarray:
        beta = self._check(beta)
        if self.n == 0 or not self.event.any():
            return np.zeros((self.p, self.p))
        X = self.X
        eta = X @ beta
        ev = self.event
        log_risk = np.logaddexp.accumulate(eta)[self._event_end]
        inv = np.full(self.n, -np.inf)
        inv[ev] = -log_risk
        acc = np.logaddexp.accumulate(inv[::-1])[::-1]
        weight = np.exp(eta + acc[self.block_start])

        # risk-set weighted means of x for each event
        shift = eta.max()
        cum = np.cumsum(np.exp(eta - shift)[:, None] * X, axis=0)
        with np.errstate(over="ignore", invalid="ignore"):
            scale = np.exp(shift - log_risk)
            means = cum[self._event_end] * scale[:, None]
        bad = ~np.all(np.isfinite(means), axis=1) | (log_risk - shift < -600.0)
        if bad.any():
            # risk set far below the global maximum; renormalise directly
            for r in np.flatnonzero(bad):
                stop = self._event_end[r] + 1
                w = np.exp(eta[:stop] - log_risk[r])
                means[r] = w @ X[:stop]
        H = (X.T * weight) @ X - means.T @ means
        H = 0.5 * (H + H.T)
        return H / self.n


def negative_partial_log_likelihood(beta, data: SurvivalDataset) -> float:
    """``-(1/n) * sum_{i: d_i=1} [b'x_i - log sum_{j: y_j >= y_i} exp(b'x_j)]``."""
    return data.loss.value(beta)


def partial_gradient(beta, data: SurvivalDataset) -> np.ndarray:
    return data.loss.gradient(beta)


def partial_hessian(beta, data: SurvivalDataset) -> np.ndarray:
    """Hessian of :func:`negative_partial_log_likelihood`; symmetric PSD."""
    return data.loss.hessian(beta)


def read_csv(path: str | Path) -> SurvivalDataset:
    """Read ``time,status,<features...>`` CSV into a dataset."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if len(header) < 2 or header[0].strip() != "time" or header[1].strip() != "status":
        raise DataError("dataset header must start with 'time,status'")
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric value in {path}: {exc}") from exc
    if arr.size == 0:
        arr = arr.reshape(0, len(header))
    if arr.shape[1] != len(header):
        raise DataError("ragged rows in dataset")
    names = tuple(h.strip() for h in header[2:])
    return SurvivalDataset(arr[:, 0], arr[:, 1], arr[:, 2:], names)


def write_csv(data: SurvivalDataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "status", *data.feature_names])
        for t, s, x in zip(data.times, data.status, data.covariates):
            w.writerow([repr(float(t)), int(s), *(repr(float(v)) for v in x)])
