"""Rewards, net utilities, rate fits and incentive diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .strategy import TRUTHFUL, Action


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RewardFunction:
    """``linear``: ``R(f) = -f``.  ``sigmoid_like``: ``R(f) = 1 / (1 + exp(-1/f))`` for ``f > 0``.

    The sigmoid-like form is implemented as written; note that it increases
    with ``f``.
    """

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "sigmoid_like"):
            raise MetricsError(f"unknown reward kind {self.kind!r}")

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        if self.kind == "linear":
            out = -f
        else:
            if np.any(f <= 0):
                raise MetricsError("sigmoid-like reward needs f > 0")
            out = 1.0 / (1.0 + np.exp(-1.0 / f))
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        """Global Lipschitz constant ``L_R`` on the reward's domain."""
        if self.kind == "linear":
            return 1.0
        # dR/df = s(u)(1 - s(u)) u^2 with u = 1/f and s the logistic function
        res = minimize_scalar(lambda u: -u * u * math.exp(-u) / (1.0 + math.exp(-u)) ** 2,
                              bounds=(1e-6, 50.0), method="bounded", options={"xatol": 1e-12})
        return float(-res.fun)


def net_utility(reward: RewardFunction, f_final: float, payments: Sequence[float]) -> float:
    """``R(f_final) - sum(payments)``, the payment sum correctly rounded."""
    return reward(f_final) - math.fsum(payments)


def convergence_slope(t: Sequence[float], values: Sequence[float], window: tuple) -> float:
    """Least-squares slope of ``log value`` against ``log(t+1)`` on ``t_lo <= t <= t_hi``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    if not lo > 0 or hi / lo < 10:
        raise MetricsError("window must satisfy t_hi / t_lo >= 10 with t_lo > 0")
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 2:
        raise MetricsError("fewer than two points in the window")
    if np.any(values[sel] <= 0):
        raise MetricsError("values must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(t[sel] + 1.0), np.log(values[sel]), 1)
    return float(slope)


def ic_gap(scenario, deviator: int, deviation: Action, seeds: Sequence[int]) -> float:
    """Mean over paired seeds of ``U(deviation) - U(truthful)`` for ``deviator``."""
    util = np.asarray(scenario.net_utilities(deviator, [deviation, TRUTHFUL], list(seeds)))
    return float(np.mean(util[0] - util[1]))


def cumulative_gain_curve(scenario, deviator: int, deviation: Action, horizons: Sequence[int],
                          seeds: Sequence[int]) -> list[tuple[int, float]]:
    """``ic_gap`` at each horizon, all horizons read off one run of the longest."""
    horizons = [int(h) for h in horizons]
    if not horizons or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise MetricsError("horizons must be nonempty and strictly increasing")
    util = np.asarray(scenario.net_utilities(deviator, [deviation, TRUTHFUL], list(seeds), horizons=horizons))
    return [(h, float(np.mean(util[k, 0] - util[k, 1]))) for k, h in enumerate(horizons)]


def truthfulness_trace(reports: np.ndarray, grads: np.ndarray, deviator: int) -> np.ndarray:
    """``||m_{i,t} - g_{i,t}||`` per round from ``(T+1, N, dim)`` histories."""
    d = np.asarray(reports)[:, deviator] - np.asarray(grads)[:, deviator]
    return np.sqrt((d * d).sum(axis=-1))


def consensus_error(theta: np.ndarray) -> np.ndarray:
    """``||theta - 1 (x) mean(theta)||^2`` over the agent axis (second to last)."""
    d = theta - theta.mean(axis=-2, keepdims=True)
    return (d * d).sum(axis=(-1, -2))


@dataclass
class RunMetrics:
    """Per-round series and terminal values of one run.

    Row ``t`` of a series describes the state after round ``t``
    (``theta_{t+1}``) together with that round's payments.
    """

    seed: int
    distance: np.ndarray     # (T+1, N)
    gap: np.ndarray          # (T+1, N)
    consensus: np.ndarray    # (T+1,)
    payments: np.ndarray     # (T+1, N)
    f_final: np.ndarray      # (N,)
    reward: RewardFunction = field(default_factory=RewardFunction)
    payment_totals: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.payment_totals is None:
            self.payment_totals = np.array([math.fsum(self.payments[:, i].tolist())
                                            for i in range(self.payments.shape[1])])

    @property
    def rewards(self) -> np.ndarray:
        return np.array([self.reward(f) for f in self.f_final])

    @property
    def utilities(self) -> np.ndarray:
        return self.rewards - self.payment_totals


METRIC_COLUMNS = ["seed", "t", "agent", "distance", "objective_gap", "consensus_error", "payment"]
SUMMARY_COLUMNS = ["seed", "agent", "f_final", "reward", "total_payment", "net_utility"]


def write_metrics_csv(path, runs: Sequence[RunMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in runs:
            T1, n = m.distance.shape
            for i in range(n):
                for t in range(T1):
                    w.writerow([m.seed, t, i, repr(float(m.distance[t, i])), repr(float(m.gap[t, i])),
                                repr(float(m.consensus[t])), repr(float(m.payments[t, i]))])


def write_summary_csv(path, runs: Sequence[RunMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for m in runs:
            rew, util = m.rewards, m.utilities
            for i in range(len(m.f_final)):
                w.writerow([m.seed, i, repr(float(m.f_final[i])), repr(float(rew[i])),
                            repr(float(m.payment_totals[i])), repr(float(util[i]))])
