"""Pairwise second-difference payments and the antisymmetric ledger.

Neighbours ``i`` and ``j`` compare the squared second differences
``Delta = ||theta_{t+1} - 2 theta_t + theta_{t-1}||^2`` of their parameter
windows.  Agent ``i`` pays ``C_t (Delta_i - Delta_j)`` to ``j``; a negative
amount means ``i`` receives.  Each edge transfer is computed once and the
counterparty's entry is its negation, so transfers cancel exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import ScheduleParams, kappa, stepsize
from .topology import Graph

log = logging.getLogger(__name__)


class MechanismError(ValueError):
    pass


def second_difference(theta_next, theta_curr, theta_prev) -> float:
    a, b, c = (np.asarray(x, dtype=float) for x in (theta_next, theta_curr, theta_prev))
    if not a.shape == b.shape == c.shape:
        raise MechanismError(f"window shapes differ: {a.shape}, {b.shape}, {c.shape}")
    d = a - 2.0 * b + c
    return float((d * d).sum(axis=-1))


def pairwise_payment(delta_i: float, delta_j: float, c_t: float) -> float:
    """Amount ``i`` pays ``j``: ``C_t (Delta_i - Delta_j)``."""
    if delta_i < 0 or delta_j < 0:
        raise MechanismError("second differences must be nonnegative")
    if c_t < 0:
        raise MechanismError("payment coefficient must be nonnegative")
    return c_t * (delta_i - delta_j)


# coefficient schedules -----------------------------------------------------------


def log_horizon_factor(H: float, rho: float, p: ScheduleParams, s: float, S: float) -> float:
    """``log d_{s->S}`` with ``d_{s->S} = exp(20 H^2 lambda0^2 / ((1-rho)(2v-1))) (s^(1-2v) - S^(1-2v))``.

    Returns ``-inf`` when ``s == S``.
    """
    if not 0.5 < p.v:
        raise MechanismError("horizon factor needs v > 1/2")
    expo = 20.0 * H * H * p.lambda0 ** 2 / ((1.0 - rho) * (2.0 * p.v - 1.0))
    diff = s ** (1.0 - 2.0 * p.v) - S ** (1.0 - 2.0 * p.v)
    if diff < 0:
        raise MechanismError(f"horizon factor needs s <= S, got s={s}, S={S}")
    return expo + math.log(diff) if diff > 0 else -math.inf


@dataclass(frozen=True)
class PaymentCoefficientSchedule:
    """``C_t`` in one of three modes.

    theoretical
        ``4 L_R sqrt(6 d_{t+1->T+1}) / (deg * lambda_t * kappa_t * delta)``
        with ``deg`` the minimum degree, or per edge ``min(deg i, deg j)`` when
        ``per_agent_degree`` is set.  Needs the horizon.
    preset
        ``c0 kappa_t^2 / (delta^2 (t+1)^(-2v))``, horizon free.
    constant
        ``C``.
    """

    mode: str
    params: Optional[ScheduleParams] = None
    L_R: float = 1.0
    H: float = 0.0
    rho: float = 0.0
    min_deg: int = 1
    c0: float = 1e-6
    C: float = 0.0
    per_agent_degree: bool = False

    def __post_init__(self):
        if self.mode not in ("theoretical", "preset", "constant"):
            raise MechanismError(f"unknown coefficient mode {self.mode!r}")
        if self.mode == "constant":
            if not self.C >= 0:
                raise MechanismError("constant coefficient must be nonnegative")
            return
        if self.params is None:
            raise MechanismError(f"{self.mode} mode needs schedule parameters")
        if self.mode == "preset" and not self.c0 >= 0:
            raise MechanismError("c0 must be nonnegative")
        if self.mode == "theoretical":
            bad = self.params.window_violations()
            if bad:
                raise MechanismError("; ".join(bad))
            if not (self.L_R >= 0 and self.H > 0 and 0 <= self.rho < 1 and self.min_deg >= 1):
                raise MechanismError("theoretical mode needs L_R >= 0, H > 0, 0 <= rho < 1, min_deg >= 1")

    @classmethod
    def constant(cls, C: float) -> "PaymentCoefficientSchedule":
        return cls("constant", C=float(C))

    @classmethod
    def preset(cls, params: ScheduleParams, c0: float = 1e-6) -> "PaymentCoefficientSchedule":
        return cls("preset", params=params, c0=c0)

    @classmethod
    def theoretical(cls, params: ScheduleParams, *, L_R: float, H: float, rho: float, min_deg: int,
                    per_agent_degree: bool = False) -> "PaymentCoefficientSchedule":
        return cls("theoretical", params=params, L_R=L_R, H=H, rho=rho, min_deg=min_deg,
                   per_agent_degree=per_agent_degree)

    @property
    def horizon_free(self) -> bool:
        return self.mode != "theoretical"

    def with_horizon(self, T: int) -> "PaymentCoefficientSchedule":
        if self.params is None:
            return self
        return PaymentCoefficientSchedule(self.mode, self.params.with_horizon(T), self.L_R, self.H, self.rho,
                                          self.min_deg, self.c0, self.C, self.per_agent_degree)

    def log_coefficient(self, t: int, deg: Optional[int] = None) -> float:
        p = self.params
        lf = log_horizon_factor(self.H, self.rho, p, t + 1, p.T + 1)
        if lf == -math.inf or self.L_R == 0:
            return -math.inf
        d = self.min_deg if deg is None else deg
        return (math.log(4.0 * self.L_R) + 0.5 * (math.log(6.0) + lf)
                - math.log(d * stepsize(p, t) * kappa(p, t) * p.delta))


def coefficient(s: PaymentCoefficientSchedule, t: int, deg: Optional[int] = None) -> float:
    """``C_t`` for round ``t``; ``deg`` overrides the degree in theoretical mode."""
    if t < 0:
        raise MechanismError("round index must be nonnegative")
    if s.mode == "constant":
        return s.C
    p = s.params
    if s.mode == "preset":
        return s.c0 * kappa(p, t) ** 2 / (p.delta ** 2 * (t + 1) ** (-2.0 * p.v))
    if t >= p.T:
        log.info("theoretical payment coefficient vanishes at t=%d >= T=%d", t, p.T)
        return 0.0
    lc = s.log_coefficient(t, deg)
    if lc == -math.inf:
        return 0.0
    if lc > math.log(np.finfo(float).max):
        raise OverflowError(f"payment coefficient overflows at t={t} (log C = {lc:.1f})")
    return math.exp(lc)


def coefficient_table(s: PaymentCoefficientSchedule, T: int, graph: Graph) -> np.ndarray:
    """``C_t`` for ``t = 0..T``: shape ``(T+1,)``, or ``(T+1, E)`` for per-edge degrees."""
    s = s.with_horizon(T) if s.mode == "theoretical" else s
    if s.mode == "theoretical" and s.per_agent_degree:
        deg = graph.degrees
        edge_deg = sorted({min(deg[i], deg[j]) for i, j in graph.sorted_edges()})
        cols = {d: [coefficient(s, t, d) for t in range(T + 1)] for d in edge_deg}
        return np.array([cols[min(deg[i], deg[j])] for i, j in graph.sorted_edges()]).T
    return np.array([coefficient(s, t) for t in range(T + 1)])


# settlement ------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundSettlement:
    t: int
    deltas: np.ndarray
    edges: tuple
    transfers: np.ndarray  # i -> j for each sorted edge (i < j)

    def transfer(self, i: int, j: int) -> float:
        if (i, j) in self.edges:
            return float(self.transfers[self.edges.index((i, j))])
        if (j, i) in self.edges:
            return float(-self.transfers[self.edges.index((j, i))])
        raise KeyError(f"agents {i} and {j} are not adjacent")

    def totals(self) -> np.ndarray:
        n = len(self.deltas)
        return np.array([math.fsum(self.transfer(i, j) for j in _nbrs(self.edges, i)) for i in range(n)])


def _nbrs(edges, i):
    return sorted([b for a, b in edges if a == i] + [a for a, b in edges if b == i])


def settle_round(t: int, windows: np.ndarray, graph: Graph, c_t) -> RoundSettlement:
    """Transfers for one round from every agent's ``(theta_{t-1}, theta_t, theta_{t+1})``.

    ``windows`` has shape ``(N, 3, dim)`` ordered (prev, curr, next).  ``c_t``
    is a scalar or one value per sorted edge.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[:2] != (graph.n_agents, 3):
        raise MechanismError(f"expected windows of shape ({graph.n_agents}, 3, dim), got {windows.shape}")
    if not np.all(np.isfinite(windows)):
        raise MechanismError("window contains missing or non-finite parameters")
    d = windows[:, 2] - 2.0 * windows[:, 1] + windows[:, 0]
    deltas = (d * d).sum(axis=-1)
    edges = tuple(graph.sorted_edges())
    ei = np.array([e[0] for e in edges], dtype=np.intp)
    ej = np.array([e[1] for e in edges], dtype=np.intp)
    c = np.broadcast_to(np.asarray(c_t, dtype=float), (len(edges),))
    if np.any(c < 0):
        raise MechanismError("payment coefficient must be nonnegative")
    return RoundSettlement(t, deltas, edges, c * (deltas[ei] - deltas[ej]))


@dataclass
class PaymentLedger:
    """Transfers for rounds ``0..T`` of one run.

    ``transfers[t, e]`` is what the lower-indexed endpoint of edge ``e`` pays
    the other one.  Reverse-direction entries are negated views.
    """

    graph: Graph
    deltas: np.ndarray        # (T+1, N)
    coefficients: np.ndarray  # (T+1,) or (T+1, E)
    transfers: np.ndarray = field(init=False)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if np.any(self.deltas < 0):
            raise MechanismError("second differences must be nonnegative")
        if np.any(self.coefficients < 0):
            raise MechanismError("payment coefficient must be nonnegative")
        self.edges = tuple(self.graph.sorted_edges())
        ei = np.array([e[0] for e in self.edges], dtype=np.intp)
        ej = np.array([e[1] for e in self.edges], dtype=np.intp)
        c = self.coefficients if self.coefficients.ndim == 2 else self.coefficients[:, None]
        self.transfers = c * (self.deltas[:, ei] - self.deltas[:, ej])
        self._ei, self._ej = ei, ej

    @classmethod
    def from_deltas(cls, graph: Graph, deltas: np.ndarray, schedule: PaymentCoefficientSchedule) -> "PaymentLedger":
        deltas = np.asarray(deltas, dtype=float)
        return cls(graph, deltas, coefficient_table(schedule, deltas.shape[0] - 1, graph))

    @property
    def T(self) -> int:
        return self.deltas.shape[0] - 1

    def coefficient_at(self, t: int, e: int) -> float:
        c = self.coefficients[t]
        return float(c[e] if np.ndim(c) else c)

    def transfer(self, t: int, i: int, j: int) -> float:
        if (i, j) in self.edges:
            return float(self.transfers[t, self.edges.index((i, j))])
        if (j, i) in self.edges:
            return float(-self.transfers[t, self.edges.index((j, i))])
        raise KeyError(f"agents {i} and {j} are not adjacent")

    def directed(self, t: int) -> list[tuple[int, int, float]]:
        """Every ordered-pair entry of round ``t``."""
        out = []
        for e, (i, j) in enumerate(self.edges):
            x = float(self.transfers[t, e])
            out.append((i, j, x))
            out.append((j, i, -x))
        return out

    def _signed(self, i: int, upto: Optional[int] = None) -> np.ndarray:
        stop = self.T + 1 if upto is None else upto + 1
        cols = [self.transfers[:stop, e] if a == i else -self.transfers[:stop, e]
                for e, (a, b) in enumerate(self.edges) if i in (a, b)]
        return np.stack(cols, axis=1) if cols else np.zeros((stop, 0))

    def agent_round_totals(self, i: int) -> np.ndarray:
        """``P_{i,t}`` for every round, each the correctly rounded neighbour sum."""
        return np.array([math.fsum(row) for row in self._signed(i).tolist()])

    def totals(self) -> np.ndarray:
        """``(T+1, N)`` array of per-agent round totals."""
        return np.stack([self.agent_round_totals(i) for i in range(self.graph.n_agents)], axis=1)

    def total_payment(self, i: int, upto: Optional[int] = None) -> float:
        """``sum_{t <= upto} P_{i,t}`` as one correctly rounded sum."""
        return math.fsum(self._signed(i, upto).ravel().tolist())

    def budget_residual(self, t: int) -> float:
        """Exact sum over agents of all round-``t`` entries; always 0."""
        return math.fsum(x for _, _, x in self.directed(t))

    def write_csv(self, path, seed: Optional[int] = None) -> None:
        with open(path, "w", newline="") as fh:
            write_ledger_rows(csv.writer(fh, lineterminator="\n"), [(seed, self)], header=True)


LEDGER_COLUMNS = ["seed", "t", "i", "j", "transfer", "C_t", "delta_i", "delta_j"]


def write_ledger_rows(writer, ledgers: Sequence[tuple], header: bool = True) -> None:
    if header:
        writer.writerow(LEDGER_COLUMNS)
    for seed, led in ledgers:
        tag = "" if seed is None else str(seed)
        for t in range(led.T + 1):
            for e, (i, j) in enumerate(led.edges):
                x = float(led.transfers[t, e])
                c = repr(led.coefficient_at(t, e))
                di, dj = repr(float(led.deltas[t, i])), repr(float(led.deltas[t, j]))
                writer.writerow([tag, t, i, j, repr(x), c, di, dj])
                writer.writerow([tag, t, j, i, repr(-x), c, dj, di])


# cross verification ----------------------------------------------------------------


@dataclass(frozen=True)
class PairView:
    """One agent's copy of the two windows an edge payment depends on.

    ``own`` and ``peer`` are ``(prev, curr, next)`` triples.  ``reported_own`` /
    ``reported_peer`` replace the recomputed second differences when set.
    """

    own: tuple
    peer: tuple
    reported_own: Optional[float] = None
    reported_peer: Optional[float] = None

    def payment(self, c_t: float) -> float:
        d_own = self.reported_own if self.reported_own is not None else second_difference(*self.own[::-1])
        d_peer = self.reported_peer if self.reported_peer is not None else second_difference(*self.peer[::-1])
        return c_t * (d_own - d_peer)


def cross_verify(view_i: PairView, view_j: PairView, c_t: float) -> bool:
    """True iff both sides compute transfers that cancel bit for bit."""
    p_ij = view_i.payment(c_t)
    p_ji = view_j.payment(c_t)
    ok = p_ij == -p_ji
    if not ok:
        log.warning("payment mismatch: %r vs %r", p_ij, -p_ji)
    return ok
