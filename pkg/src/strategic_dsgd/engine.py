"""Round-synchronous decentralized SGD with strategic gradient reports.

Every agent ``i`` runs

    theta_{i,t+1} = sum_j w_ij theta_{j,t} - lambda_t m_{i,t},

where ``m_{i,t}`` is its (possibly manipulated) gradient report.  The
batched simulator advances many independent runs at once, one per row, and
only uses elementwise arithmetic inside the round loop; a row of a batch
is therefore bit-identical to the same run simulated alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rng_mod
from .problems import ProblemInstance
from .strategy import NOISE_LAWS, StrategyPolicy, Truthful
from .topology import CouplingMatrix

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """A parameter became non-finite or exceeded the norm guard."""

    def __init__(self, t: int, row: int, agent: int, norm: float):
        self.t, self.row, self.agent, self.norm = t, row, agent, norm
        super().__init__(f"divergence at round {t} (row {row}, agent {agent}): |theta| = {norm:.3g}")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleParams:
    """Step size ``lambda0 (t+1)^-v``, truthfulness envelope ``(t+1)^-r`` and horizon ``T``."""

    lambda0: float
    v: float
    r: float
    delta: float
    T: int

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ScheduleError("lambda0 must be positive")
        if not self.delta > 0:
            raise ScheduleError("delta must be positive")
        if int(self.T) != self.T or self.T < 0:
            raise ScheduleError("horizon T must be a nonnegative integer")
        object.__setattr__(self, "T", int(self.T))

    def window_violations(self) -> list[str]:
        """Constraints on ``(v, r)`` needed by the theoretical payment schedule."""
        out = []
        if not 0.5 < self.v < 2.0 / 3.0:
            out.append(f"v not in (1/2, 2/3): v={self.v}")
        if not 1.0 - self.v < self.r < self.v:
            out.append(f"r not in (1-v, v): r={self.r}, v={self.v}")
        return out

    def with_horizon(self, T: int) -> "ScheduleParams":
        return ScheduleParams(self.lambda0, self.v, self.r, self.delta, T)


def stepsize(p: ScheduleParams, t: int) -> float:
    return p.lambda0 * (t + 1) ** (-p.v)


def kappa(p: ScheduleParams, t: int) -> float:
    return float((t + 1) ** (-p.r))


def second_difference_sq(nxt: np.ndarray, curr: np.ndarray, prev: np.ndarray) -> np.ndarray:
    d = nxt - 2.0 * curr + prev
    return (d * d).sum(axis=-1)


# reference per-agent path ----------------------------------------------------


@dataclass
class AgentState:
    """Parameter window ``(theta_{t-1}, theta_t, theta_{t+1})`` of one agent."""

    agent: int
    theta_prev: np.ndarray
    theta_curr: np.ndarray
    problem: ProblemInstance
    policy: StrategyPolicy
    grad_stream: Optional[rng_mod.NoiseStream] = None
    action_stream: Optional[rng_mod.NoiseStream] = None
    theta_next: Optional[np.ndarray] = None

    def shift(self):
        if self.theta_next is None:
            raise RuntimeError("window shift before the next parameter was computed")
        self.theta_prev, self.theta_curr, self.theta_next = self.theta_curr, self.theta_next, None


@dataclass(frozen=True)
class RoundRecord:
    t: int
    theta_prev: np.ndarray
    theta_curr: np.ndarray
    theta_next: np.ndarray
    manipulated: np.ndarray
    gradients: np.ndarray
    actions: tuple

    def __post_init__(self):
        shape = self.theta_curr.shape
        for name in ("theta_prev", "theta_next", "manipulated", "gradients"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"record field {name} has inconsistent shape")
        if len(self.actions) != shape[0]:
            raise ValueError("one action per agent expected")


def initial_parameters(seed: int, n_agents: int, dim: int) -> np.ndarray:
    """Default ``theta_{i,0}``: standard Gaussian from each agent's init stream."""
    return np.stack([rng_mod.generator(seed, i, "init").standard_normal(dim) for i in range(n_agents)])


def init_states(problem: ProblemInstance, policies: Sequence[StrategyPolicy], seed: int,
                theta0: Optional[np.ndarray] = None) -> list[AgentState]:
    n, dim = problem.n_agents, problem.dim
    theta0 = initial_parameters(seed, n, dim) if theta0 is None else np.array(theta0, dtype=float)
    states = []
    for i in range(n):
        pol = policies[i]
        gs = rng_mod.stream(seed, i, "gradient", problem.noise_width, problem.noise_law) if problem.stochastic else None
        acts = rng_mod.stream(seed, i, "action", dim, NOISE_LAWS[pol.noise_law]) if pol.uses_noise else None
        states.append(AgentState(i, np.zeros(dim), theta0[i].copy(), problem, pol, gs, acts))
    return states


def dsgd_round(states: list[AgentState], W: CouplingMatrix, p: ScheduleParams, t: int) -> RoundRecord:
    """One simultaneous round for every agent, then a window shift.

    Reports are computed from ``theta_t`` of all agents before any
    ``theta_{t+1}`` is written.
    """
    if {s.agent for s in states} != set(range(W.n_agents)) or len(states) != W.n_agents:
        raise ValueError("need exactly one state per agent")
    states = sorted(states, key=lambda s: s.agent)
    lam = stepsize(p, t)
    curr = [s.theta_curr for s in states]
    grads, reports, actions = [], [], []
    for s in states:
        if s.grad_stream is not None:
            g = s.problem.stochastic_gradient(s.agent, s.theta_curr, s.grad_stream).value
        else:
            g = s.problem.exact_gradient(s.agent, s.theta_curr)
        act = s.policy.action_at(t)
        xi = s.action_stream.take() if s.action_stream is not None else np.zeros_like(g)
        grads.append(g)
        reports.append(act.a * g + act.b * xi)
        actions.append(act)
    nxt = [W.mix_agent(s.agent, curr) - lam * reports[s.agent] for s in states]
    for s, x in zip(states, nxt):
        norm = float(np.sqrt((x * x).sum()))
        if not norm <= DIVERGENCE_NORM:
            raise DivergenceError(t, 0, s.agent, norm)
    rec = RoundRecord(t, np.stack([s.theta_prev for s in states]), np.stack(curr), np.stack(nxt),
                      np.stack(reports), np.stack(grads), tuple(actions))
    for s, x in zip(states, nxt):
        s.theta_next = x
        s.shift()
    return rec


# batched path ------------------------------------------------------------------


@dataclass(frozen=True)
class Row:
    """One run of a batch: a master seed and a policy per agent."""

    seed: int
    policies: tuple


class Recorder:
    """Consumer of round windows; arrays carry a leading row axis."""

    def start(self, rows: int, n_agents: int, dim: int, T: int) -> None:
        pass

    def record(self, t, prev, curr, nxt, grads, reports) -> None:
        pass


class DeltaRecorder(Recorder):
    """Squared second differences ``(T+1, rows, N)`` for the payment ledger."""

    def start(self, rows, n_agents, dim, T):
        self.delta = np.empty((T + 1, rows, n_agents))

    def record(self, t, prev, curr, nxt, grads, reports):
        self.delta[t] = second_difference_sq(nxt, curr, prev)


class SeriesRecorder(Recorder):
    """Stores ``fn(theta_{t+1})`` for every round, optionally every ``every`` rounds."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], every: int = 1):
        self.fn = fn
        self.every = int(every)

    def start(self, rows, n_agents, dim, T):
        self.times = np.arange(0, T + 1, self.every)
        self.values = None
        self._k = 0

    def record(self, t, prev, curr, nxt, grads, reports):
        if t % self.every:
            return
        val = np.asarray(self.fn(nxt))
        if self.values is None:
            self.values = np.empty((len(self.times),) + val.shape)
        self.values[self._k] = val
        self._k += 1


class SnapshotRecorder(Recorder):
    """Copies of ``theta_s`` for the requested indices ``s`` in ``0..T+1``."""

    def __init__(self, times: Sequence[int]):
        self.times = sorted(set(int(s) for s in times))

    def start(self, rows, n_agents, dim, T):
        if self.times and (self.times[0] < 0 or self.times[-1] > T + 1):
            raise ValueError(f"snapshot times must lie in 0..{T + 1}")
        self.snapshots = {}

    def record(self, t, prev, curr, nxt, grads, reports):
        if t == 0 and 0 in self.times:
            self.snapshots[0] = curr.copy()
        if t + 1 in self.times:
            self.snapshots[t + 1] = nxt.copy()


class TrajectoryRecorder(Recorder):
    """Full parameter history ``(T+2, rows, N, dim)``; meant for short runs."""

    def start(self, rows, n_agents, dim, T):
        self.theta = np.empty((T + 2, rows, n_agents, dim))
        self.grads = np.empty((T + 1, rows, n_agents, dim))
        self.reports = np.empty((T + 1, rows, n_agents, dim))

    def record(self, t, prev, curr, nxt, grads, reports):
        if t == 0:
            self.theta[0] = curr
        self.theta[t + 1] = nxt
        self.grads[t] = grads
        self.reports[t] = reports


class ManipulationRecorder(Recorder):
    """Per-round ``||m_{i,t} - g_{i,t}||`` for one agent, shape ``(T+1, rows)``."""

    def __init__(self, agent: int):
        self.agent = agent

    def start(self, rows, n_agents, dim, T):
        self.gap = np.empty((T + 1, rows))

    def record(self, t, prev, curr, nxt, grads, reports):
        d = reports[:, self.agent] - grads[:, self.agent]
        self.gap[t] = np.sqrt((d * d).sum(axis=-1))


@dataclass
class BatchResult:
    rows: list
    final: np.ndarray
    recorders: list = field(default_factory=list)


class _ActionTable:
    """Per-round ``a`` and ``b`` coefficients shaped ``(rows, N, 1)``."""

    def __init__(self, rows: Sequence[Row], n_agents: int, T: int):
        self.constant = all(p.kind in ("truthful", "fixed") for r in rows for p in r.policies)
        for r in rows:
            for p in r.policies:
                if not p.runnable:
                    raise ValueError("best-response policies must be resolved before simulation")
                p.check_horizon(T)
        if self.constant:
            self.a = np.array([[p.action_at(0).a for p in r.policies] for r in rows])[..., None]
            self.b = np.array([[p.action_at(0).b for p in r.policies] for r in rows])[..., None]
        else:
            self.rows = rows

    def at(self, t):
        if self.constant:
            return self.a, self.b
        acts = [[p.action_at(t) for p in r.policies] for r in self.rows]
        a = np.array([[x.a for x in row] for row in acts])[..., None]
        b = np.array([[x.b for x in row] for row in acts])[..., None]
        return a, b


class _BlockNoise:
    """Stacks per-(seed, agent) stream blocks into ``(BLOCK, rows, N, width)`` arrays."""

    def __init__(self, keys, width, purpose, n_agents):
        # keys[row][agent] is None (no draws) or (seed, law)
        self.width = width
        self.keys = keys
        self.streams = {}
        for row in keys:
            for i, k in enumerate(row):
                if k is not None and (k, i) not in self.streams:
                    seed, law = k
                    self.streams[(k, i)] = rng_mod.stream(seed, i, purpose, width, law)
        self.active = bool(self.streams)
        self.shape = (len(keys), n_agents, width)

    def next_block(self):
        blocks = {key: s.take_block() for key, s in self.streams.items()}
        zero = np.zeros((rng_mod.BLOCK, self.width))
        return np.stack([np.stack([blocks[(k, i)] if k is not None else zero for i, k in enumerate(row)], axis=1)
                         for row in self.keys], axis=1)


def simulate(problem: ProblemInstance, W: CouplingMatrix, p: ScheduleParams, rows: Sequence[Row],
             recorders: Sequence[Recorder] = (), theta0: Optional[np.ndarray] = None,
             forced: Optional[dict] = None) -> BatchResult:
    """Run ``T+1`` rounds for every row simultaneously.

    ``theta0`` is ``(N, dim)`` shared by all rows or ``(rows, N, dim)``; by
    default each row draws it from its seed.  ``forced`` maps an agent to a
    ``(T+1, dim)`` array of reports that replace that agent's own.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("need at least one row")
    n, dim, T = problem.n_agents, problem.dim, p.T
    if W.n_agents != n:
        raise ValueError(f"coupling matrix has {W.n_agents} agents, problem has {n}")
    for r in rows:
        rng_mod.check_seed(r.seed)
        if len(r.policies) != n:
            raise ValueError("need one policy per agent in every row")
    R = len(rows)
    if theta0 is None:
        cache = {}
        theta = np.stack([cache.setdefault(r.seed, initial_parameters(r.seed, n, dim)) for r in rows])
    else:
        theta = np.broadcast_to(np.asarray(theta0, dtype=float), (R, n, dim)).copy()
    prev = np.zeros_like(theta)
    table = _ActionTable(rows, n, T)
    gnoise = None
    if problem.stochastic:
        gnoise = _BlockNoise([[(r.seed, problem.noise_law)] * n for r in rows], problem.noise_width, "gradient", n)
    anoise = _BlockNoise([[(r.seed, NOISE_LAWS[pol.noise_law]) if pol.uses_noise else None for pol in r.policies]
                          for r in rows], dim, "action", n)
    forced = dict(forced or {})
    for i, arr in forced.items():
        if np.shape(arr) != (T + 1, dim):
            raise ValueError(f"forced reports for agent {i} must have shape {(T + 1, dim)}")
    for rec in recorders:
        rec.start(R, n, dim, T)
    xi = np.zeros((R, n, dim))
    for t in range(T + 1):
        k = t % rng_mod.BLOCK
        if k == 0:
            if gnoise is not None:
                gblock = gnoise.next_block()
            if anoise.active:
                ablock = anoise.next_block()
        g = problem.gradients(theta, gblock[k] if gnoise is not None else None)
        a, b = table.at(t)
        if anoise.active:
            xi = ablock[k]
        m = a * g + b * xi
        for i, arr in forced.items():
            m[:, i] = arr[t]
        lam = stepsize(p, t)
        nxt = W.mix(theta) - lam * m
        sq = (nxt * nxt).sum(axis=-1)
        if not sq.max() <= DIVERGENCE_NORM ** 2:
            bad = np.argwhere(~(sq <= DIVERGENCE_NORM ** 2))[0]
            raise DivergenceError(t, int(bad[0]), int(bad[1]), float(np.sqrt(sq[tuple(bad)])))
        for rec in recorders:
            rec.record(t, prev, theta, nxt, g, m)
        prev, theta = theta, nxt
    return BatchResult(rows, theta, list(recorders))


def truthful_profile(n_agents: int) -> tuple:
    return tuple(Truthful() for _ in range(n_agents))


def run(problem: ProblemInstance, W: CouplingMatrix, p: ScheduleParams, policies: Sequence[StrategyPolicy],
        seed: int, theta0: Optional[np.ndarray] = None) -> tuple[list[RoundRecord], np.ndarray]:
    """Single run with the full record of every round; intended for short horizons."""
    traj = TrajectoryRecorder()
    res = simulate(problem, W, p, [Row(seed, tuple(policies))], [traj], theta0=theta0)
    theta = traj.theta[:, 0]
    prev0 = np.zeros_like(theta[0])
    records = []
    for t in range(p.T + 1):
        records.append(RoundRecord(t, theta[t - 1] if t else prev0, theta[t], theta[t + 1],
                                   traj.reports[t, 0], traj.grads[t, 0],
                                   tuple(pol.action_at(t) for pol in policies)))
    return records, res.final[0]


# parameter manipulation ------------------------------------------------------


@dataclass
class SharedManipulationRun:
    """Run where ``agent`` shares ``alpha_hat(theta)`` instead of ``theta``."""

    agent: int
    theta: np.ndarray    # true parameters, (T+2, N, dim)
    shared: np.ndarray   # what neighbours receive, (T+2, N, dim)
    grads: np.ndarray    # (T+1, N, dim)
    params: ScheduleParams
    seed: int


def simulate_shared_manipulation(problem: ProblemInstance, W: CouplingMatrix, p: ScheduleParams, seed: int,
                                 agent: int, alpha_hat: Callable[[np.ndarray], np.ndarray],
                                 theta0: Optional[np.ndarray] = None) -> SharedManipulationRun:
    """Truthful gradients everywhere, but ``agent`` broadcasts a distorted parameter.

    The manipulating agent mixes its own true parameter; neighbours mix the
    distorted one.
    """
    n, dim, T = problem.n_agents, problem.dim, p.T
    theta = (initial_parameters(seed, n, dim) if theta0 is None else np.array(theta0, dtype=float))[None]
    gstream = _BlockNoise([[(seed, problem.noise_law)] * n], problem.noise_width, "gradient", n) \
        if problem.stochastic else None
    hist = np.empty((T + 2, n, dim))
    shared = np.empty((T + 2, n, dim))
    grads = np.empty((T + 1, n, dim))

    def share(th):
        s = th.copy()
        s[0, agent] = alpha_hat(th[0, agent])
        return s

    hist[0], shared[0] = theta[0], share(theta)[0]
    for t in range(T + 1):
        k = t % rng_mod.BLOCK
        if gstream is not None and k == 0:
            gblock = gstream.next_block()
        g = problem.gradients(theta, gblock[k] if gstream is not None else None)
        lam = stepsize(p, t)
        nxt = W.mix(share(theta)) - lam * g
        nxt[0, agent] = W.mix(theta)[0, agent] - lam * g[0, agent]
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > DIVERGENCE_NORM:
            raise DivergenceError(t, 0, agent, float(np.abs(nxt).max()))
        theta = nxt
        hist[t + 1], shared[t + 1], grads[t] = theta[0], share(theta)[0], g[0]
    return SharedManipulationRun(agent, hist, shared, grads, p, seed)


def equivalent_gradient_reports(run_: SharedManipulationRun, W: CouplingMatrix) -> np.ndarray:
    """Reports ``m_t`` that reproduce a parameter-manipulation run by gradient manipulation alone.

    With ``e_t = alpha_hat(theta_t) - theta_t`` for the manipulating agent,
    ``m_t = g_t + (w_ii e_t - e_{t+1}) / lambda_t``.
    """
    i = run_.agent
    e = run_.shared[:, i] - run_.theta[:, i]
    wii = W.weights[i, i]
    lam = np.array([stepsize(run_.params, t) for t in range(run_.params.T + 1)])
    return run_.grads[:, i] + (wii * e[:-1] - e[1:]) / lam[:, None]


def replay_as_gradient_manipulation(problem: ProblemInstance, W: CouplingMatrix,
                                    run_: SharedManipulationRun) -> np.ndarray:
    """Replay with ordinary reports; returns the ``(T+2, N, dim)`` trajectory.

    The manipulating agent starts from its shared parameter, and its replayed
    trajectory coincides with what it shared in the original run.
    """
    reports = equivalent_gradient_reports(run_, W)
    theta0 = run_.theta[0].copy()
    theta0[run_.agent] = run_.shared[0, run_.agent]
    traj = TrajectoryRecorder()
    simulate(problem, W, run_.params, [Row(run_.seed, truthful_profile(problem.n_agents))], [traj],
             theta0=theta0, forced={run_.agent: reports})
    return traj.theta[:, 0]
