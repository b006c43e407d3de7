"""Scenarios and the canned checks built on them.

A :class:`Scenario` bundles a problem, a coupling matrix, the step-size and
payment schedules and one policy per agent.  Agents with a non-truthful
policy form the manipulating group; everyone else is truthful.  All
comparisons reuse the same seeds across policies, so differences come from
the actions alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import engine as eng
from .mechanism import PaymentCoefficientSchedule, PaymentLedger, coefficient_table
from .metrics import RewardFunction, RunMetrics, consensus_error, convergence_slope
from .problems import ProblemInstance, make_huber, make_least_squares, make_mean_estimation, make_quadratic
from .strategy import Action, BestResponse, Fixed, StrategyPolicy, Truthful, best_response_search
from .topology import CouplingMatrix, build_ring


@dataclass
class Scenario:
    name: str
    problem: ProblemInstance
    coupling: CouplingMatrix
    params: eng.ScheduleParams
    policies: tuple
    payment: PaymentCoefficientSchedule
    reward: RewardFunction = field(default_factory=RewardFunction)
    seeds: tuple = (0,)
    theta0: Optional[np.ndarray] = None
    distance_target: str = "optimum"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.policies = tuple(self.policies)
        if len(self.policies) != self.problem.n_agents:
            raise ValueError(f"{len(self.policies)} policies for {self.problem.n_agents} agents")
        if self.coupling.n_agents != self.problem.n_agents:
            raise ValueError("topology and problem disagree on the number of agents")
        if self.distance_target not in ("optimum", "deviated"):
            raise ValueError("distance_target must be 'optimum' or 'deviated'")
        self.seeds = tuple(int(s) for s in self.seeds)

    @property
    def n_agents(self) -> int:
        return self.problem.n_agents

    @property
    def deviators(self) -> tuple:
        return tuple(i for i, p in enumerate(self.policies) if not isinstance(p, Truthful))

    @property
    def graph(self):
        return self.coupling.graph

    def with_horizon(self, T: int) -> "Scenario":
        return replace(self, params=self.params.with_horizon(T))

    def with_payment(self, payment: PaymentCoefficientSchedule) -> "Scenario":
        return replace(self, payment=payment)

    def with_policies(self, policies) -> "Scenario":
        return replace(self, policies=tuple(policies))

    # simulation ----------------------------------------------------------------

    def _profile(self, deviator: int, action: Action) -> tuple:
        out = []
        for i, p in enumerate(self.policies):
            if i == deviator:
                out.append(Truthful() if action.is_truthful else Fixed(action))
            elif not p.runnable:
                raise ValueError(f"agent {i} has an unresolved best-response policy")
            else:
                out.append(p)
        return tuple(out)

    def simulate(self, rows, recorders=()):
        return eng.simulate(self.problem, self.coupling, self.params, rows, recorders, theta0=self.theta0)

    def coefficients(self, T: int) -> np.ndarray:
        return coefficient_table(self.payment, T, self.graph)

    def net_utilities(self, deviator: int, actions: Sequence[Action], seeds: Sequence[int],
                      horizons: Optional[Sequence[int]] = None) -> np.ndarray:
        """Net utility of ``deviator`` per (action, seed).

        With ``horizons`` the result has a leading horizon axis; every horizon
        is read off the same run of length ``max(horizons)``, with the payment
        schedule re-evaluated for that horizon.
        """
        actions, seeds = list(actions), list(seeds)
        hs = [self.params.T] if horizons is None else [int(h) for h in horizons]
        scen = self.with_horizon(max(hs))
        rows = [eng.Row(s, scen._profile(deviator, act)) for act in actions for s in seeds]
        delta = eng.DeltaRecorder()
        snaps = eng.SnapshotRecorder([h + 1 for h in hs])
        scen.simulate(rows, [delta, snaps])
        out = np.empty((len(hs), len(actions), len(seeds)))
        for k, h in enumerate(hs):
            coef = scen.coefficients(h)
            for r in range(len(rows)):
                led = PaymentLedger(self.graph, delta.delta[:h + 1, r], coef)
                f = float(self.problem.local_objective(deviator, snaps.snapshots[h + 1][r, deviator]))
                out[k, r // len(seeds), r % len(seeds)] = self.reward(f) - led.total_payment(deviator)
        return out[0] if horizons is None else out

    def resolve(self, seeds: Optional[Sequence[int]] = None) -> "Scenario":
        """Replace each best-response policy by its chosen constant action.

        Deviators are resolved in index order, each against the already
        resolved others.
        """
        seeds = list(self.seeds if seeds is None else seeds)
        scen = self
        for i, p in enumerate(self.policies):
            if isinstance(p, BestResponse):
                tmp = scen.with_policies([Truthful() if isinstance(q, BestResponse) and j != i else q
                                          for j, q in enumerate(scen.policies)])
                act, _ = best_response_search(p, tmp, i, seeds)
                pol = list(scen.policies)
                pol[i] = Truthful() if act.is_truthful else Fixed(act)
                scen = scen.with_policies(pol)
        return scen

    def distance_reference(self) -> np.ndarray:
        if self.distance_target == "optimum" or not self.deviators:
            return self.problem.global_optimum()
        if len(self.deviators) != 1:
            raise ValueError("deviated distance target needs exactly one deviator")
        i = self.deviators[0]
        p = self.policies[i]
        return self.problem.deviated_optimum(i, p.action_at(0).a)

    def run_metrics(self, seeds: Optional[Sequence[int]] = None):
        """Simulate every seed with the scenario's (resolved) policies.

        Returns ``(runs, ledgers)``: one :class:`RunMetrics` and one
        :class:`PaymentLedger` per seed.
        """
        seeds = list(self.seeds if seeds is None else seeds)
        scen = self.resolve(seeds)
        target = scen.distance_reference()
        f_star = float(self.problem.global_objective(self.problem.global_optimum()))
        rows = [eng.Row(s, scen.policies) for s in seeds]
        delta = eng.DeltaRecorder()
        dist = eng.SeriesRecorder(lambda th: ((th - target) ** 2).sum(axis=-1))
        gap = eng.SeriesRecorder(lambda th: self.problem.global_objective(th) - f_star)
        cons = eng.SeriesRecorder(consensus_error)
        res = scen.simulate(rows, [delta, dist, gap, cons])
        coef = scen.coefficients(self.params.T)
        runs, ledgers = [], []
        for r, s in enumerate(seeds):
            led = PaymentLedger(self.graph, delta.delta[:, r], coef)
            f_final = np.array([float(self.problem.local_objective(i, res.final[r, i])) for i in range(self.n_agents)])
            totals = np.array([led.total_payment(i) for i in range(self.n_agents)])
            runs.append(RunMetrics(s, dist.values[:, r], gap.values[:, r], cons.values[:, r], led.totals(),
                                   f_final, self.reward, totals))
            ledgers.append(led)
        return runs, ledgers


def coefficient_schedule(spec, params: eng.ScheduleParams, problem: ProblemInstance, coupling: CouplingMatrix,
                         reward: RewardFunction, per_agent_degree: bool = False) -> PaymentCoefficientSchedule:
    """Payment schedule from a short spec: a number (constant), ``"theoretical"`` or ``"preset"``."""
    if isinstance(spec, PaymentCoefficientSchedule):
        return spec
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return PaymentCoefficientSchedule.constant(float(spec))
    if spec == "theoretical":
        return PaymentCoefficientSchedule.theoretical(params, L_R=reward.lipschitz, H=problem.H,
                                                      rho=coupling.rho, min_deg=coupling.min_degree,
                                                      per_agent_degree=per_agent_degree)
    if spec == "preset":
        return PaymentCoefficientSchedule.preset(params)
    raise ValueError(f"unknown payment schedule {spec!r}")


# canned scenarios ------------------------------------------------------------------


def example1_scenario(*, a: float = 3.0, n_agents: int = 5, dim: int = 10, T: int = 10_000, deviator: int = 0,
                      payment="theoretical", seeds=(0,), problem_seed: int = 2024, lambda0: float = 0.1,
                      v: float = 0.55, r: float = 0.51, delta: float = 1e-4, w: float = 0.3) -> Scenario:
    """Least squares on a ring with exact gradients and one scaling deviator."""
    problem = make_least_squares(n_agents, dim, problem_seed)
    W = build_ring(n_agents, w)
    p = eng.ScheduleParams(lambda0, v, r, delta, T)
    pol = [Truthful() for _ in range(n_agents)]
    if a != 1.0:
        pol[deviator] = Fixed(Action(a))
    rew = RewardFunction()
    return Scenario("example1", problem, W, p, tuple(pol), coefficient_schedule(payment, p, problem, W, rew),
                    rew, tuple(seeds), distance_target="deviated")


def example1_check(N: int = 5, dim: int = 10, a: float = 3.0, seeds=(0,), T: int = 10_000,
                   deviator: int = 0, problem_seed: int = 2024) -> dict:
    """Deviated fixed point and global-cost increase on the least-squares example."""
    scen = example1_scenario(a=a, n_agents=N, dim=dim, T=T, deviator=deviator, payment=0.0, seeds=seeds,
                             problem_seed=problem_seed)
    prob = scen.problem
    rows = [eng.Row(s, scen.policies) for s in seeds]
    res = scen.simulate(rows)
    target = prob.deviated_optimum(deviator, a)
    rel = np.linalg.norm(res.final - target, axis=-1) / np.linalg.norm(target)
    bar = res.final.mean(axis=1)
    f_star = float(prob.global_objective(prob.global_optimum()))
    increase = np.array([float(prob.global_objective(x)) - f_star for x in bar])
    f_dev = np.array([float(prob.local_objective(deviator, x)) for x in bar])
    gain, loss = prob.deviation_cost_delta(deviator, a)
    return {
        "a": a,
        "max_relative_distance": float(rel.max()),
        "deviated_optimum": target,
        "f_i_mean": float(f_dev.mean()),
        "f_i_closed_form": float(prob.local_objective(deviator, target)),
        "F_increase_mean": float(increase.mean()),
        "F_increase_closed_form": loss,
        "F_increase_relative_error": abs(increase.mean() - loss) / loss if loss > 0 else abs(increase.mean()),
        "f_i_gain_closed_form": gain,
    }


def example2_check(N: int = 5, dim: int = 4, a: float = 3.0, sigma2: float = 1.0, seeds=tuple(range(10)),
                   T: int = 100_000, deviator: int = 0, problem_seed: int = 7, lambda0: float = 0.1,
                   v: float = 0.55) -> dict:
    """Mean estimation, truthful and with one scaler, on paired seeds."""
    if not lambda0 < 0.5:
        raise ValueError("mean estimation needs lambda0 < 1/2")
    prob = make_mean_estimation(N, dim, problem_seed, sigma2=sigma2)
    W = build_ring(N, 0.3)
    p = eng.ScheduleParams(lambda0, v, 0.51, 1e-4, T)
    truthful = eng.truthful_profile(N)
    deviating = tuple(Fixed(Action(a)) if i == deviator else Truthful() for i in range(N))
    rows = [eng.Row(s, truthful) for s in seeds] + [eng.Row(s, deviating) for s in seeds]
    res = eng.simulate(prob, W, p, rows)
    bar = res.final.mean(axis=1)
    mse = ((bar - prob.means[deviator]) ** 2).sum(axis=-1)
    mu = prob.global_optimum()
    spread = float(((mu - prob.means[deviator]) ** 2).sum())
    glob = ((bar - mu) ** 2).sum(axis=-1)  # F(theta) - F(mu) for this objective
    k = len(seeds)
    mse_t, mse_d = float(mse[:k].mean()), float(mse[k:].mean())
    glob_d = float(glob[k:].mean())
    factor = (N / (a + N - 1.0)) ** 2
    inc = ((a - 1.0) / (a + N - 1.0)) ** 2 * spread
    return {
        "a": a,
        "spread": spread,
        "truthful_mse": mse_t,
        "truthful_mse_relative_error": abs(mse_t - spread) / spread,
        "deviating_mse": mse_d,
        "mse_ratio": mse_d / mse_t,
        "mse_ratio_closed_form": factor,
        "mse_ratio_relative_error": abs(mse_d / mse_t - factor) / factor,
        "global_increase": glob_d,
        "global_increase_closed_form": inc,
        "global_increase_relative_error": abs(glob_d - inc) / inc if inc > 0 else abs(glob_d),
    }


def strongly_convex_slope(seeds=tuple(range(10)), T: int = 100_000, window=(1_000, 100_000), v: float = 0.55,
                          lambda0: float = 0.1, n_agents: int = 5, dim: int = 4, noise_std: float = 3.0,
                          problem_seed: int = 11) -> dict:
    """Log-log slope of the mean squared distance to the optimum on a noisy quadratic."""
    prob = make_quadratic(n_agents, dim, problem_seed, noise_std=noise_std, stochastic=True)
    W = build_ring(n_agents, 0.3)
    p = eng.ScheduleParams(lambda0, v, 0.51, 1e-4, T)
    star = prob.global_optimum()
    rec = eng.SeriesRecorder(lambda th: ((th - star) ** 2).sum(axis=-1).mean(axis=-1))
    eng.simulate(prob, W, p, [eng.Row(s, eng.truthful_profile(n_agents)) for s in seeds], [rec])
    series = rec.values.mean(axis=1)
    t = rec.times + 1.0  # row t holds theta_{t+1}
    return {"slope": convergence_slope(t, series, window), "predicted": -v, "t": t, "distance": series}


def general_convex_slope(seeds=tuple(range(10)), horizons=(1_000, 10_000, 100_000), v: float = 0.55,
                         lambda0: float = 0.1, n_agents: int = 5, dim: int = 4, problem_seed: int = 13) -> dict:
    """Slope of the running-average objective gap on a Huber regression instance."""
    prob = make_huber(n_agents, dim, problem_seed)
    W = build_ring(n_agents, 0.3)
    T = max(horizons)
    p = eng.ScheduleParams(lambda0, v, 0.51, 1e-4, T)
    f_star = float(prob.global_objective(prob.global_optimum()))
    rec = eng.SeriesRecorder(lambda th: (prob.global_objective(th) - f_star).mean(axis=-1))
    eng.simulate(prob, W, p, [eng.Row(s, eng.truthful_profile(n_agents)) for s in seeds], [rec])
    gaps = rec.values.mean(axis=1)
    csum = np.cumsum(gaps)
    avg = np.array([csum[h] / (h + 1) for h in horizons])
    slope = convergence_slope(np.asarray(horizons, dtype=float), avg, (horizons[0], horizons[-1]))
    return {"slope": slope, "bound": -(1.0 - v), "horizons": list(horizons), "cesaro_gap": avg}


def payment_decay(seeds=(0,), T: int = 10_000, early=(100, 1_000), late=(5_000, 10_000), scenario=None) -> dict:
    """Mean absolute per-agent payment in an early and a late window of a truthful run."""
    scen = scenario or example1_scenario(a=1.0, T=T, payment="theoretical", seeds=seeds)
    scen = scen.with_policies(eng.truthful_profile(scen.n_agents))
    runs, _ = scen.run_metrics(seeds)
    pay = np.abs(np.stack([r.payments for r in runs]))
    e = float(pay[:, early[0]:early[1] + 1].mean())
    l = float(pay[:, late[0]:late[1] + 1].mean())
    return {"early_mean": e, "late_mean": l, "ratio": l / e if e > 0 else math.nan}


# sweeps ---------------------------------------------------------------------------------


@dataclass
class SweepCell:
    a: float
    b: float
    C: str
    mean: float
    stderr: float


def _schedule_label(spec) -> str:
    return repr(float(spec)) if isinstance(spec, (int, float)) else str(spec)


def utility_sweep(template: Scenario, a_grid, b_grid=(0.0,), C_grid=(0.0,), seeds=None,
                  noise_law: str = "laplace") -> list[SweepCell]:
    """Mean and standard error of the manipulating group's net utility per (a, b, C).

    Trajectories do not depend on the payment schedule, so each (a, b) is
    simulated once and every schedule is applied to the same runs.
    """
    seeds = list(template.seeds if seeds is None else seeds)
    group = template.deviators
    if not group:
        raise ValueError("the template scenario declares no manipulating agents")
    cells = []
    for a in a_grid:
        for b in b_grid:
            act = Action(a, b, noise_law)
            pol = tuple((Fixed(act) if not act.is_truthful else Truthful()) if i in group else p
                        for i, p in enumerate(template.policies))
            rows = [eng.Row(s, pol) for s in seeds]
            delta = eng.DeltaRecorder()
            res = template.simulate(rows, [delta])
            f = np.array([[float(template.problem.local_objective(i, res.final[k, i])) for i in group]
                          for k in range(len(seeds))])
            rew = np.vectorize(template.reward)(f) if f.size else f
            for spec in C_grid:
                sched = coefficient_schedule(spec, template.params, template.problem, template.coupling,
                                             template.reward)
                coef = coefficient_table(sched, template.params.T, template.graph)
                util = np.empty(len(seeds))
                for k in range(len(seeds)):
                    led = PaymentLedger(template.graph, delta.delta[:, k], coef)
                    util[k] = np.mean([rew[k, g] - led.total_payment(i) for g, i in enumerate(group)])
                se = float(util.std(ddof=1) / math.sqrt(len(util))) if len(util) > 1 else 0.0
                cells.append(SweepCell(float(a), float(b), _schedule_label(spec), float(util.mean()), se))
    return cells


def threeway_comparison(scenario: Scenario, seeds=None) -> dict:
    """Objective gap of the network average under three regimes.

    ``truthful``: nobody manipulates.  ``mechanism``: manipulators best-respond
    to the scenario's payment schedule.  ``no_payment``: they best-respond to
    a zero schedule.  Returns the mean gap curve of each and the chosen actions.
    """
    seeds = list(scenario.seeds if seeds is None else seeds)
    prob = scenario.problem
    f_star = float(prob.global_objective(prob.global_optimum()))
    out = {}
    regimes = {
        "truthful": scenario.with_policies(eng.truthful_profile(scenario.n_agents)),
        "mechanism": scenario,
        "no_payment": scenario.with_payment(PaymentCoefficientSchedule.constant(0.0)),
    }
    chosen = {}
    for name, scen in regimes.items():
        scen = scen.resolve(seeds)
        chosen[name] = tuple(p.action_at(0) for p in scen.policies)
        rec = eng.SeriesRecorder(lambda th: prob.global_objective(th.mean(axis=-2)) - f_star)
        scen.simulate([eng.Row(s, scen.policies) for s in seeds], [rec])
        out[name] = rec.values.mean(axis=1)
    out["actions"] = chosen
    return out


def group_scenario(base: Scenario, group: Sequence[int], policy: StrategyPolicy) -> Scenario:
    """Copy of ``base`` where agents in ``group`` follow ``policy`` and the rest are truthful."""
    return base.with_policies([policy if i in group else Truthful() for i in range(base.n_agents)])


def split_groups(n_agents: int, n_manipulators: int, seed: int) -> tuple:
    """Random manipulating group of the given size, drawn from the seed."""
    gen = np.random.default_rng(seed)
    return tuple(sorted(int(i) for i in gen.choice(n_agents, n_manipulators, replace=False)))

