"""Gradient manipulation actions and agent policies.

An action maps a true gradient ``g`` to ``m = a * g + b * xi`` where ``a >= 1``
amplifies and ``xi`` is unit-variance noise (Laplace by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng as rng_mod

NOISE_LAWS = {"laplace": "laplace", "gaussian": "normal"}


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    a: float = 1.0
    b: float = 0.0
    noise_law: str = "laplace"

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not np.isfinite(self.a) or self.a < 1.0:
            raise StrategyError(f"scaling factor a must be >= 1, got {self.a}")
        if not np.isfinite(self.b):
            raise StrategyError("noise factor b must be finite")
        if self.noise_law not in NOISE_LAWS:
            raise StrategyError(f"unknown noise law {self.noise_law!r}")

    @property
    def is_truthful(self) -> bool:
        return self.a == 1.0 and self.b == 0.0


TRUTHFUL = Action()


class StrategyPolicy:
    """Base policy: an action per iteration with one noise law per run."""

    kind = ""
    noise_law = "laplace"

    def action_at(self, t: int) -> Action:
        raise NotImplementedError

    @property
    def uses_noise(self) -> bool:
        raise NotImplementedError

    @property
    def runnable(self) -> bool:
        return True

    def check_horizon(self, T: int) -> None:
        pass

    def feasible(self, action: Action) -> bool:
        """Whether ``action`` is available to this policy (truthful always is)."""
        return action.is_truthful or action == self.action_at(0)


@dataclass(frozen=True)
class Truthful(StrategyPolicy):
    kind = "truthful"

    def action_at(self, t):
        return TRUTHFUL

    @property
    def uses_noise(self):
        return False

    def feasible(self, action):
        return action.is_truthful


@dataclass(frozen=True)
class Fixed(StrategyPolicy):
    action: Action
    kind = "fixed"

    @property
    def noise_law(self):
        return self.action.noise_law

    def action_at(self, t):
        return self.action

    @property
    def uses_noise(self):
        return self.action.b != 0.0


@dataclass(frozen=True)
class Schedule(StrategyPolicy):
    """One action per iteration ``t = 0..T``."""

    actions: tuple
    kind = "schedule"

    def __post_init__(self):
        acts = tuple(self.actions)
        if not acts:
            raise StrategyError("schedule needs at least one action")
        laws = {x.noise_law for x in acts}
        if len(laws) > 1:
            raise StrategyError("a schedule must use a single noise law")
        object.__setattr__(self, "actions", acts)

    @property
    def noise_law(self):
        return self.actions[0].noise_law

    def action_at(self, t):
        return self.actions[t]

    def check_horizon(self, T):
        if len(self.actions) < T + 1:
            raise StrategyError(f"schedule has {len(self.actions)} actions, horizon needs {T + 1}")

    @property
    def uses_noise(self):
        return any(x.b != 0.0 for x in self.actions)

    def feasible(self, action):
        return action.is_truthful or action in self.actions


@dataclass(frozen=True)
class BestResponse(StrategyPolicy):
    """Constant action chosen by grid search over ``a_grid x b_grid``."""

    a_grid: tuple
    b_grid: tuple = (0.0,)
    noise_law: str = "laplace"
    kind = "best_response"

    def __post_init__(self):
        a_grid = tuple(float(a) for a in self.a_grid)
        b_grid = tuple(float(b) for b in self.b_grid)
        if not a_grid or not b_grid:
            raise StrategyError("best-response grids must be nonempty")
        if min(a_grid) < 1.0:
            raise StrategyError("grid values of a must be >= 1")
        object.__setattr__(self, "a_grid", a_grid)
        object.__setattr__(self, "b_grid", b_grid)

    def candidates(self) -> list[Action]:
        return [Action(a, b, self.noise_law) for a in self.a_grid for b in self.b_grid]

    @property
    def runnable(self):
        return False

    def action_at(self, t):
        raise StrategyError("resolve a best-response policy with best_response_search before running")

    @property
    def uses_noise(self):
        return any(b != 0.0 for b in self.b_grid)

    def feasible(self, action):
        return action.is_truthful or action in self.candidates()


def apply_action(act: Action, g: np.ndarray, rng=None) -> np.ndarray:
    """Return ``a * g + b * xi``.

    ``rng`` is a Generator or a NoiseStream of width ``len(g)``; it may be
    omitted when ``b == 0``.  When given, one noise row is always consumed.
    """
    g = np.asarray(g, dtype=float)
    if rng is None:
        if act.b != 0.0:
            raise StrategyError("a noisy action needs a random stream")
        xi = np.zeros_like(g)
    elif isinstance(rng, rng_mod.NoiseStream):
        xi = rng.take()
    else:
        xi = rng_mod.NoiseStream(rng, g.shape[-1], NOISE_LAWS[act.noise_law], block=1).take()
    return act.a * g + act.b * xi


def truthfulness_deviation(act: Action, g_samples: Sequence, rng: Optional[np.random.Generator] = None) -> float:
    """Monte-Carlo estimate of ``E ||alpha(g) - g||`` over the given samples."""
    samples = [np.asarray(g, dtype=float) for g in g_samples]
    if not samples:
        raise StrategyError("need at least one gradient sample")
    if act.is_truthful:
        return 0.0
    gen = rng if rng is not None else np.random.default_rng(0)
    dev = []
    for g in samples:
        xi = rng_mod.NoiseStream(gen, g.shape[-1], NOISE_LAWS[act.noise_law], block=1).take() if act.b else 0.0
        dev.append(np.linalg.norm((act.a - 1.0) * g + act.b * xi))
    return float(np.mean(dev))


def _preference_key(act: Action):
    return (act.a, abs(act.b))


def best_response_search(policy: BestResponse, scenario, deviator: int, seeds: Sequence[int]) -> tuple[Action, float]:
    """Grid point with the highest mean net utility for ``deviator``.

    ``scenario`` must provide ``net_utilities(deviator, actions, seeds)``
    returning an array of shape ``(len(actions), len(seeds))``.  Ties go to the
    smaller ``a``, then the smaller ``|b|``.
    """
    cands = sorted(policy.candidates(), key=_preference_key)
    if not seeds:
        raise StrategyError("need at least one seed")
    util = np.asarray(scenario.net_utilities(deviator, cands, list(seeds)), dtype=float)
    means = util.mean(axis=1)
    best = int(np.argmax(means))  # first maximum, i.e. the most truthful among ties
    return cands[best], float(means[best])


def policy_from_dict(spec: dict) -> StrategyPolicy:
    """Build a policy from a configuration block."""
    kind = spec.get("kind", "truthful")
    law = spec.get("noise_law", "laplace")
    if kind == "truthful":
        return Truthful()
    if kind == "fixed":
        return Fixed(Action(spec.get("a", 1.0), spec.get("b", 0.0), law))
    if kind == "schedule":
        a = list(spec["a"])
        b = list(spec.get("b", [0.0] * len(a)))
        if len(a) != len(b):
            raise StrategyError("schedule a and b lists differ in length")
        return Schedule(tuple(Action(x, y, law) for x, y in zip(a, b)))
    if kind == "best_response":
        return BestResponse(tuple(spec["a_grid"]), tuple(spec.get("b_grid", [0.0])), law)
    raise StrategyError(f"unknown policy kind {kind!r}")
