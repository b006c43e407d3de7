"""TOML scenario files: loading, validation and scenario construction.

Schema (all tables optional unless noted)::

    name = "example1"
    seed = 0                  # master seed for single runs
    seeds = [0, 1, 2]         # seeds for multi-seed commands

    [topology]                # required
    kind = "ring"             # ring | graph
    n = 5
    w = 0.3                   # ring neighbour weight
    # kind = "graph": edges = [[0, 1], ...], weight_rule = "metropolis" | "uniform", w

    [problem]                 # required
    kind = "least_squares"    # least_squares | mean_estimation | quadratic | huber
    dim = 10
    seed = 2024               # generator seed, or explicit data (see build_problem)
    stochastic = false

    [schedule]                # required
    lambda0 = 0.1
    v = 0.55
    r = 0.51
    delta = 1e-4
    T = 10000

    [payment]
    mode = "theoretical"      # theoretical | preset | constant
    C = 0.0
    c0 = 1e-6
    per_agent_degree = false

    [reward]
    kind = "linear"           # linear | sigmoid_like

    [[policies]]              # agents not listed are truthful
    agents = [0]
    kind = "fixed"            # truthful | fixed | schedule | best_response
    a = 3.0

    [run]
    distance_target = "deviated"
    workers = 1
    dump_trajectory = false
    plots = true
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import problems as pb
from . import rng as rng_mod
from .engine import ScheduleParams
from .experiments import Scenario, coefficient_schedule
from .mechanism import PaymentCoefficientSchedule
from .metrics import RewardFunction
from .strategy import StrategyError, Truthful, policy_from_dict
from .topology import Graph, TopologyError, build_from_graph, build_ring

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations) if not isinstance(violations, str) else [violations]
        super().__init__("; ".join(self.violations))


def scenario_names() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def resolve_path(ref: str) -> Path:
    """A path to a TOML file, or the name of a shipped scenario."""
    p = Path(ref)
    if p.suffix == ".toml" or p.exists():
        return p
    cand = SCENARIO_DIR / f"{ref}.toml"
    if cand.exists():
        return cand
    raise ConfigError(f"unknown scenario {ref!r}; shipped scenarios: {', '.join(scenario_names())}")


def load(ref: str) -> dict:
    path = resolve_path(ref)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    cfg.setdefault("name", path.stem)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


# validation -----------------------------------------------------------------------


def validate(cfg: dict) -> list[str]:
    """Every constraint violation in ``cfg``, in a fixed order; empty when valid.

    Pure: reads ``cfg`` only.
    """
    out: list[str] = []
    for key in ("topology", "problem", "schedule"):
        if not isinstance(cfg.get(key), dict):
            out.append(f"{key}: missing required table [{key}]")
    if out:
        return out
    if "seed" in cfg:
        try:
            rng_mod.check_seed(cfg["seed"])
        except (TypeError, ValueError) as exc:
            out.append(f"seed: {exc}")
    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        out.append("seeds: must be a nonempty list of integers")
    else:
        for s in seeds:
            try:
                rng_mod.check_seed(s)
            except (TypeError, ValueError) as exc:
                out.append(f"seeds: {exc}")
                break

    n = None
    try:
        n = build_coupling(cfg["topology"]).n_agents
    except (TopologyError, KeyError, TypeError, ValueError) as exc:
        out.append(f"topology: {_msg(exc)}")

    problem = None
    try:
        problem = build_problem(cfg["problem"], n if n is not None else cfg["topology"].get("n", 1))
    except (pb.ProblemError, KeyError, TypeError, ValueError) as exc:
        out.append(f"problem: {_msg(exc)}")

    sch = cfg["schedule"]
    params = None
    try:
        params = ScheduleParams(float(sch["lambda0"]), float(sch["v"]), float(sch["r"]),
                                float(sch.get("delta", 1e-4)), sch["T"])
    except (KeyError, TypeError, ValueError) as exc:
        out.append(f"schedule: {_msg(exc)}")

    pay = cfg.get("payment", {"mode": "constant", "C": 0.0})
    mode = pay.get("mode", "constant")
    if mode not in ("theoretical", "preset", "constant"):
        out.append(f"payment: unknown mode {mode!r}")
    if mode == "theoretical" and params is not None:
        for v in params.window_violations():
            out.append(f"schedule: {v}")
    if mode == "theoretical" and params is None and isinstance(sch.get("v"), (int, float)):
        if not 0.5 < sch["v"] < 2.0 / 3.0:
            out.append(f"schedule: v not in (1/2, 2/3): v={sch['v']}")
    if mode == "constant" and not float(pay.get("C", 0.0)) >= 0:
        out.append("payment: constant C must be nonnegative")
    if mode == "preset" and not float(pay.get("c0", 1e-6)) >= 0:
        out.append("payment: c0 must be nonnegative")
    if params is not None and cfg["problem"].get("kind") == "mean_estimation" and not params.lambda0 < 0.5:
        out.append(f"schedule: mean estimation needs lambda0 < 1/2, got {params.lambda0}")

    reward = cfg.get("reward", {})
    if reward.get("kind", "linear") not in ("linear", "sigmoid_like"):
        out.append(f"reward: unknown kind {reward.get('kind')!r}")

    if problem is not None and n is not None and problem.n_agents != n:
        out.append(f"problem: data for {problem.n_agents} agents but the topology has {n}")

    n_agents = n if n is not None else (problem.n_agents if problem is not None else None)
    try:
        pols = build_policies(cfg.get("policies", []), n_agents or 0, strict=n_agents is not None)
        if params is not None:
            for pol in pols:
                pol.check_horizon(params.T)
    except (StrategyError, KeyError, TypeError, ValueError) as exc:
        out.append(f"policies: {_msg(exc)}")

    run = cfg.get("run", {})
    if run.get("distance_target", "optimum") not in ("optimum", "deviated"):
        out.append("run: distance_target must be 'optimum' or 'deviated'")
    workers = run.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        out.append("run: workers must be a positive integer")
    return out


def _msg(exc) -> str:
    return str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)


# construction -----------------------------------------------------------------------


def build_coupling(spec: dict):
    kind = spec.get("kind", "ring")
    if kind == "ring":
        return build_ring(int(spec["n"]), float(spec["w"]))
    if kind == "graph":
        g = Graph.from_edges(int(spec["n"]), [tuple(e) for e in spec["edges"]])
        return build_from_graph(g, spec.get("weight_rule", "metropolis"), spec.get("w"))
    raise TopologyError(f"unknown topology kind {kind!r}")


def build_problem(spec: dict, n_agents: int) -> pb.ProblemInstance:
    """Problem from generator parameters (``seed``) or explicit per-agent data."""
    kind = spec.get("kind")
    dim = spec.get("dim")
    seed = int(spec.get("seed", 0))
    stochastic = bool(spec.get("stochastic", kind in ("mean_estimation", "huber")))
    if kind == "least_squares":
        if "targets" in spec:
            return pb.LeastSquares(np.array(spec["targets"], dtype=float), np.array(spec["covariance"], dtype=float),
                                   float(spec.get("label_noise_var", 0.0)), stochastic, int(spec.get("batch", 1)))
        return pb.make_least_squares(n_agents, int(dim), seed, eig_range=tuple(spec.get("eig_range", (0.5, 1.5))),
                                     target_scale=float(spec.get("target_scale", 1.0)),
                                     label_noise_var=float(spec.get("label_noise_var", 0.0)),
                                     stochastic=stochastic, batch=int(spec.get("batch", 1)))
    if kind == "mean_estimation":
        if "means" in spec:
            return pb.MeanEstimation(np.array(spec["means"], dtype=float), float(spec.get("sigma2", 1.0)), stochastic)
        return pb.make_mean_estimation(n_agents, int(dim), seed, sigma2=float(spec.get("sigma2", 1.0)),
                                       mean_scale=float(spec.get("mean_scale", 1.0)), stochastic=stochastic)
    if kind == "quadratic":
        if "hessians" in spec:
            return pb.Quadratic(np.array(spec["hessians"], dtype=float), np.array(spec["centers"], dtype=float),
                                float(spec.get("noise_std", 0.0)), stochastic)
        return pb.make_quadratic(n_agents, int(dim), seed, eig_range=tuple(spec.get("eig_range", (1.0, 2.0))),
                                 center_scale=float(spec.get("center_scale", 1.0)),
                                 noise_std=float(spec.get("noise_std", 0.0)), stochastic=stochastic)
    if kind == "huber":
        if "features" in spec:
            return pb.HuberRegression(np.array(spec["features"], dtype=float), np.array(spec["labels"], dtype=float),
                                      float(spec.get("kappa", 0.5)), stochastic, int(spec.get("batch", 1)))
        return pb.make_huber(n_agents, int(dim), seed, rows=int(spec.get("rows", 20)),
                             kappa=float(spec.get("kappa", 0.5)), stochastic=stochastic,
                             batch=int(spec.get("batch", 1)))
    raise pb.ProblemError(f"unknown problem kind {kind!r}")


def build_policies(blocks: list, n_agents: int, strict: bool = True) -> tuple:
    pols: list = [Truthful() for _ in range(n_agents)]
    seen = set()
    for block in blocks:
        agents = block.get("agents")
        if not isinstance(agents, list) or not agents:
            raise StrategyError("each policy block needs a nonempty 'agents' list")
        pol = policy_from_dict({k: v for k, v in block.items() if k != "agents"})
        for i in agents:
            if strict and not 0 <= int(i) < n_agents:
                raise StrategyError(f"policy names agent {i}, outside 0..{n_agents - 1}")
            if i in seen:
                raise StrategyError(f"agent {i} appears in two policy blocks")
            seen.add(i)
            if strict:
                pols[int(i)] = pol
    return tuple(pols)


def build_scenario(cfg: dict) -> Scenario:
    bad = validate(cfg)
    if bad:
        raise ConfigError(bad)
    W = build_coupling(cfg["topology"])
    problem = build_problem(cfg["problem"], W.n_agents)
    if problem.n_agents != W.n_agents:
        raise ConfigError(f"problem has {problem.n_agents} agents, topology {W.n_agents}")
    sch = cfg["schedule"]
    params = ScheduleParams(float(sch["lambda0"]), float(sch["v"]), float(sch["r"]),
                            float(sch.get("delta", 1e-4)), int(sch["T"]))
    reward = RewardFunction(cfg.get("reward", {}).get("kind", "linear"))
    pay = cfg.get("payment", {"mode": "constant", "C": 0.0})
    mode = pay.get("mode", "constant")
    if mode == "constant":
        payment = coefficient_schedule(float(pay.get("C", 0.0)), params, problem, W, reward)
    elif mode == "preset":
        payment = PaymentCoefficientSchedule.preset(params, float(pay.get("c0", 1e-6)))
    else:
        payment = coefficient_schedule("theoretical", params, problem, W, reward,
                                       per_agent_degree=bool(pay.get("per_agent_degree", False)))
    policies = build_policies(cfg.get("policies", []), W.n_agents)
    run = cfg.get("run", {})
    return Scenario(cfg.get("name", "scenario"), problem, W, params, policies, payment, reward,
                    tuple(cfg.get("seeds", [cfg.get("seed", 0)])),
                    distance_target=run.get("distance_target", "optimum"), config=cfg)


def load_scenario(ref: str) -> Scenario:
    return build_scenario(load(ref))


def output_root(default: str = "runs") -> Path:
    return Path(os.environ.get("STRATEGIC_DSGD_OUT", default))


# manifest ---------------------------------------------------------------------------


def flatten(cfg: dict, prefix: str = "config") -> dict:
    out = {}
    for k, v in cfg.items():
        key = f"{prefix}.{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key))
        else:
            out[key] = json.dumps(v, default=_json_default)
    return out


def unflatten(flat: dict, prefix: str = "config") -> dict:
    cfg: dict = {}
    for key, raw in flat.items():
        if not key.startswith(prefix + "."):
            continue
        parts = key[len(prefix) + 1:].split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = json.loads(raw)
    return cfg


def write_manifest(path, cfg: dict, seed: int, command: str, extra: dict | None = None) -> None:
    from . import __version__
    import scipy

    lines = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": str(seed),
        "version.strategic_dsgd": __version__,
        "version.numpy": np.__version__,
        "version.scipy": scipy.__version__,
        "version.python": sys.version.split()[0],
    }
    lines.update(extra or {})
    lines.update(flatten(cfg))
    with open(path, "w") as fh:
        for k, v in lines.items():
            fh.write(f"{k}={v}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                k, _, v = line.partition("=")
                out[k] = v
    return out


def config_from_manifest(path) -> tuple[dict, int]:
    """``(config, seed)`` recorded in a manifest; the hash is checked."""
    flat = read_manifest(path)
    cfg = unflatten(flat)
    if config_hash(cfg) != flat.get("config_hash"):
        raise ConfigError(f"manifest {path} does not match its config hash")
    return cfg, int(flat["seed"])


def dump_config(cfg: dict) -> str:
    """Canonical JSON text of a config, used for hashing and error reports."""
    return json.dumps(cfg, sort_keys=True, default=_json_default)

