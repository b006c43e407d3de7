import copy
import csv
import json

import pytest

from strategic_dsgd import config as cfgmod
from strategic_dsgd.cli import main

BASE = cfgmod.load("example1")


def _cfg(**changes):
    cfg = copy.deepcopy(BASE)
    for path, value in changes.items():
        node = cfg
        *head, last = path.split("__")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = value
    return cfg


def test_shipped_scenarios_validate():
    assert set(cfgmod.scenario_names()) >= {"example1", "example2", "groups", "strongly_convex",
                                           "general_convex", "star_noise"}
    for name in cfgmod.scenario_names():
        assert cfgmod.validate(cfgmod.load(name)) == [], name


def test_validate_reports_every_violation_in_order():
    cfg = _cfg(schedule__v=0.7, topology__w=0.6, reward__kind="exp")
    bad = cfgmod.validate(cfg)
    assert bad[0].startswith("topology:") and "diagonal weight nonpositive" in bad[0]
    assert "schedule: v not in (1/2, 2/3): v=0.7" in bad
    assert bad[-1] == "reward: unknown kind 'exp'"
    assert cfgmod.validate(cfg) == bad


def test_validate_examples():
    assert cfgmod.validate({}) == ["topology: missing required table [topology]",
                                   "problem: missing required table [problem]",
                                   "schedule: missing required table [schedule]"]
    star = _cfg(topology={"kind": "graph", "n": 6, "edges": [[0, k] for k in range(1, 6)],
                          "weight_rule": "uniform", "w": 0.2})
    assert any("degree-5" in m for m in cfgmod.validate(star))
    assert cfgmod.validate(_cfg(schedule__r=0.3)) == ["schedule: r not in (1-v, v): r=0.3, v=0.55"]
    assert cfgmod.validate(_cfg(seed=-1))[0].startswith("seed:")
    me = _cfg(problem={"kind": "mean_estimation", "dim": 2}, schedule__lambda0=0.6, payment={"mode": "constant"})
    assert any("lambda0 < 1/2" in m for m in cfgmod.validate(me))
    pol = _cfg(policies=[{"agents": [7], "kind": "fixed", "a": 2.0}])
    assert any(m.startswith("policies:") for m in cfgmod.validate(pol))
    sched = _cfg(policies=[{"agents": [0], "kind": "schedule", "a": [1.0, 2.0]}])
    assert any("horizon" in m for m in cfgmod.validate(sched))


def test_explicit_problem_data():
    cfg = _cfg(topology={"kind": "ring", "n": 3, "w": 0.3},
               problem={"kind": "mean_estimation", "means": [[0.0], [1.0], [2.0]], "stochastic": False},
               policies=[], payment={"mode": "constant", "C": 1.0})
    scen = cfgmod.build_scenario(cfg)
    assert scen.problem.global_optimum()[0] == pytest.approx(1.0)


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "manifest.txt"
    cfgmod.write_manifest(path, BASE, 3, "run")
    cfg, seed = cfgmod.config_from_manifest(path)
    assert cfg == BASE and seed == 3
    text = path.read_text().replace("config.schedule.T=10000", "config.schedule.T=10001")
    path.write_text(text)
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.config_from_manifest(path)


def _small(tmp_path, **changes):
    cfg = _cfg(schedule__T=200, **changes)
    lines = [f'name = "{cfg["name"]}"', f"seed = {cfg['seed']}", f"seeds = {cfg['seeds']}"]
    for table in ("topology", "problem", "schedule", "payment", "reward", "run"):
        lines.append(f"[{table}]")
        lines += [f"{k} = {json.dumps(v)}" for k, v in cfg[table].items()]
    for block in cfg.get("policies", []):
        lines.append("[[policies]]")
        lines += [f"{k} = {json.dumps(v)}" for k, v in block.items()]
    path = tmp_path / "small.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_cli_run_outputs_and_manifest_replay(tmp_path, capsys):
    toml = _small(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", str(toml), "--out", str(out1), "--dump-trajectory"]) == 0
    for f in ("metrics.csv", "ledger.csv", "summary.csv", "manifest.txt", "trajectory.csv",
              "plots/distance.svg", "plots/consensus.svg", "plots/payments.svg"):
        assert (out1 / f).exists(), f
    assert main(["run", "--manifest", str(out1 / "manifest.txt"), "--out", str(out2), "--no-plots"]) == 0
    for f in ("metrics.csv", "ledger.csv", "summary.csv"):
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes()
    rows = list(csv.DictReader(open(out1 / "ledger.csv")))
    assert len(rows) == 201 * 5 * 2


def test_cli_exit_codes(tmp_path, capsys):
    bad = _small(tmp_path, schedule__v=0.7)
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "x")]) == 2
    rep = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rep["kind"] == "invalid_config" and rep["exit_code"] == 2
    assert "schedule: v not in (1/2, 2/3): v=0.7" in rep["violations"]

    diverge = _small(tmp_path, schedule__lambda0=50.0, payment={"mode": "constant", "C": 0.0})
    assert main(["run", "--scenario", str(diverge), "--out", str(tmp_path / "y")]) == 3
    rep = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rep["kind"] == "divergence"

    ok = _small(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--scenario", str(ok), "--out", str(blocker / "sub")]) == 4
    rep = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rep["kind"] == "io"

    assert main(["run", "--scenario", "no_such_scenario"]) == 2


def test_cli_sweep_and_checks(tmp_path, capsys):
    toml = _small(tmp_path)
    assert main(["sweep", "--scenario", str(toml), "--a", "1,2", "--C", "0,theoretical", "--seeds", "2",
                 "--out", str(tmp_path / "sw")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    assert len(rows) == 4
    assert main(["ic-gap", "--scenario", str(toml), "--a", "2", "--seeds", "2", "--horizons", "50,200"]) == 0
    assert "T=200" in capsys.readouterr().out
    assert main(["check-example1", "--T", "300"]) == 0
    assert main(["check-example2", "--T", "300", "--seeds", "2"]) == 0


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("STRATEGIC_DSGD_OUT", str(tmp_path))
    assert cfgmod.output_root() == tmp_path
