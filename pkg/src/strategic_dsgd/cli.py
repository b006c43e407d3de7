"""Command-line entry point.

Subcommands: ``run``, ``sweep``, ``check-example1``, ``check-example2``,
``slopes`` and ``ic-gap``.  Exit status is 0 on success, 2 for an invalid
configuration, 3 when a run diverges and 4 on I/O failure; failures also
print a JSON error report on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import engine as eng
from . import experiments as X
from .mechanism import write_ledger_rows
from .metrics import cumulative_gain_curve, ic_gap, write_metrics_csv, write_summary_csv
from .plots import line_chart
from .strategy import Action, StrategyError

EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 2, 3, 4

log = logging.getLogger("strategic_dsgd")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _c_specs(text: str) -> list:
    out = []
    for x in text.split(","):
        x = x.strip()
        if not x:
            continue
        out.append(x if x in ("theoretical", "preset") else float(x))
    return out


def _seed_list(args, scenario) -> list[int]:
    if getattr(args, "seeds", None):
        return list(range(args.seeds))
    return list(scenario.seeds)


def _outdir(args, name: str, seed) -> Path:
    if args.out:
        return Path(args.out)
    return cfgmod.output_root() / f"{name}-seed{seed}"


# subcommands ----------------------------------------------------------------------


def cmd_run(args) -> int:
    if args.manifest:
        cfg, seed = cfgmod.config_from_manifest(args.manifest)
    else:
        cfg = cfgmod.load(args.scenario)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    bad = cfgmod.validate({**cfg, "seed": seed})
    if bad:
        raise cfgmod.ConfigError(bad)
    scen = cfgmod.build_scenario(cfg)
    out = _outdir(args, scen.name, seed)
    runs, ledgers = scen.run_metrics([seed])
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", runs)
    with open(out / "ledger.csv", "w", newline="") as fh:
        write_ledger_rows(csv.writer(fh, lineterminator="\n"), list(zip([seed], ledgers)))
    write_summary_csv(out / "summary.csv", runs)
    run_opts = cfg.get("run", {})
    if args.dump_trajectory or run_opts.get("dump_trajectory", False):
        _dump_trajectory(scen, seed, out / "trajectory.csv")
    if run_opts.get("plots", True) and not args.no_plots:
        _run_plots(runs[0], out / "plots")
    cfgmod.write_manifest(out / "manifest.txt", cfg, seed, "run")
    print(f"wrote {out}")
    return 0


def _dump_trajectory(scen, seed, path):
    scen = scen.resolve([seed])
    traj = eng.TrajectoryRecorder()
    scen.simulate([eng.Row(seed, scen.policies)], [traj])
    theta = traj.theta[:, 0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent"] + [f"x{k}" for k in range(theta.shape[-1])])
        for t in range(theta.shape[0]):
            for i in range(theta.shape[1]):
                w.writerow([t, i] + [repr(float(x)) for x in theta[t, i]])


def _run_plots(m, folder: Path):
    folder.mkdir(parents=True, exist_ok=True)
    t = np.arange(1, m.distance.shape[0] + 1)
    n = m.distance.shape[1]
    line_chart(folder / "distance.svg", {f"agent {i}": (t, m.distance[:, i]) for i in range(n)},
               "squared distance to target", "t", "distance", logx=True, logy=True)
    line_chart(folder / "consensus.svg", {"consensus": (t, m.consensus)}, "consensus error", "t", "error",
               logx=True, logy=True)
    cum = np.cumsum(m.payments, axis=0)
    line_chart(folder / "payments.svg", {f"agent {i}": (t, cum[:, i]) for i in range(n)},
               "cumulative net payment", "t", "payment", logx=True)


def _sweep_cell(args):
    scen, a, b_grid, c_grid, seeds = args
    return X.utility_sweep(scen, [a], b_grid, c_grid, seeds)


def cmd_sweep(args) -> int:
    cfg = cfgmod.load(args.scenario)
    scen = cfgmod.build_scenario(cfg)
    if not scen.deviators:
        raise cfgmod.ConfigError("sweep needs a scenario with at least one manipulating agent")
    seeds = _seed_list(args, scen)
    a_grid, b_grid, c_grid = _floats(args.a), _floats(args.b), _c_specs(args.C)
    if not a_grid or not b_grid or not c_grid:
        raise cfgmod.ConfigError("sweep grids must be nonempty")
    for a in a_grid:
        Action(a)
    workers = args.workers or cfg.get("run", {}).get("workers", 1)
    jobs = [(scen, a, b_grid, c_grid, seeds) for a in a_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_sweep_cell, jobs))
    else:
        parts = [_sweep_cell(j) for j in jobs]
    cells = [c for part in parts for c in part]
    out = Path(args.out) if args.out else cfgmod.output_root() / f"{scen.name}-sweep"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "C", "mean_utility", "stderr", "seeds"])
        for c in cells:
            w.writerow([repr(c.a), repr(c.b), c.C, repr(c.mean), repr(c.stderr), len(seeds)])
    (out / "plots").mkdir(exist_ok=True)
    for label in dict.fromkeys(c.C for c in cells):
        series = {}
        for b in b_grid:
            sel = [c for c in cells if c.C == label and c.b == b]
            series[f"b={b:g}"] = ([c.a for c in sel], [c.mean for c in sel])
        line_chart(out / "plots" / f"sweep_C_{label}.svg", series, f"group net utility, C = {label}",
                   "a", "mean net utility")
    cfgmod.write_manifest(out / "manifest.txt", cfg, seeds[0], "sweep",
                          {"sweep.a": args.a, "sweep.b": args.b, "sweep.C": args.C, "sweep.seeds": len(seeds)})
    for c in cells:
        print(f"a={c.a:g} b={c.b:g} C={c.C} utility={c.mean:.6g} se={c.stderr:.3g}")
    return 0


def cmd_example1(args) -> int:
    rep = X.example1_check(args.N, args.dim, args.a, tuple(range(args.seeds)), args.T)
    print(f"max relative distance to deviated optimum: {rep['max_relative_distance']:.6g}")
    print(f"deviator cost f_i: {rep['f_i_mean']:.6g} (closed form {rep['f_i_closed_form']:.6g})")
    print(f"global cost increase: {rep['F_increase_mean']:.6g} (closed form {rep['F_increase_closed_form']:.6g}, "
          f"relative error {rep['F_increase_relative_error']:.3g})")
    return 0


def cmd_example2(args) -> int:
    rep = X.example2_check(args.N, args.dim, args.a, args.sigma2, tuple(range(args.seeds)), args.T)
    print(f"truthful deviator MSE: {rep['truthful_mse']:.6g} (limit {rep['spread']:.6g})")
    print(f"MSE ratio: {rep['mse_ratio']:.6g} (closed form (N/(a+N-1))^2 = {rep['mse_ratio_closed_form']:.6g})")
    print(f"global increase: {rep['global_increase']:.6g} (closed form {rep['global_increase_closed_form']:.6g})")
    return 0


def cmd_slopes(args) -> int:
    seeds = tuple(range(args.seeds))
    if args.which in ("strong", "both"):
        rep = X.strongly_convex_slope(seeds, T=args.T, window=(args.T // 100, args.T))
        print(f"strongly convex: slope {rep['slope']:.4f} (step-size exponent {-rep['predicted']:.2f})")
    if args.which in ("convex", "both"):
        hs = tuple(args.T // 10 ** k for k in (2, 1, 0))
        rep = X.general_convex_slope(seeds, horizons=hs)
        print(f"general convex: running-average gap slope {rep['slope']:.4f} (bound {rep['bound']:.2f} + 0.15)")
    return 0


def cmd_ic_gap(args) -> int:
    scen = cfgmod.load_scenario(args.scenario)
    seeds = _seed_list(args, scen)
    act = Action(args.a, args.b, args.noise_law)
    if args.horizons:
        for h, g in cumulative_gain_curve(scen, args.agent, act, _ints(args.horizons), seeds):
            print(f"T={h} gap={g:.6g}")
    else:
        print(f"gap={ic_gap(scen, args.agent, act, seeds):.6g}")
    return 0


# plumbing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="strategic-dsgd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write CSV outputs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="shipped scenario name or path to a TOML file")
    src.add_argument("--manifest", help="re-run from a manifest written by a previous run")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: $STRATEGIC_DSGD_OUT/<name>-seed<seed>)")
    p.add_argument("--dump-trajectory", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="net utility of the manipulating group over (a, b, C)")
    p.add_argument("--scenario", required=True)
    p.add_argument("--a", default="1,1.5,2,3")
    p.add_argument("--b", default="0")
    p.add_argument("--C", default="0,theoretical")
    p.add_argument("--seeds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-example1", help="least-squares deviated optimum and cost increase")
    p.add_argument("--a", type=float, default=3.0)
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_example1)

    p = sub.add_parser("check-example2", help="mean-estimation error limits")
    p.add_argument("--a", type=float, default=3.0)
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--T", type=int, default=100_000)
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_example2)

    p = sub.add_parser("slopes", help="fitted convergence rates")
    p.add_argument("--which", choices=("strong", "convex", "both"), default="both")
    p.add_argument("--T", type=int, default=100_000)
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_slopes)

    p = sub.add_parser("ic-gap", help="utility gain of a unilateral deviation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--agent", type=int, default=0)
    p.add_argument("--a", type=float, default=3.0)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--noise-law", default="laplace", choices=("laplace", "gaussian"))
    p.add_argument("--seeds", type=int)
    p.add_argument("--horizons", help="comma-separated increasing horizons for a gain curve")
    p.set_defaults(func=cmd_ic_gap)
    return ap


def _report(kind: str, code: int, message: str, **extra) -> None:
    rep = {"status": "error", "kind": kind, "exit_code": code, "message": message}
    rep.update(extra)
    print(json.dumps(rep, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        _report("invalid_config", EXIT_CONFIG, str(exc), violations=exc.violations)
        return EXIT_CONFIG
    except (StrategyError, ValueError, OverflowError) as exc:
        _report("invalid_config", EXIT_CONFIG, str(exc), violations=[str(exc)])
        return EXIT_CONFIG
    except eng.DivergenceError as exc:
        _report("divergence", EXIT_DIVERGED, str(exc), round=exc.t, row=exc.row, agent=exc.agent)
        return EXIT_DIVERGED
    except OSError as exc:
        _report("io", EXIT_IO, str(exc), path=getattr(exc, "filename", None))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
