"""Per-round transfers of a short run with one noisy agent.

Prints the first rounds of the ledger and the balance check for each round.
"""

import math

from strategic_dsgd import config as cfgmod


def main():
    scen = cfgmod.load_scenario("star_noise").with_horizon(20)
    runs, ledgers = scen.run_metrics([0])
    led = ledgers[0]
    for t in range(5):
        totals = led.totals()[t]
        print(f"t={t} residual={led.budget_residual(t)!r} "
              + " ".join(f"P{i}={x:+.3e}" for i, x in enumerate(totals)))
    net = runs[0].utilities
    print("net utilities:", " ".join(f"{u:.4g}" for u in net))
    every = [x for t in range(led.T + 1) for _, _, x in led.directed(t)]
    print("exact sum of all transfers:", math.fsum(every))


if __name__ == "__main__":
    main()
