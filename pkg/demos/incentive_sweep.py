"""Net utility of a scaling agent with and without payments.

Runs the five-agent least-squares ring and prints the mean net utility of
agent 0 for each scaling factor under three payment schedules.
"""

import argparse

from strategic_dsgd import experiments as X
from strategic_dsgd.mechanism import PaymentCoefficientSchedule
from strategic_dsgd.strategy import Action


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    base = X.example1_scenario(a=1.0, T=args.T, payment="theoretical")
    seeds = list(range(args.seeds))
    grid = [Action(a) for a in (1.0, 1.5, 2.0, 3.0)]
    schedules = {
        "C=0": PaymentCoefficientSchedule.constant(0.0),
        "C=10": PaymentCoefficientSchedule.constant(10.0),
        "theoretical": base.payment,
    }
    print(f"{'schedule':>12} " + " ".join(f"a={act.a:<10g}" for act in grid))
    for label, sched in schedules.items():
        util = base.with_payment(sched).net_utilities(0, grid, seeds).mean(axis=1)
        print(f"{label:>12} " + " ".join(f"{u:<12.4g}" for u in util))


if __name__ == "__main__":
    main()
