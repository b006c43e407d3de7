"""Replay a parameter-sharing manipulation as a gradient manipulation.

Agent 0 broadcasts 1.5 * theta instead of theta.  The equivalent gradient
reports are reconstructed and replayed; the script prints how far the two
trajectories are apart.
"""

import numpy as np

from strategic_dsgd import engine as eng
from strategic_dsgd.problems import make_least_squares
from strategic_dsgd.topology import build_ring


def main():
    prob = make_least_squares(3, 4, 10, stochastic=True, label_noise_var=0.2)
    W = build_ring(3, 0.3)
    p = eng.ScheduleParams(0.1, 0.55, 0.51, 1e-4, 50)
    run_ = eng.simulate_shared_manipulation(prob, W, p, seed=0, agent=0, alpha_hat=lambda th: 1.5 * th)
    replay = eng.replay_as_gradient_manipulation(prob, W, run_)
    err_others = np.abs(replay[:, 1:] - run_.theta[:, 1:]).max()
    err_agent = np.abs(replay[:, 0] - run_.shared[:, 0]).max()
    print(f"max deviation, honest agents: {err_others:.3e}")
    print(f"max deviation, manipulator (vs shared values): {err_agent:.3e}")


if __name__ == "__main__":
    main()
