
import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from strategic_dsgd.metrics import (MetricsError, RewardFunction, RunMetrics, consensus_error, convergence_slope,
                                    net_utility, truthfulness_trace, write_metrics_csv, write_summary_csv)


def test_reward_values():
    assert RewardFunction()(2.5) == -2.5
    assert RewardFunction("sigmoid_like")(1.0) == pytest.approx(0.7310585786300049, rel=1e-14)
    with pytest.raises(MetricsError):
        RewardFunction("sigmoid_like")(0.0)
    with pytest.raises(MetricsError):
        RewardFunction("exp")


def test_sigmoid_lipschitz_against_arbitrary_precision():
    mpmath.mp.dps = 30
    deriv = lambda u: u * u * mpmath.e ** (-u) / (1 + mpmath.e ** (-u)) ** 2
    u_star = mpmath.findroot(lambda u: mpmath.diff(deriv, u), 2.4)
    assert RewardFunction("sigmoid_like").lipschitz == pytest.approx(float(deriv(u_star)), rel=1e-9)
    assert RewardFunction().lipschitz == 1.0


def test_net_utility_example():
    assert net_utility(RewardFunction(), 2.0, [1.0, -0.5]) == -2.5
    assert net_utility(RewardFunction(), 0.0, [1e16, 1.0, -1e16]) == -1.0


@given(st.floats(0.1, 3.0), st.floats(1e-3, 1e3))
def test_slope_recovers_power_law(k, c):
    t = np.arange(1, 10_001, dtype=float)
    y = c * (t + 1.0) ** (-k)
    assert convergence_slope(t, y, (100, 10_000)) == pytest.approx(-k, abs=1e-9)


def test_slope_window_checks():
    t = np.arange(1, 100.0)
    with pytest.raises(MetricsError):
        convergence_slope(t, t, (10, 50))
    with pytest.raises(MetricsError):
        convergence_slope(t, -t, (1, 90))


def test_consensus_and_trace():
    th = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert consensus_error(th) == 2.0
    reports = np.array([[[3.0, 4.0]], [[0.0, 0.0]]])
    grads = np.zeros_like(reports)
    assert list(truthfulness_trace(reports, grads, 0)) == [5.0, 0.0]


def test_run_metrics_outputs(tmp_path):
    T, n = 3, 2
    m = RunMetrics(4, np.ones((T + 1, n)), np.ones((T + 1, n)), np.ones(T + 1),
                   np.array([[1.0, -1.0]] * (T + 1)), np.array([0.5, 0.25]))
    assert list(m.payment_totals) == [4.0, -4.0]
    assert list(m.utilities) == [-4.5, 3.75]
    write_metrics_csv(tmp_path / "m.csv", [m])
    write_summary_csv(tmp_path / "s.csv", [m])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "seed,t,agent,distance,objective_gap,consensus_error,payment"
    assert len(lines) == 1 + (T + 1) * n
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + n
