import numpy as np
import pytest

from strategic_dsgd import experiments as X
from strategic_dsgd.mechanism import PaymentCoefficientSchedule
from strategic_dsgd.metrics import cumulative_gain_curve, ic_gap
from strategic_dsgd.strategy import TRUTHFUL, Action, BestResponse


def test_net_utilities_reads_several_horizons_from_one_run():
    scen = X.example1_scenario(T=200, payment=1.0)
    acts = [Action(2.0), TRUTHFUL]
    multi = scen.net_utilities(0, acts, [0, 1], horizons=[50, 200])
    for k, h in enumerate([50, 200]):
        single = scen.with_horizon(h).net_utilities(0, acts, [0, 1])
        assert np.allclose(multi[k], single, rtol=1e-12, atol=1e-12)


def test_ic_gap_is_paired_difference():
    scen = X.example1_scenario(T=100, payment=0.0)
    u = scen.net_utilities(0, [Action(2.0), TRUTHFUL], [0, 1, 2])
    assert ic_gap(scen, 0, Action(2.0), [0, 1, 2]) == pytest.approx(float((u[0] - u[1]).mean()), rel=1e-12)
    curve = cumulative_gain_curve(scen, 0, Action(2.0), [10, 100], [0])
    assert [h for h, _ in curve] == [10, 100]


def test_run_metrics_budget_and_shapes():
    scen = X.example1_scenario(T=300, payment="theoretical", seeds=(0, 1))
    runs, ledgers = scen.run_metrics()
    assert len(runs) == 2
    for r, led in zip(runs, ledgers):
        assert r.distance.shape == (301, 5)
        assert all(led.budget_residual(t) == 0.0 for t in range(301))
        assert np.allclose(r.payments.sum(axis=1), 0.0, atol=1e-9 * np.abs(r.payments).max())


def test_resolve_best_response_prefers_truth_with_payments():
    base = X.example1_scenario(a=1.0, T=300, payment=10.0)
    br = BestResponse((1.0, 2.0, 3.0))
    scen = X.group_scenario(base, [0], br)
    assert scen.resolve([0, 1]).policies[0].action_at(0).is_truthful
    free = scen.with_payment(PaymentCoefficientSchedule.constant(0.0)).resolve([0, 1])
    assert free.policies[0].action_at(0).a == 3.0


def test_utility_sweep_cells():
    base = X.example1_scenario(a=2.0, T=200)
    cells = X.utility_sweep(base, [1.0, 2.0], [0.0], [0.0, 5.0], seeds=[0, 1])
    assert [(c.a, c.C) for c in cells] == [(1.0, "0.0"), (1.0, "5.0"), (2.0, "0.0"), (2.0, "5.0")]
    assert all(np.isfinite(c.mean) and c.stderr >= 0 for c in cells)


def test_threeway_comparison_keys():
    base = X.example1_scenario(a=1.0, T=200, payment=10.0)
    scen = X.group_scenario(base, [0], BestResponse((1.0, 3.0)))
    out = X.threeway_comparison(scen, seeds=[0])
    assert set(out) == {"truthful", "mechanism", "no_payment", "actions"}
    assert out["actions"]["mechanism"][0].is_truthful
    assert out["actions"]["no_payment"][0].a == 3.0
    assert out["no_payment"][-1] > out["truthful"][-1]


def test_split_groups_deterministic():
    assert X.split_groups(10, 3, 5) == X.split_groups(10, 3, 5)
    assert len(set(X.split_groups(10, 3, 5))) == 3


def test_payment_decay_keys():
    out = X.payment_decay(seeds=(0,), T=1000, early=(10, 100), late=(500, 1000))
    assert out["late_mean"] < out["early_mean"]
