import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from strategic_dsgd.engine import ScheduleParams
from strategic_dsgd.mechanism import (MechanismError, PairView, PaymentCoefficientSchedule, PaymentLedger,
                                      coefficient, coefficient_table, cross_verify, pairwise_payment,
                                      second_difference, settle_round)
from strategic_dsgd.topology import Graph, build_from_graph, build_ring, star_graph

from oracles import theoretical_coefficient_mp

P = ScheduleParams(0.1, 0.6, 0.5, 1e-4, 100)


def test_second_difference_examples():
    assert second_difference([3.0, 0.0], [1.0, 0.0], [0.0, 0.0]) == 1.0
    assert second_difference([2.0], [1.0], [0.0]) == 0.0
    with pytest.raises(MechanismError):
        second_difference([1.0], [1.0, 2.0], [0.0])


def test_pairwise_payment_examples():
    assert pairwise_payment(0.5, 0.2, 10.0) == pytest.approx(3.0)
    assert pairwise_payment(0.2, 0.5, 10.0) == pytest.approx(-3.0)
    with pytest.raises(MechanismError):
        pairwise_payment(-0.1, 0.2, 1.0)
    with pytest.raises(MechanismError):
        pairwise_payment(0.1, 0.2, -1.0)


def test_preset_coefficient_frozen():
    p = ScheduleParams(0.1, 0.55, 0.51, 1e-4, 10)
    s = PaymentCoefficientSchedule.preset(p, c0=1e-6)
    assert coefficient(s, 0) == pytest.approx(100.0, rel=1e-12)
    t = 99
    assert coefficient(s, t) == pytest.approx(1e-6 * 100 ** (2 * 0.55 - 2 * 0.51) / 1e-8, rel=1e-12)
    assert coefficient(s, 10**6) > 0


def test_theoretical_coefficient_against_arbitrary_precision():
    s = PaymentCoefficientSchedule.theoretical(P, L_R=1.0, H=1.0, rho=0.5, min_deg=2)
    frozen = 1033820.268162691
    assert coefficient(s, 0) == pytest.approx(frozen, rel=1e-12)
    for t in (0, 1, 7, 50, 99):
        ref = float(theoretical_coefficient_mp(t, T=100, H=1.0, lambda0=0.1, rho=0.5, v=0.6, r=0.5, delta=1e-4,
                                               L_R=1.0, deg=2))
        assert coefficient(s, t) == pytest.approx(ref, rel=1e-10)
    assert coefficient(s, 100) == 0.0 and coefficient(s, 150) == 0.0


@given(st.integers(10, 5000), st.floats(0.51, 0.66), st.floats(0.1, 4.0), st.floats(0.0, 0.95))
def test_theoretical_coefficient_property(T, v, H, rho):
    r = (1 - v + v) / 2
    p = ScheduleParams(0.05, v, r, 1e-3, T)
    s = PaymentCoefficientSchedule.theoretical(p, L_R=1.0, H=H, rho=rho, min_deg=2)
    for t in (0, T // 2, T - 1):
        try:
            c = coefficient(s, t)
        except OverflowError:
            continue
        ref = float(theoretical_coefficient_mp(t, T=T, H=H, lambda0=0.05, rho=rho, v=v, r=r, delta=1e-3,
                                               L_R=1.0, deg=2))
        assert c == pytest.approx(ref, rel=1e-9)


def test_theoretical_coefficient_overflow_is_reported():
    p = ScheduleParams(3.0, 0.55, 0.5, 1e-4, 100)
    s = PaymentCoefficientSchedule.theoretical(p, L_R=1.0, H=50.0, rho=0.9, min_deg=1)
    with pytest.raises(OverflowError):
        coefficient(s, 0)


def test_theoretical_window_violations():
    with pytest.raises(MechanismError, match="v not in"):
        PaymentCoefficientSchedule.theoretical(ScheduleParams(0.1, 0.7, 0.5, 1e-4, 10), L_R=1, H=1, rho=0.5,
                                               min_deg=2)
    with pytest.raises(MechanismError, match="r not in"):
        PaymentCoefficientSchedule.theoretical(ScheduleParams(0.1, 0.6, 0.3, 1e-4, 10), L_R=1, H=1, rho=0.5,
                                               min_deg=2)


def test_per_edge_degree_table():
    W = build_from_graph(star_graph(4), "uniform", 0.2)
    s = PaymentCoefficientSchedule.theoretical(P, L_R=1.0, H=1.0, rho=W.rho, min_deg=1, per_agent_degree=True)
    tab = coefficient_table(s, 100, W.graph)
    assert tab.shape == (101, 3)
    assert np.allclose(tab[:, 0], [coefficient(s, t, 1) for t in range(101)])


def test_settle_round_example():
    g = Graph.from_edges(2, [(0, 1)])
    win = np.array([[[0.0], [1.0], [3.0]], [[0.0], [1.0], [2.0]]])
    st_ = settle_round(0, win, g, 2.0)
    assert st_.transfer(0, 1) == 2.0 and st_.transfer(1, 0) == -2.0
    assert list(st_.totals()) == [2.0, -2.0]
    with pytest.raises(KeyError):
        settle_round(0, np.zeros((3, 3, 1)), Graph.from_edges(3, [(0, 1), (1, 2)]), 1.0).transfer(0, 2)
    bad = win.copy()
    bad[0, 1, 0] = np.nan
    with pytest.raises(MechanismError):
        settle_round(0, bad, g, 1.0)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.integers(3, 8), st.integers(1, 4), st.integers(0, 10**6), st.floats(0, 1e8))
def test_round_budget_balance_and_antisymmetry(n, dim, seed, c):
    W = build_ring(n, 0.25)
    win = np.random.default_rng(seed).standard_normal((n, 3, dim)) * 10.0 ** np.random.default_rng(seed).integers(-3, 4)
    st_ = settle_round(0, win, W.graph, c)
    for i, j in W.graph.edges:
        assert st_.transfer(i, j) + st_.transfer(j, i) == 0.0
    entries = [Fraction(st_.transfer(i, j)) for i in range(n) for j in W.graph.neighbors(i)]
    assert sum(entries) == 0
    # per-agent totals are each rounded once, so their sum is zero to within rounding
    scale = float(np.abs(st_.transfers).sum())
    assert abs(math.fsum(st_.totals())) <= n * np.finfo(float).eps * scale


@given(st.integers(3, 6), st.integers(0, 10**6), st.floats(1e-3, 1e3), st.floats(0.0, 10.0))
def test_transfers_scale_quadratically_with_trajectory(n, seed, s, c):
    W = build_ring(n, 0.3)
    win = np.random.default_rng(seed).standard_normal((n, 3, 2))
    a = settle_round(0, win, W.graph, c).transfers
    b = settle_round(0, s * win, W.graph, c).transfers
    assert np.allclose(b, s * s * a, rtol=1e-9, atol=1e-12 * max(1.0, s * s * c))


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1e3))
def test_payment_monotone_in_own_difference(d_lo, extra, dj, c):
    assert pairwise_payment(d_lo + extra, dj, c) >= pairwise_payment(d_lo, dj, c)


def test_ledger_totals_and_residuals():
    W = build_ring(5, 0.3)
    deltas = np.random.default_rng(0).random((20, 5))
    led = PaymentLedger.from_deltas(W.graph, deltas, PaymentCoefficientSchedule.constant(3.0))
    assert all(led.budget_residual(t) == 0.0 for t in range(20))
    tot = led.totals()
    assert tot.shape == (20, 5)
    i = 2
    expected = math.fsum(3.0 * (deltas[t, i] - deltas[t, j]) for t in range(20) for j in (1, 3))
    assert led.total_payment(i) == pytest.approx(expected, rel=1e-13)
    assert led.total_payment(i, upto=0) == pytest.approx(math.fsum(3.0 * (deltas[0, i] - deltas[0, j]) for j in (1, 3)))
    with pytest.raises(MechanismError):
        PaymentLedger(W.graph, -deltas, np.ones(20))


def test_ledger_csv_has_both_directions(tmp_path):
    W = build_ring(3, 0.3)
    led = PaymentLedger.from_deltas(W.graph, np.random.default_rng(1).random((4, 3)),
                                    PaymentCoefficientSchedule.constant(2.0))
    path = tmp_path / "ledger.csv"
    led.write_csv(path, seed=7)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 4 * 3 * 2
    by = {(r["t"], r["i"], r["j"]): float(r["transfer"]) for r in rows}
    for (t, i, j), x in by.items():
        assert by[(t, j, i)] == -x
    assert rows[0]["seed"] == "7"


def _win(seed):
    return tuple(np.random.default_rng(seed).standard_normal((3, 2)))


def test_cross_verify_cases():
    a, b = _win(1), _win(2)
    assert cross_verify(PairView(a, b), PairView(b, a), 5.0)
    good = PairView(a, b)
    lying = PairView(b, a, reported_own=0.0)
    assert not cross_verify(good, lying, 5.0)
    tampered = (a[0], a[1] + 1e-9, a[2])
    assert not cross_verify(PairView(a, b), PairView(b, tampered), 5.0)
