"""Jump chains, reversibility, resistance, hitting times and simulation."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from spiderlab import (ConfigRule, FiniteNetwork, FirstLegHeight, MidpointHeight, SpiderWalk,
                       build_spider_network, effective_resistance, generate, hitting_times,
                       jump_chain, materialize_ball, mc_speed, reversible_measure, simulate)
from spiderlab.chain import (MoveTable, first_step_solve, resistance_to_boundary, substream,
                             traces_to_csv)
from spiderlab.errors import (AbsorbingStateError, NonReversibleError, ParameterError,
                              UnreachableError)

LINE = generate("line", p=0.7, q=0.3)


def path_network(conductances):
    """Symmetric path 0 - 1 - ... - n with the given edge conductances."""
    n = len(conductances) + 1
    rates = {}
    for i, c in enumerate(conductances):
        rates[(i, i + 1)] = c
        rates[(i + 1, i)] = c
    return FiniteNetwork.from_rates(list(range(n)), rates)


def test_jump_chain_rows_sum_to_one():
    jc = jump_chain(materialize_ball(LINE, 0, 5))
    net = jc.network
    sums = np.asarray(jc.P.sum(axis=1)).ravel()
    assert np.allclose(sums[net.interior], 1.0)
    assert jc.p(0, 1) == pytest.approx(0.7)


def test_absorbing_interior_state_is_reported():
    net = FiniteNetwork.from_rates(["a", "b", "c"], {(0, 1): 1.0, (1, 0): 1.0})
    with pytest.raises(AbsorbingStateError):
        jump_chain(net)


def test_detailed_balance_line_and_tree():
    rev = reversible_measure(materialize_ball(LINE, 0, 8))
    assert rev.balance_residual < 1e-12
    # mu(x) = (p/q)^x relative to the root
    net = rev.network
    assert rev.mu[net.idx(3)] == pytest.approx((0.7 / 0.3) ** 3, rel=1e-12)
    spn = build_spider_network(generate("tree_with_end", M=3, a="1/2"), ConfigRule.bounded_span(2, 3),
                               ((0, ()), (1, ())), 6)
    assert reversible_measure(spn.network).balance_residual < 1e-12


def test_non_reversible_cycle_witness():
    # a rotation on three states
    net = FiniteNetwork.from_rates(["a", "b", "c"], {(0, 1): 2.0, (1, 2): 2.0, (2, 0): 2.0,
                                                     (1, 0): 1.0, (2, 1): 1.0, (0, 2): 1.0})
    with pytest.raises(NonReversibleError) as info:
        reversible_measure(net)
    cycle = info.value.cycle
    assert cycle[0] == cycle[-1] and len(set(cycle)) == 3


def test_resistance_series_golden():
    net = path_network([1.0, 0.5, 0.25])
    assert effective_resistance(net, 0, [3]) == pytest.approx(7.0, abs=1e-12)


def test_resistance_parallel_golden():
    # two branches 0-1-3 (R = 1 + 1) and 0-2-3 (R = 2 + 2) in parallel: 4/3
    rates = {(0, 1): 1.0, (1, 3): 1.0, (0, 2): 0.5, (2, 3): 0.5}
    rates.update({(j, i): c for (i, j), c in list(rates.items())})
    net = FiniteNetwork.from_rates([0, 1, 2, 3], rates)
    for method in ("cg", "lu", "auto"):
        assert abs(effective_resistance(net, 0, [3], method=method) - 4 / 3) < 1e-12


def test_resistance_multiple_sinks():
    net = path_network([1.0, 1.0, 1.0, 1.0])
    # from the middle to both ends: 2 || 2
    assert effective_resistance(net, 2, [0, 4]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ParameterError):
        effective_resistance(net, 2, [2])


def test_resistance_disconnected_sink():
    net = FiniteNetwork.from_rates([0, 1, 2], {(0, 1): 1.0, (1, 0): 1.0})
    with pytest.raises(UnreachableError):
        effective_resistance(net, 0, [2])


def test_resistance_to_boundary_rooted_tree():
    # unit conductances, 3 * 2^j parallel edges at level j: R = sum_j 1 / (3 * 2^j)
    net = materialize_ball(generate("rooted_tree", M=3), (), 5)
    r = resistance_to_boundary(net)
    expect = sum(1 / (3 * 2 ** j) for j in range(5))
    assert r == pytest.approx(expect, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=3, max_size=8), st.integers(0, 6), st.floats(1.0, 5.0))
def test_rayleigh_monotonicity(cs, where, factor):
    where = where % len(cs)
    base = effective_resistance(path_network(cs), 0, [len(cs)])
    bigger = list(cs)
    bigger[where] *= factor
    # raising a conductance can only lower the resistance
    assert effective_resistance(path_network(bigger), 0, [len(cs)]) <= base * (1 + 1e-12)
    assert base == pytest.approx(sum(1 / c for c in cs), rel=1e-10)


def test_hitting_times_birth_death_closed_form():
    # symmetric walk on {0..n}, reflecting at n: E_x[T_0] = x (2n - x)
    n = 10
    net = path_network([1.0] * n)
    rep = hitting_times(net, [0])
    for x in range(n + 1):
        assert rep.at(x) == pytest.approx(x * (2 * n - x), rel=1e-12)
    assert rep.residual < 1e-10 and not rep.truncated


def test_hitting_times_continuous_time():
    # doubling every rate keeps the jump chain and halves continuous time
    slow = hitting_times(path_network([1.0] * 6), [0])
    fast = hitting_times(path_network([2.0] * 6), [0])
    for x in range(7):
        assert fast.at(x) == pytest.approx(slow.at(x), rel=1e-12)
        assert fast.at(x, continuous=True) == pytest.approx(slow.at(x, continuous=True) / 2, rel=1e-12)


def test_return_times_match_stationary_law():
    net = path_network([1.0, 2.0, 3.0])
    rep = hitting_times(net, [1], mode="return")
    rev = reversible_measure(net)
    pi = rev.pi / rev.pi.sum()
    assert rep.at(1) == pytest.approx(1 / pi[1], rel=1e-12)


def test_truncated_flag():
    rep = hitting_times(materialize_ball(LINE, 0, 5), [0])
    assert rep.truncated


def test_unreachable_target():
    P = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1.0]])
    with pytest.raises(UnreachableError):
        first_step_solve(P, np.array([0]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.2, 5.0), min_size=3, max_size=10))
def test_first_step_residual(cs):
    net = path_network(cs)
    jc = jump_chain(net)
    steps, time, res = first_step_solve(jc.P, np.array([0]), jc.holding)
    assert res < 1e-10
    free = np.arange(1, net.n)
    lhs = steps[free] - (jc.P @ steps)[free]
    assert np.allclose(lhs, 1.0, atol=1e-9)


def test_substreams_are_independent_and_reproducible():
    a = substream(5, 0).random(4)
    assert np.array_equal(a, substream(5, 0).random(4))
    assert not np.array_equal(a, substream(5, 1).random(4))
    with pytest.raises(ParameterError):
        substream(None)


def test_simulate_byte_exact_reproducibility():
    w = SpiderWalk(LINE, ConfigRule.bounded_span(2, 3, left_leg=True))
    a = simulate(w, (0, 1), 500, seed=11, replica=2, height=FirstLegHeight(LINE))
    b = simulate(w, (0, 1), 500, seed=11, replica=2, height=FirstLegHeight(LINE))
    assert traces_to_csv([a], w.format) == traces_to_csv([b], w.format)
    c = simulate(w, (0, 1), 500, seed=12, replica=2)
    assert a.states != c.states


def test_simulated_states_are_admissible():
    rule = ConfigRule.bounded_span(2, 2)
    sub = generate("product_z3_z")
    tr = simulate((sub, rule), ((0, 0), (1, 0)), 2000, seed=3)
    assert all(rule.admissible(sub, c) for c in tr.states)
    assert np.all(np.diff(tr.times) > 0)


def test_jump_frequencies_chi_square():
    # from a fixed state the empirical next-state law matches q / q(x)
    w = SpiderWalk(LINE, ConfigRule.bounded_span(2, 3, left_leg=True))
    start = (0, 2)
    targets, rates = w.moves(start)
    counts = dict.fromkeys(targets, 0)
    for r in range(3000):
        tr = simulate(w, start, 1, seed=99, replica=r)
        counts[tr.states[1]] += 1
    obs = np.array([counts[t] for t in targets])
    exp = np.array(rates) / sum(rates) * obs.sum()
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_frozen_walk_reports_it():
    sub = generate("tree_with_end", M=3, a="1/2")
    w = SpiderWalk(sub, ConfigRule.bounded_span(2, 1))
    tr = simulate(w, ((0, ()), (1, ())), 10, seed=1)
    assert tr.frozen and tr.n_jumps == 0
    rep = mc_speed(w, MidpointHeight(sub), ((0, ()), (1, ())), 100, 4, seed=1)
    assert rep.estimate == 0.0


def test_mc_speed_independent_of_threads():
    w = SpiderWalk(LINE, ConfigRule.bounded_span(2, 3, left_leg=True))
    h = MidpointHeight(LINE)
    a = mc_speed(w, h, (0, 1), 2000, 4, seed=5, threads=1)
    b = mc_speed(w, h, (0, 1), 2000, 4, seed=5, threads=2)
    assert a.estimate == b.estimate and a.stderr == b.stderr
    assert a.row() == b.row()


def test_move_table_normalisation_keeps_the_walk():
    # normalised and raw tables give the same height increments
    sub = generate("tree_with_end", M=3, a="1/2")
    w = SpiderWalk(sub, ConfigRule.bounded_span(2, 3))
    h = MidpointHeight(sub)
    norm, raw = MoveTable(w, h), MoveTable(w, h, normalize=False)
    assert norm.normalized and not raw.normalized
    cfg = ((2, (1,)), (3, ()))
    n_state, _ = norm.enter(cfg)
    assert sorted(norm.entry(n_state)[3]) == pytest.approx(sorted(raw.entry(cfg)[3]))


def test_mc_speed_rejects_bad_input():
    w = SpiderWalk(LINE, ConfigRule.bounded_span(2, 2))
    with pytest.raises(ParameterError):
        mc_speed(w, FirstLegHeight(LINE), (0, 1), 10, 1, seed=1)
    with pytest.raises(Exception):
        mc_speed(w, FirstLegHeight(LINE), (0, 5), 10, 2, seed=1)


def test_single_walker_speed():
    rep = mc_speed(LINE, lambda v: float(v), 0, 20000, 8, seed=2)
    assert abs(rep.estimate - 0.4) < 4 * rep.stderr + 1e-3
    assert math.isfinite(rep.stderr)
