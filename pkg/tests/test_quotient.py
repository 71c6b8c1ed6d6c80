"""Lumpability, factor chains, stationary laws and exact speeds."""
import math
from bisect import bisect_right
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiderlab import (ConfigRule, DistanceHeightKey, MidpointHeight, SpanKey, SpiderWalk,
                       build_spider_network, exact_speed, explore_factor_chain, factor_chain,
                       generate, ksk_identity_check, lumpability_check, stationary)
from spiderlab.chain import MoveTable, substream
from spiderlab.errors import LumpabilityError, ReducibleError
from spiderlab.presets import TREE_START
from spiderlab.quotient import (ConstantKey, FactorChain, LegParityKey, block_mass,
                                compare_tree_rates, derived_rate_table, format_key)

SRW = generate("tree_with_end", M=3, srw=True)
HALF = generate("tree_with_end", M=3, a=Fraction(1, 2))


def tree_chain(sub, s):
    walk = SpiderWalk(sub, ConfigRule.bounded_span(2, s))
    return explore_factor_chain(walk, DistanceHeightKey(sub), TREE_START, MidpointHeight(sub))


def line_chain(p, q, s):
    sub = generate("line", p=p, q=q)
    walk = SpiderWalk(sub, ConfigRule.bounded_span(2, s, left_leg=True))
    return explore_factor_chain(walk, SpanKey(sub), (0, 1), MidpointHeight(sub))


def test_format_key():
    assert format_key((3, 1)) == "(3,1)"
    assert format_key(2.0) == "2"


@pytest.mark.parametrize("s", [2, 3, 5])
def test_distance_height_key_lumpable_on_full_ball(s):
    spn = build_spider_network(SRW, ConfigRule.bounded_span(2, s), TREE_START, s + 4)
    key = DistanceHeightKey(SRW)
    v = lumpability_check(spn, key)
    assert v.lumpable and v.max_defect == 0.0
    aug = lumpability_check(spn, key, height=MidpointHeight(SRW))
    assert aug.lumpable and aug.augmented


@pytest.mark.parametrize("s", [3, 4])
def test_explored_chain_matches_ball_chain(s):
    # two code paths: lazy exploration with normalised frames, and a truncated ball
    spn = build_spider_network(SRW, ConfigRule.bounded_span(2, s), TREE_START, s + 4)
    ball = factor_chain(spn, DistanceHeightKey(SRW), MidpointHeight(SRW))
    lazy = tree_chain(SRW, s)
    assert set(lazy.blocks) <= set(ball.blocks)
    for a in lazy.blocks:
        for b in lazy.blocks:
            assert lazy.rate(a, b) == pytest.approx(ball.rate(a, b), abs=1e-12)
        assert lazy.dH[lazy.index(a)] == pytest.approx(ball.dH[ball.index(a)], abs=1e-12)


def test_leg_parity_key_is_not_lumpable():
    spn = build_spider_network(SRW, ConfigRule.bounded_span(2, 3), TREE_START, 7)
    v = lumpability_check(spn, LegParityKey(SRW))
    assert not v.lumpable
    x, y, block, rx, ry = v.witness
    assert LegParityKey(SRW)(x) == LegParityKey(SRW)(y)
    assert rx != ry
    with pytest.raises(LumpabilityError) as info:
        factor_chain(spn, LegParityKey(SRW))
    assert info.value.witness is not None


def test_constant_key_is_lumpable_only_when_exit_rates_agree():
    spn = build_spider_network(SRW, ConfigRule.bounded_span(2, 2), TREE_START, 6)
    assert not lumpability_check(spn, ConstantKey()).lumpable


def test_line_stationary_law_small_cases():
    for s, expect in ((3, [1 / 4, 1 / 2, 1 / 4]), (4, [1 / 6, 1 / 3, 1 / 3, 1 / 6])):
        fc = line_chain(0.7, 0.3, s)
        assert fc.blocks == list(range(1, s + 1))
        assert np.allclose(stationary(fc), expect, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(2, 15))
def test_line_closed_form_grid(pi10, s):
    p = pi10 / 10
    q = 1 - p
    fc = line_chain(p, q, s)
    pi = stationary(fc)
    assert abs(pi[0] - 1 / (2 * s - 2)) < 1e-12
    assert abs(exact_speed(fc).estimate - (p - q) * (1 - 1 / s)) < 1e-10


def test_tree_srw_speeds_frozen():
    # oracle values, cross-checked by the ball chain and by Monte Carlo
    expect = {3: 4 / 21, 6: 19 / 126, 12: 0.08308913308913311}
    for s, v in expect.items():
        assert exact_speed(tree_chain(SRW, s)).estimate == pytest.approx(v, abs=1e-12)


def test_walk_speed_bounds_spider_speed():
    # a single SRW walker on the 3-regular tree climbs horocycles at speed (2 - 1) / 1 = 1
    nbrs = SRW.neighbors(SRW.root)
    v_walk = sum(f * (SRW.height(w) - SRW.height(SRW.root)) for w, f, _ in nbrs)
    assert v_walk == 1
    for s in (2, 3, 4):
        v = exact_speed(tree_chain(SRW, s)).estimate
        assert 0 < v < v_walk


def test_tree_with_end_speeds_frozen():
    fc1 = tree_chain(HALF, 1)
    assert fc1.frozen and exact_speed(fc1).estimate == 0.0
    assert exact_speed(tree_chain(HALF, 2)).estimate == pytest.approx(-2 / 31, abs=1e-12)
    assert exact_speed(tree_chain(HALF, 3)).estimate == pytest.approx(-0.07979626485568764, abs=1e-12)


def test_ksk_identity():
    for s in (3, 6):
        fc = tree_chain(SRW, s)
        B = [b for b in fc.blocks if b[1] == 0]
        assert ksk_identity_check(fc, B) < 1e-10
        assert 0 < block_mass(fc, B) < 1


def test_stationary_law_fields():
    fc = tree_chain(SRW, 4)
    pi = stationary(fc)
    assert pi.sum() == pytest.approx(1.0)
    assert fc.residual < 1e-10
    assert np.allclose(fc.pi_ct, pi * fc.holding / (pi @ fc.holding))


def test_reducible_factor_chain():
    fc = FactorChain(["a", "b"], np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2))
    with pytest.raises(ReducibleError):
        stationary(fc)


def test_mc_occupation_matches_pi():
    s = 10
    fc = tree_chain(SRW, s)
    pi = stationary(fc)
    key = DistanceHeightKey(SRW)
    walk = SpiderWalk(SRW, ConfigRule.bounded_span(2, s))
    # the key is invariant under the frame normalisation, so walk in normalised frames
    table = MoveTable(walk)
    counts = {}
    n = 0
    for r in range(4):
        rng = substream(17, r)
        state, _ = table.enter(TREE_START)
        u = rng.random(50_000)
        for j in range(50_000):
            cum, total, tg, _, _ = table.entry(state)
            state = tg[bisect_right(cum, u[j] * total)]
            if j >= 1000:
                b = key(state)
                counts[b] = counts.get(b, 0) + 1
                n += 1
    for l in range(2, s + 1, 2):
        target = pi[fc.index((l, 0))]
        freq = counts.get((l, 0), 0) / n
        # generous band: correlated samples, roughly 200k of them
        assert abs(freq - target) < 0.15 * target + 2e-3


def test_tree_rate_table_comparison():
    s = 10
    cmp = compare_tree_rates(tree_chain(SRW, s), s)
    clear = [c for c in cmp if c.unambiguous]
    assert clear and all(c.match for c in clear)
    # the transposed reading of the (0, s) entry is reproduced
    tr = [c for c in cmp if c.source == (s, 0) and c.target == (s - 1, 1)]
    assert tr and tr[0].match
    assert math.isnan([c for c in cmp if c.source == (0, s)][0].derived)


def test_derived_rate_table_is_off_diagonal():
    fc = tree_chain(SRW, 4)
    rows = derived_rate_table(fc)
    assert all(a != b and r > 0 for a, b, r in rows)
    assert ((1, 1), (2, 2), 3.0) in rows
