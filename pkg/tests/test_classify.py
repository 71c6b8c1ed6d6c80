"""Drift and resistance diagnostics, distortion scans."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiderlab import (ConfigRule, DriftProfile, ParameterError, SpiderWalk, Verdict,
                       distortion_scan, drift_profile, generate, lamperti_classify,
                       resistance_growth, spider_drift_profile)
from spiderlab.graphs import LampertiRate
from spiderlab.presets import Z3Z_TABLE


def synthetic(L, x_max=4000, c=0.0):
    x = np.arange(2, x_max + 1, dtype=float)
    return DriftProfile(x, (L + c / x) / (2 * x))


def test_profile_validation():
    with pytest.raises(ParameterError):
        DriftProfile([1, 1, 2], [0, 0, 0])
    with pytest.raises(ParameterError):
        DriftProfile([1, 2], [0, 2.0])
    with pytest.raises(ParameterError):
        DriftProfile([1, 2, 3], [0, 0])


def test_verdict_labels():
    assert Verdict("transient").display == "transient-evidence"
    assert str(Verdict("inconclusive")) == "inconclusive"
    with pytest.raises(ParameterError):
        Verdict("sometimes")


@pytest.mark.parametrize("L,label", [(2.0, "transient"), (-2.0, "positive_recurrent"),
                                     (-1.0, "null_recurrent"), (0.0, "null_recurrent"),
                                     (1.0, "recurrent"), (0.5, "recurrent")])
def test_synthetic_profiles(L, label):
    v = lamperti_classify(synthetic(L))
    assert v.label == label
    assert v.evidence["L"] == pytest.approx(L, abs=1e-9)


def test_borderline_is_inconclusive():
    # g just above 1 but inside the margin
    assert lamperti_classify(synthetic(1.02)).label == "inconclusive"


def test_short_profile_is_rejected():
    with pytest.raises(ParameterError):
        lamperti_classify(synthetic(2.0, x_max=100))


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_lamperti_monotone_in_limit(a, b):
    # ordering of classes follows the ordering of the limit
    rank = {"positive_recurrent": 0, "null_recurrent": 1, "recurrent": 2, "inconclusive": None,
            "transient": 3}
    lo, hi = sorted((a, b))
    r1 = rank[lamperti_classify(synthetic(lo)).label]
    r2 = rank[lamperti_classify(synthetic(hi)).label]
    if r1 is not None and r2 is not None:
        assert r1 <= r2


def test_walk_drift_exact():
    prof = drift_profile(LampertiRate(1), range(1, 50))
    assert np.allclose(prof.mu, 1 / (2 * prof.x), atol=1e-15)


def test_stretched_line_drift_formulas():
    prof = spider_drift_profile(LampertiRate(1), 2, range(1, 201))
    x = prof.x // 2
    even = prof.x % 2 == 0
    expect = np.where(even, (2 * x + 1) / (4 * x * (x + 1) - 1), (x + 1) / (2 * x * (x + 2) + 1))
    assert np.abs(prof.mu - expect).max() < 1e-14


def test_spider_drift_needs_span_two():
    with pytest.raises(ParameterError):
        spider_drift_profile(LampertiRate(1), 3, range(1, 10))


def test_resistance_growth_line_and_tree():
    line = resistance_growth(generate("line"), [8, 16, 32, 64, 128])
    assert line.verdict.label == "recurrent"
    assert np.all(np.diff(line.resistance) > 0)
    tree = resistance_growth(generate("rooted_tree", M=3), [2, 4, 6, 8, 10])
    assert tree.verdict.label == "transient"
    assert tree.resistance[-1] < 1.0


def test_resistance_curve_csv():
    curve = resistance_growth(generate("line"), [4, 8, 16])
    text = curve.to_csv()
    assert text.splitlines()[0] == "radius,R_eff"
    assert len(text.splitlines()) == 4


def test_resistance_stability_under_refinement():
    # adding a radius to a settled curve does not flip the verdict
    a = resistance_growth(generate("line"), [8, 16, 32, 64, 128])
    b = resistance_growth(generate("line"), [8, 16, 32, 64, 128, 256])
    assert a.verdict.label == b.verdict.label == "recurrent"
    assert np.allclose(a.resistance, b.resistance[:5])
    # too few radii for the leave-one-out comparison
    assert resistance_growth(generate("line"), [8, 16, 32, 64]).verdict.label == "inconclusive"


def test_spider_resistance_transient_on_lamperti():
    sub = generate("lamperti_halfline", theta=1)
    walk = SpiderWalk(sub, ConfigRule.bounded_span(2, 2, left_leg=True))
    curve = resistance_growth(walk, [32, 64, 128, 256, 512, 1024], start=(0, 1))
    assert curve.verdict.label == "transient"


def test_distortion_bound_on_bounded_span_rules():
    cases = [(generate("line"), ConfigRule.bounded_span(2, 3, left_leg=True), 20, None),
             (generate("tree_with_end", M=3, srw=True), ConfigRule.bounded_span(2, 3), 8, 1),
             (generate("product_z3_z"), ConfigRule.bounded_span(2, 2), 12, None),
             (generate("product_z3_z"), ConfigRule.explicit(2, Z3Z_TABLE), 12, None)]
    for sub, rule, radius, site_r in cases:
        rep = distortion_scan(sub, rule, radius, site_radius=site_r)
        assert rep.within_bound
        assert rep.bound == 2 * rule.k * (rule.reach(sub) + rule.k)
        assert rep.alpha >= 1 and rep.beta >= 0
        assert "config_diameter" in rep.to_csv()
