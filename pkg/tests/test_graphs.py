"""Substrates, balls and finite networks."""
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiderlab import FiniteNetwork, ParameterError, generate, materialize_ball
from spiderlab.errors import NotFoundError, SizeError
from spiderlab.graphs import FAMILIES, bfs_distances, distance, parse_number

FAMILY_PARAMS = {
    "line": {"p": 0.7, "q": 0.3},
    "lamperti_halfline": {"theta": 1},
    "rooted_tree": {"M": 3},
    "tree_with_end": {"M": 3, "a": "1/2"},
    "product_z3_z": {},
    "decorated_line": {},
    "star_of_segments": {"p": "2/3", "n_max": 6},
}


@pytest.fixture(params=sorted(FAMILY_PARAMS))
def sub(request):
    return generate(request.param, **FAMILY_PARAMS[request.param])


def test_every_family_is_covered():
    assert set(FAMILY_PARAMS) == set(FAMILIES)


def test_unknown_family():
    with pytest.raises(ParameterError):
        generate("hypercube")


def test_parse_number_exact():
    assert parse_number("1/3") == Fraction(1, 3)
    assert parse_number(0.5) == 0.5
    with pytest.raises(ParameterError):
        parse_number("one half")


@pytest.mark.parametrize("family,params", [
    ("line", {"p": 0, "q": 1}),
    ("tree_with_end", {"a": 1}),
    ("rooted_tree", {"M": 2}),
    ("star_of_segments", {"p": 1.5}),
    ("line", {"r": 1}),
])
def test_bad_parameters(family, params):
    with pytest.raises(ParameterError):
        generate(family, **params)


def test_symmetric_support_and_positive_rates(sub):
    ball = bfs_distances(sub, sub.root, 5)
    for v in ball:
        for w, f, b in sub.neighbors(v):
            assert sub.contains(w)
            back = {x: (f2, b2) for x, f2, b2 in sub.neighbors(w)}
            assert v in back
            # the reverse rate seen from v matches the forward rate seen from w
            assert back[v][0] == pytest.approx(b)
            assert f > 0 or b > 0


def test_distance_matches_bfs(sub):
    ball = bfs_distances(sub, sub.root, 5)
    for v, d in ball.items():
        assert sub.distance(sub.root, v) == d
        assert sub.distance(v, sub.root) == d


def test_format_parse_round_trip(sub):
    for v in bfs_distances(sub, sub.root, 4):
        assert sub.parse(sub.format(v)) == v


def test_geodesic_is_a_shortest_path(sub):
    if not sub.is_tree:
        with pytest.raises(ParameterError):
            sub.geodesic(sub.root, sub.root)
        return
    verts = list(bfs_distances(sub, sub.root, 3))
    for x in verts[:12]:
        for y in verts[-12:]:
            path = sub.geodesic(x, y)
            assert path[0] == x and path[-1] == y
            assert len(path) - 1 == sub.distance(x, y)
            for a, b in zip(path, path[1:]):
                assert sub.distance(a, b) == 1


@pytest.mark.parametrize("family", ["rooted_tree", "tree_with_end"])
def test_tree_height_changes_by_one(family):
    s = generate(family, M=4)
    for v in bfs_distances(s, s.root, 4):
        for w, _, _ in s.neighbors(v):
            assert abs(s.height(w) - s.height(v)) == 1


def test_tree_with_end_rates():
    s = generate("tree_with_end", M=3, a=Fraction(1, 2))
    v = (0, ())
    rates = {w: f for w, f, _ in s.neighbors(v)}
    assert rates[s.father(v)] == pytest.approx(0.5)
    assert sorted(f for w, f in rates.items() if w != s.father(v)) == [0.25, 0.25]
    srw = generate("tree_with_end", M=3, srw=True)
    assert all(f == 1 for _, f, _ in srw.neighbors(v))


def test_tree_ball_radius_two_brute_force():
    # independent oracle: grow the ball by hand through father/sons
    s = generate("tree_with_end", M=3, srw=True)
    seen = {s.root}
    frontier = {s.root}
    for _ in range(2):
        frontier = {w for v in frontier for w in [s.father(v)] + list(s.sons(v))} - seen
        seen |= frontier
    net = materialize_ball(s, s.root, 2)
    assert set(net.vertices) == seen
    assert net.n == 10
    # leaves of the ball are exactly the boundary
    assert {net.vertices[i] for i in np.flatnonzero(net.boundary)} == \
        {v for v in seen if s.distance(s.root, v) == 2}


def test_lamperti_halfline_rates_exact():
    s = generate("lamperti_halfline", theta=1)
    assert s.up_rate(3) == Fraction(7, 12)
    nb = dict((w, f) for w, f, _ in s.neighbors(3))
    assert nb[4] + nb[2] == pytest.approx(1.0)
    assert nb[4] - nb[2] == pytest.approx(1 / 6)
    assert [w for w, _, _ in s.neighbors(0)] == [1]


def test_star_hub_rates_normalised():
    s = generate("star_of_segments", p="2/3", n_max=5)
    out = s.neighbors((0, 0))
    assert sum(f for _, f, _ in out) == pytest.approx(1.0)
    assert len(out) == 5
    # segment tip keeps only the inward move
    tip = [w for w, f, _ in s.neighbors((3, 3)) if f > 0]
    assert tip == [(3, 2)]


def test_decorated_line_pendants():
    s = generate("decorated_line")
    assert s.has_pendant(8) and s.has_pendant(16) and not s.has_pendant(12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_balls_are_monotone(r1, r2):
    s = generate("product_z3_z")
    a, b = sorted((r1, r2))
    small = materialize_ball(s, s.root, a)
    big = materialize_ball(s, s.root, b)
    assert set(small.vertices) <= set(big.vertices)
    for i, v in enumerate(small.vertices):
        if small.boundary[i]:
            continue
        for j, w in enumerate(small.vertices):
            assert small.rates[i, j] == big.rate(v, w)


@settings(max_examples=50, deadline=None)
@given(st.integers(-30, 30), st.integers(-30, 30))
def test_line_distance_and_parse(x, y):
    s = generate("line", p=0.6, q=0.4)
    assert s.distance(x, y) == abs(x - y)
    assert s.parse(s.format(x)) == x


def test_vertex_cap():
    with pytest.raises(SizeError):
        bfs_distances(generate("rooted_tree", M=5), (), 12, vertex_cap=1000)


def test_network_json_round_trip():
    s = generate("line", p=0.7, q=0.3)
    net = materialize_ball(s, 0, 4)
    back = FiniteNetwork.loads(net.dumps(), parser=s.parse, formatter=s.format)
    assert back.vertices == net.vertices
    assert (back.rates != net.rates).nnz == 0
    assert np.array_equal(back.boundary, net.boundary)


def test_network_check_rejects_one_way_edge():
    net = FiniteNetwork.from_rates(["a", "b"], {(0, 1): 1.0})
    with pytest.raises(ParameterError):
        net.check()
    with pytest.raises(ParameterError):
        FiniteNetwork.from_rates(["a"], {(0, 0): 1.0}).check()


def test_network_lookup_errors():
    net = materialize_ball(generate("line"), 0, 2)
    with pytest.raises(NotFoundError):
        net.idx(99)


def test_network_distance():
    net = materialize_ball(generate("rooted_tree", M=3), (), 3)
    assert distance(net, (0, 1), (1, 0)) == 4
