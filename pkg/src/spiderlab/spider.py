"""Configuration rules, spider walks and spider networks.

A configuration is an ordered tuple of distinct leg positions.  A
:class:`SpiderWalk` couples a substrate with a :class:`ConfigRule`; its
:meth:`~SpiderWalk.moves` oracle lists the one-leg moves that keep the
configuration admissible, each with the substrate rate of that leg move.
Moves that would break the rule are simply absent (the leg stays put).
"""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NotFoundError, ParameterError, RuleViolationError, SizeError
from .graphs import (VERTEX_CAP, FiniteNetwork, Substrate, _csr, _flags, bfs_distances,
                     network_distances)

Config = tuple


@dataclass(frozen=True)
class ConfigRule:
    """Admissible set of leg configurations.

    ``bounded_span``: legs distinct and pairwise within distance ``span``.
    With ``left_leg`` the legs must additionally be strictly increasing in
    the substrate's left-to-right order (integer families only), which
    identifies each unordered configuration with one tuple.

    ``explicit``: the configuration, read relative to its first leg,
    must be one of ``offsets`` (needs a translation structure on the
    substrate).

    ``custom``: arbitrary predicate ``predicate(substrate, config)``.
    """

    kind: str
    k: int
    span: int | None = None
    left_leg: bool = False
    offsets: tuple | None = None
    predicate: Callable[[Substrate, Config], bool] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("a spider needs at least one leg")
        if self.kind == "bounded_span":
            if self.span is None or self.span < 1:
                raise ParameterError("bounded_span needs span s >= 1")
        elif self.kind == "explicit":
            if not self.offsets:
                raise ParameterError("explicit rule needs a nonempty offset table")
            if any(len(o) != self.k for o in self.offsets):
                raise ParameterError(f"every offset tuple must have {self.k} entries")
        elif self.kind == "custom":
            if self.predicate is None:
                raise ParameterError("custom rule needs a predicate")
        else:
            raise ParameterError(f"unknown rule kind {self.kind!r}")

    @classmethod
    def bounded_span(cls, k: int, s: int, left_leg: bool = False) -> "ConfigRule":
        return cls("bounded_span", k, span=s, left_leg=left_leg)

    @classmethod
    def explicit(cls, k: int, offsets) -> "ConfigRule":
        offs = tuple(tuple(_freeze(c) for c in o) for o in offsets)
        return cls("explicit", k, offsets=offs)

    @classmethod
    def custom(cls, k: int, predicate, span: int | None = None) -> "ConfigRule":
        return cls("custom", k, span=span, predicate=predicate)

    def reach(self, sub: Substrate) -> int:
        """Largest pairwise leg distance the rule admits (sizes ball margins)."""
        if self.span is not None:
            return self.span
        if self.kind == "explicit":
            cfgs = [tuple(sub.translate(sub.root, o) for o in off) for off in self.offsets]
            return max(sub.distance(a, b) for c in cfgs for a in c for b in c)
        raise ParameterError("custom rules need a span")

    def admissible(self, sub: Substrate, cfg: Config) -> bool:
        if len(cfg) != self.k or len(set(cfg)) != self.k:
            return False
        if self.kind == "bounded_span":
            if self.left_leg and any(sub.order_key(a) >= sub.order_key(b)
                                     for a, b in zip(cfg, cfg[1:])):
                return False
            return all(sub.distance(a, b) <= self.span
                       for a, b in itertools.combinations(cfg, 2))
        if self.kind == "explicit":
            base = cfg[0]
            rel = tuple(sub.offset(base, x) for x in cfg)
            return rel in self._offset_set
        return bool(self.predicate(sub, cfg))

    def admissible_move(self, sub: Substrate, cfg: Config, leg: int) -> bool:
        """Admissibility of ``cfg`` knowing it differs from an admissible config only at ``leg``."""
        y = cfg[leg]
        for j, x in enumerate(cfg):
            if j != leg and x == y:
                return False
        if self.kind == "bounded_span":
            if self.left_leg:
                key = sub.order_key(y)
                if leg > 0 and sub.order_key(cfg[leg - 1]) >= key:
                    return False
                if leg < self.k - 1 and key >= sub.order_key(cfg[leg + 1]):
                    return False
            s = self.span
            dist = sub.distance
            for j, x in enumerate(cfg):
                if j != leg and dist(x, y) > s:
                    return False
            return True
        return self.admissible(sub, cfg)

    @property
    def _offset_set(self):
        cached = self.__dict__.get("_offsets_cache")
        if cached is None:
            cached = frozenset(self.offsets)
            object.__setattr__(self, "_offsets_cache", cached)
        return cached

    def local_configs(self, sub: Substrate, site, within: dict | None = None) -> list[Config]:
        """All admissible configurations with first leg at ``site``.

        ``within`` optionally restricts the legs to a precomputed ball
        (a ``{vertex: distance}`` map).
        """
        if self.kind == "explicit":
            out = [tuple(sub.translate(site, o) for o in off) for off in self.offsets]
        else:
            if self.span is None:
                raise ParameterError("custom rules need a span to enumerate local configurations")
            near = [v for v in bfs_distances(sub, site, self.span) if v != site]
            out = [(site,) + rest for rest in itertools.permutations(near, self.k - 1)]
        out = [c for c in out if self.admissible(sub, c)]
        if within is not None:
            out = [c for c in out if all(x in within for x in c)]
        return out

    def to_json(self, sub: Substrate | None = None) -> dict:
        if self.kind == "bounded_span":
            doc = {"kind": "bounded_span", "k": self.k, "s": self.span}
            if self.left_leg:
                doc["left_leg"] = True
            return doc
        if self.kind == "explicit":
            return {"kind": "explicit", "k": self.k, "offsets": [list(map(_thaw, o)) for o in self.offsets]}
        raise ParameterError("custom rules cannot be serialised")

    @classmethod
    def from_json(cls, doc: dict) -> "ConfigRule":
        kind = doc.get("kind")
        allowed = {"bounded_span": {"kind", "k", "s", "left_leg"}, "explicit": {"kind", "k", "offsets"}}
        if kind not in allowed:
            raise ParameterError(f"unknown rule kind {kind!r}")
        extra = set(doc) - allowed[kind]
        if extra:
            raise ParameterError(f"unknown rule keys {sorted(extra)}")
        if kind == "bounded_span":
            return cls.bounded_span(int(doc["k"]), int(doc["s"]), bool(doc.get("left_leg", False)))
        return cls.explicit(int(doc["k"]), doc["offsets"])


def _freeze(c):
    return tuple(c) if isinstance(c, list) else c


def _thaw(c):
    return list(c) if isinstance(c, tuple) else c


class SpiderWalk:
    """A substrate plus a configuration rule: the spider as a one-particle process on configurations."""

    def __init__(self, substrate: Substrate, rule: ConfigRule):
        self.substrate = substrate
        self.rule = rule

    def __repr__(self):
        return f"SpiderWalk({self.substrate!r}, {self.rule!r})"

    def admissible(self, cfg: Config) -> bool:
        return self.rule.admissible(self.substrate, tuple(cfg))

    def moves(self, cfg: Config):
        """One-leg admissible moves from ``cfg`` and their rates."""
        sub, rule = self.substrate, self.rule
        targets, rates = [], []
        for i, x in enumerate(cfg):
            nbr, fwd = sub.moves(x)
            for y, f in zip(nbr, fwd):
                if f <= 0:
                    continue
                new = cfg[:i] + (y,) + cfg[i + 1:]
                if rule.admissible_move(sub, new, i):
                    targets.append(new)
                    rates.append(f)
        return targets, rates

    def format(self, cfg: Config) -> str:
        return "|".join(self.substrate.format(x) for x in cfg)

    def parse(self, text: str) -> Config:
        return tuple(self.substrate.parse(t) for t in text.split("|"))

    def lined_start(self, site=None) -> Config:
        """A lined admissible configuration (consecutive legs adjacent) starting at ``site``."""
        sub = self.substrate
        site = sub.root if site is None else site
        legs = [site]
        while len(legs) < self.rule.k:
            for y, f, _ in sub.neighbors(legs[-1]):
                cand = tuple(legs + [y])
                if y not in legs and f > 0 and (len(cand) < self.rule.k or self.admissible(cand)):
                    if self.rule.left_leg and sub.order_key(y) <= sub.order_key(legs[-1]):
                        continue
                    legs.append(y)
                    break
            else:
                raise RuleViolationError("no lined configuration starts at this site")
        cfg = tuple(legs)
        if not self.admissible(cfg):
            raise RuleViolationError("the lined configuration at this site is not admissible")
        return cfg


def is_lined(sub: Substrate, cfg: Config) -> bool:
    return all(sub.distance(a, b) == 1 for a, b in zip(cfg, cfg[1:]))


@dataclass(frozen=True, eq=False)
class SpiderNetwork:
    """Finite piece of the spider graph around ``center``.

    ``ball`` maps every substrate vertex within ``radius`` of ``center`` to
    its distance.  A configuration is boundary-flagged when some leg lies at
    distance ``>= radius - margin`` from the centre (unless the substrate
    ball is the whole finite graph).
    """

    network: FiniteNetwork
    walk: SpiderWalk
    center: Any
    radius: int
    margin: int
    ball: dict = field(repr=False)
    truncated: bool = True

    @property
    def substrate(self) -> Substrate:
        return self.walk.substrate

    @property
    def rule(self) -> ConfigRule:
        return self.walk.rule

    @property
    def configs(self) -> tuple:
        return self.network.vertices

    def is_boundary_config(self, cfg: Config) -> bool:
        if not self.truncated:
            return False
        cut = self.radius - self.margin
        return any(self.ball[x] >= cut for x in cfg)

    def global_positions(self, enumeration=None) -> list:
        sub = self.substrate
        return [global_position(c, sub, enumeration) for c in self.configs]


def _ball_is_truncated(sub: Substrate, ball: dict, radius: int) -> bool:
    return any(w not in ball for v, d in ball.items() if d == radius for w, _, _ in sub.neighbors(v))


def build_spider_network(sub: Substrate, rule: ConfigRule, start: Config, radius: int,
                         center=None, margin: int | None = None,
                         vertex_cap: int = VERTEX_CAP) -> SpiderNetwork:
    """Breadth-first closure of admissible configurations reachable from ``start``.

    Legs are confined to the substrate ball of ``radius`` around ``center``
    (default: the first leg of ``start``).
    """
    if radius < 1:
        raise ParameterError("radius must be at least 1")
    walk = SpiderWalk(sub, rule)
    start = tuple(start)
    if not walk.admissible(start):
        raise RuleViolationError(f"start configuration {walk.format(start)} is not admissible")
    center = start[0] if center is None else center
    margin = rule.reach(sub) if margin is None else int(margin)
    ball = bfs_distances(sub, center, radius, vertex_cap)
    if any(x not in ball for x in start):
        raise ParameterError("start configuration leaves the ball")
    truncated = _ball_is_truncated(sub, ball, radius)

    index = {start: 0}
    order = [start]
    rates = {}
    queue = deque([start])
    while queue:
        cfg = queue.popleft()
        i = index[cfg]
        targets, rs = walk.moves(cfg)
        for t, r in zip(targets, rs):
            if any(x not in ball for x in t):
                continue
            j = index.get(t)
            if j is None:
                j = index[t] = len(order)
                order.append(t)
                queue.append(t)
                if len(order) > vertex_cap:
                    raise SizeError(f"spider network exceeds the vertex cap {vertex_cap}")
            rates[(i, j)] = r
    cut = radius - margin
    boundary = [i for i, c in enumerate(order) if truncated and any(ball[x] >= cut for x in c)]
    net = FiniteNetwork(tuple(order), _csr(rates, len(order)), 0, _flags(boundary, len(order)),
                        walk.format, index)
    return SpiderNetwork(net, walk, center, radius, margin, ball, truncated)


def enumerate_admissible(spn: SpiderNetwork) -> FiniteNetwork:
    """Every admissible configuration with all legs in the ball, with its spider-graph edges.

    Unlike :func:`build_spider_network` this ignores reachability from the
    start, so it exposes reducibility.
    """
    sub, rule, ball = spn.substrate, spn.rule, spn.ball
    walk = spn.walk
    configs = []
    for site in ball:
        configs.extend(rule.local_configs(sub, site, within=ball))
    index = {c: i for i, c in enumerate(configs)}
    rates = {}
    for c, i in index.items():
        for t, r in zip(*walk.moves(c)):
            j = index.get(t)
            if j is not None:
                rates[(i, j)] = r
    boundary = [i for i, c in enumerate(configs) if spn.is_boundary_config(c)]
    return FiniteNetwork(tuple(configs), _csr(rates, len(configs)), 0, _flags(boundary, len(configs)),
                         walk.format, index)


class Irreducibility(NamedTuple):
    irreducible: bool
    witness: tuple | None  # (a, b) with b unreachable from a


def check_irreducible(spn: SpiderNetwork) -> Irreducibility:
    """Whether all interior admissible configurations of the ball communicate."""
    full = enumerate_admissible(spn)
    if full.n == 0:
        raise ParameterError("no admissible configurations in the ball")
    ncomp, labels = connected_components(full.rates, directed=True, connection="strong")
    inner = full.interior
    if len(inner) == 0:
        raise ParameterError("ball too small: no interior configurations")
    comps = np.unique(labels[inner])
    if len(comps) == 1:
        return Irreducibility(True, None)
    a = int(inner[labels[inner] == comps[0]][0])
    b = int(inner[labels[inner] == comps[1]][0])
    reach = network_distances(full, a)
    if np.isfinite(reach[b]):
        a, b = b, a
    return Irreducibility(False, (full.vertices[a], full.vertices[b]))


# -- positions -------------------------------------------------------------------


def zigzag_index(x: int) -> int:
    """Position of ``x`` in the enumeration 0, 1, -1, 2, -2, ..."""
    return 2 * x - 1 if x > 0 else -2 * x


def global_position(cfg: Config, where, enumeration=None):
    """Leg closest to the root; ties go to the leg listed first in ``enumeration``.

    ``where`` is a :class:`Substrate` (distances from its root) or a
    :class:`FiniteNetwork` of substrate vertices (BFS distances from its
    root).  ``enumeration`` is a sequence of vertices or a callable giving
    an index; by default integers use :func:`zigzag_index` and networks
    their vertex order.
    """
    if isinstance(where, Substrate):
        def dist(x):
            return where.distance(where.root, x)
    else:
        d = network_distances(where, where.root)

        def dist(x):
            return d[where.idx(x)]
    if enumeration is None:
        if all(isinstance(x, (int, np.integer)) for x in cfg):
            rank = zigzag_index
        elif isinstance(where, FiniteNetwork):
            rank = where.idx
        else:
            rank = lambda x: 0  # noqa: E731  (leg order breaks the tie)
    elif callable(enumeration):
        rank = enumeration
    else:
        pos = {v: i for i, v in enumerate(enumeration)}
        rank = pos.__getitem__
    return min(cfg, key=lambda x: (dist(x), rank(x)))


def midpoint_height(cfg: Config, sub: Substrate) -> float:
    """Height of the midpoint of the geodesic between the two legs.

    For odd leg distance the midpoint sits inside an edge and gets the mean
    height of the edge's endpoints.
    """
    if len(cfg) != 2:
        raise ParameterError("midpoint height needs exactly two legs")
    if not sub.is_tree:
        raise ParameterError(f"family {sub.family!r} is not a tree")
    if hasattr(sub, "meet"):
        x, y = cfg
        m = sub.height(sub.meet(x, y))
        return m + 0.5 * abs(sub.height(x) - sub.height(y))
    return geodesic_midpoint_height(cfg, sub)


def geodesic_midpoint_height(cfg: Config, sub: Substrate) -> float:
    """:func:`midpoint_height` computed by walking the explicit geodesic."""
    path = sub.geodesic(cfg[0], cfg[1])
    l = len(path) - 1
    if l % 2 == 0:
        return float(sub.height(path[l // 2]))
    return 0.5 * (sub.height(path[(l - 1) // 2]) + sub.height(path[(l + 1) // 2]))


class FirstLegHeight:
    """Height of the first leg."""

    name = "first_leg"

    def __init__(self, sub: Substrate):
        self.sub = sub

    def __call__(self, cfg) -> float:
        return float(self.sub.height(cfg[0]))


class MidpointHeight:
    """Height of the midpoint between the two legs (see :func:`midpoint_height`)."""

    name = "midpoint"

    def __init__(self, sub: Substrate):
        if not sub.is_tree:
            raise ParameterError(f"family {sub.family!r} is not a tree")
        self.sub = sub

    def __call__(self, cfg) -> float:
        return midpoint_height(cfg, self.sub)


HEIGHTS = {"first_leg": FirstLegHeight, "midpoint": MidpointHeight}


class Diameter(NamedTuple):
    value: float
    truncated: bool
    pair: tuple | None


def config_diameter(spn: SpiderNetwork, site, position: str = "first_leg",
                    enumeration=None) -> Diameter:
    """Largest spider-graph distance between two configurations sharing a site.

    ``position`` selects how a configuration is assigned to a site: by its
    first leg, or by :func:`global_position` (``"global"``).  When a
    shortest path could leave the ball the value is a certified lower bound
    and ``truncated`` is set.
    """
    net = spn.network
    if position == "first_leg":
        members = [i for i, c in enumerate(net.vertices) if c[0] == site]
    elif position == "global":
        sub = spn.substrate
        members = [i for i, c in enumerate(net.vertices)
                   if global_position(c, sub, enumeration) == site]
    else:
        raise ParameterError(f"unknown position encoding {position!r}")
    if not members:
        raise NotFoundError(f"no configuration at site {site!r}")
    boundary = np.flatnonzero(net.boundary)
    best, pair, truncated = 0.0, None, False
    rows = {i: network_distances(net, i) for i in members}
    to_edge = {i: (rows[i][boundary].min() if len(boundary) else math.inf) for i in members}
    for a in members:
        for b in members:
            if b == a:
                continue
            d = rows[a][b]
            # a path leaving the ball must touch a boundary configuration on the way out
            escape = to_edge[a] + _reverse_edge_distance(net, b, boundary)
            cut = d > escape
            value = min(d, escape)
            if value > best or (value == best and cut and not truncated):
                best, pair = float(value), (net.vertices[a], net.vertices[b])
                truncated = bool(cut)
    return Diameter(best, truncated, pair)


def _reverse_edge_distance(net: FiniteNetwork, target: int, boundary: np.ndarray) -> float:
    if len(boundary) == 0:
        return math.inf
    cache = net.__dict__.setdefault("_rev_cache", {})
    if target not in cache:
        from scipy.sparse.csgraph import shortest_path
        cache[target] = shortest_path(net.rates.T.tocsr(), directed=True, unweighted=True,
                                      indices=target)
    return float(cache[target][boundary].min())


# -- the two-leg stretched line --------------------------------------------------


def stretched_index(cfg: Config) -> int:
    """Label of a left-ordered two-leg span-2 configuration ``(x, x + i)`` on the stretched line."""
    x, y = cfg
    i = y - x
    if i not in (1, 2):
        raise ParameterError("stretched-line labels exist for spans 1 and 2 only")
    return 2 * x + i - 1


def stretched_config(label: int) -> Config:
    x, r = divmod(label, 2)
    return (x, x + 1 + r)
