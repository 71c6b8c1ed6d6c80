"""Graph substrates with transition rates, and finite rate networks.

A :class:`Substrate` is a lazily generated (possibly infinite) graph: it
answers neighbour queries on demand and never stores the whole vertex set.
A :class:`FiniteNetwork` is an explicit vertex/edge set with sparse rates,
typically a ball cut out of a substrate by :func:`materialize_ball`.

Every substrate family names its vertices by a canonical address:

=====================  ==============================================
family                 address
=====================  ==============================================
``line``               ``int``
``lamperti_halfline``  ``int >= 0``
``rooted_tree``        descent word ``tuple`` (level = word length)
``tree_with_end``      ``(u, w)``: ``u`` steps up from the origin, then
                       descend along word ``w``
``product_z3_z``       ``(u mod 3, x)``
``decorated_line``     ``(x, flag)``, flag 1 marks the pendant at ``x``
``star_of_segments``   ``(N, x)`` with ``1 <= x <= N``; hub ``(0, 0)``
=====================  ==============================================
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NotFoundError, ParameterError, SizeError

DEGREE_CAP = 64
VERTEX_CAP = 5_000_000

Vertex = Hashable


def _rate(value) -> float:
    """Convert an exact or floating rate to a double, rejecting negatives."""
    r = float(value)
    if not math.isfinite(r) or r < 0:
        raise ParameterError(f"rates must be finite and non-negative, got {value!r}")
    return r


class Substrate:
    """Lazily generated graph with transition rates.

    Subclasses implement :meth:`neighbors`; everything else has a generic
    fallback.  Oracles are pure functions of their arguments, so instances
    can be shared freely between readers.
    """

    family = "abstract"
    max_degree = DEGREE_CAP
    is_tree = False

    def __init__(self, root):
        self.root = root
        if self.max_degree > DEGREE_CAP:
            raise ParameterError(f"degree {self.max_degree} exceeds cap {DEGREE_CAP}")

    def neighbors(self, v) -> list[tuple[Any, float, float]]:
        """Return ``(neighbour, q(v, neighbour), q(neighbour, v))`` triples."""
        raise NotImplementedError

    def moves(self, v):
        nbrs = self.neighbors(v)
        return [y for y, _, _ in nbrs], [f for _, f, _ in nbrs]

    def params(self) -> dict:
        return {}

    def contains(self, v) -> bool:
        try:
            self.neighbors(v)
        except (TypeError, ValueError, ParameterError):
            return False
        return True

    def distance(self, x, y) -> int:
        """Graph distance by bidirectional-free plain BFS (families override)."""
        if x == y:
            return 0
        seen = {x}
        frontier = [x]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for w, _, _ in self.neighbors(v):
                    if w == y:
                        return d
                    if w not in seen:
                        seen.add(w)
                        nxt.append(w)
            frontier = nxt
            if len(seen) > VERTEX_CAP:
                raise SizeError("distance search exceeded the vertex cap")
        return math.inf

    def height(self, v) -> float:
        raise ParameterError(f"family {self.family!r} has no height functional")

    def geodesic(self, x, y) -> list:
        raise ParameterError(f"family {self.family!r} is not a tree")

    def translate(self, v, offset):
        raise ParameterError(f"family {self.family!r} has no translation structure")

    def offset(self, base, v):
        raise ParameterError(f"family {self.family!r} has no translation structure")

    def order_key(self, v):
        raise ParameterError(f"family {self.family!r} has no left-to-right order")

    def normalize_config(self, cfg):
        """Move ``cfg`` by a rate-preserving automorphism so its first leg sits at the root.

        Returns ``(image, shift)`` with ``height(v) = height(image of v) + shift``,
        or ``None`` when the family has no such transitive symmetry.
        """
        return None

    def format(self, v) -> str:
        return str(v)

    def parse(self, text: str):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


# -- one-dimensional families ----------------------------------------------------


class Line(Substrate):
    """Nearest-neighbour walk on the integers with rates ``p`` (right) and ``q`` (left)."""

    family = "line"
    max_degree = 2
    is_tree = True

    def __init__(self, p=0.5, q=0.5):
        if not (float(p) > 0 and float(q) > 0):
            raise ParameterError("line rates p and q must be positive")
        self.p, self.q = p, q
        self._p, self._q = _rate(p), _rate(q)
        super().__init__(0)

    def params(self):
        return {"p": self.p, "q": self.q}

    def neighbors(self, x):
        return [(x + 1, self._p, self._q), (x - 1, self._q, self._p)]

    def moves(self, x):
        return [x + 1, x - 1], [self._p, self._q]

    def contains(self, v):
        return isinstance(v, (int, np.integer))

    def distance(self, x, y):
        return abs(x - y)

    def height(self, x):
        return x

    def geodesic(self, x, y):
        step = 1 if y >= x else -1
        return list(range(x, y + step, step))

    def translate(self, v, offset):
        return v + offset

    def offset(self, base, v):
        return v - base

    def order_key(self, v):
        return v

    def normalize_config(self, cfg):
        x0 = cfg[0]
        return tuple(x - x0 for x in cfg), x0

    def parse(self, text):
        return int(text)


class LampertiRate:
    """Up-rate ``q(x, x+1) = (2x + theta) / (4x)``, i.e. mean drift ``theta / (2x)``.

    Returns exact fractions for integer ``theta`` so drift checks can be
    carried out without rounding in the rates themselves.
    """

    def __init__(self, theta=1):
        self.theta = theta

    def __call__(self, x):
        if isinstance(self.theta, int):
            return Fraction(2 * x + self.theta, 4 * x)
        return (2 * x + self.theta) / (4 * x)

    def __repr__(self):
        return f"LampertiRate({self.theta!r})"

    def __eq__(self, other):
        return isinstance(other, LampertiRate) and other.theta == self.theta

    def __hash__(self):
        return hash(("LampertiRate", self.theta))


class LampertiHalfLine(Substrate):
    """Birth-death chain on ``{0, 1, 2, ...}``.

    ``up_rate(x)`` gives ``q(x, x+1)`` for ``x >= 1`` and must lie in (0, 1);
    ``q(x, x-1) = 1 - up_rate(x)``.  The origin reflects with rate
    ``zero_rate`` to 1.
    """

    family = "lamperti_halfline"
    max_degree = 2
    is_tree = True

    def __init__(self, up_rate: Callable[[int], Any] | None = None, zero_rate=1):
        self.up_rate = up_rate if up_rate is not None else LampertiRate(1)
        self.zero_rate = zero_rate
        if not float(zero_rate) > 0:
            raise ParameterError("zero_rate must be positive")
        self._cache: dict[int, tuple[float, float]] = {}
        super().__init__(0)

    def params(self):
        return {"up_rate": self.up_rate, "zero_rate": self.zero_rate}

    def _rates(self, x):
        """Return ``(q(x, x+1), q(x, x-1))`` as doubles."""
        hit = self._cache.get(x)
        if hit is not None:
            return hit
        if x == 0:
            out = (_rate(self.zero_rate), 0.0)
        else:
            up = self.up_rate(x)
            if not 0 < up < 1:
                raise ParameterError(f"up_rate({x}) = {up!r} is outside (0, 1)")
            out = (float(up), float(1 - up))
        if len(self._cache) < 1_000_000:
            self._cache[x] = out
        return out

    def neighbors(self, x):
        if x < 0:
            raise ParameterError("half-line vertices are non-negative")
        up, down = self._rates(x)
        out = [(x + 1, up, self._rates(x + 1)[1])]
        if x > 0:
            out.append((x - 1, down, self._rates(x - 1)[0]))
        return out

    def contains(self, v):
        return isinstance(v, (int, np.integer)) and v >= 0

    def distance(self, x, y):
        return abs(x - y)

    def height(self, x):
        return x

    def geodesic(self, x, y):
        step = 1 if y >= x else -1
        return list(range(x, y + step, step))

    def order_key(self, v):
        return v

    def parse(self, text):
        return int(text)


class DecoratedLine(Substrate):
    """Integers with one pendant vertex hanging off every power of two ``2^k``, ``k >= min_exponent``.

    All rates equal ``rate`` (simple random walk).
    """

    family = "decorated_line"
    max_degree = 3
    is_tree = True

    def __init__(self, rate=1, min_exponent=1):
        self.rate = rate
        self.min_exponent = int(min_exponent)
        if self.min_exponent < 0:
            raise ParameterError("min_exponent must be non-negative")
        self._r = _rate(rate)
        if self._r <= 0:
            raise ParameterError("rate must be positive")
        super().__init__((0, 0))

    def params(self):
        return {"rate": self.rate, "min_exponent": self.min_exponent}

    def has_pendant(self, x) -> bool:
        return x >= (1 << self.min_exponent) and x & (x - 1) == 0

    def neighbors(self, v):
        x, flag = v
        r = self._r
        if flag:
            if not self.has_pendant(x):
                raise ParameterError(f"no pendant at {x}")
            return [((x, 0), r, r)]
        out = [((x + 1, 0), r, r), ((x - 1, 0), r, r)]
        if self.has_pendant(x):
            out.append(((x, 1), r, r))
        return out

    def contains(self, v):
        return (isinstance(v, tuple) and len(v) == 2 and v[1] in (0, 1)
                and (v[1] == 0 or self.has_pendant(v[0])))

    def distance(self, a, b):
        if a == b:
            return 0
        return abs(a[0] - b[0]) + a[1] + b[1]

    def height(self, v):
        return v[0]

    def geodesic(self, a, b):
        path = [a] if a[1] else []
        step = 1 if b[0] >= a[0] else -1
        path += [(x, 0) for x in range(a[0], b[0] + step, step)]
        if b[1]:
            path.append(b)
        if a == b:
            return [a]
        return path

    def format(self, v):
        return f"{v[0]}*" if v[1] else str(v[0])

    def parse(self, text):
        text = text.strip()
        if text.endswith("*"):
            return (int(text[:-1]), 1)
        return (int(text), 0)


class StarOfSegments(Substrate):
    """Segments ``[0, N]``, ``N = 1..n_max``, glued at their origins.

    The hub leaves into segment ``N`` with rate proportional to ``2^-N``
    (renormalised over ``N <= n_max``); inside a segment the walk steps out
    with rate ``p`` and back with rate ``q = 1 - p``.  At a segment tip the
    discrete chain's self-loop is represented by holding: only the inward
    rate ``q`` is present.
    """

    family = "star_of_segments"
    is_tree = True

    def __init__(self, p=Fraction(2, 3), n_max=12):
        if not 0 < float(p) < 1:
            raise ParameterError("p must lie in (0, 1)")
        if int(n_max) < 1:
            raise ParameterError("n_max must be at least 1")
        self.p = p
        self.n_max = int(n_max)
        self.max_degree = max(2, self.n_max)
        q = 1 - p
        self._p, self._q = _rate(p), _rate(q)
        norm = sum(Fraction(1, 2 ** n) for n in range(1, self.n_max + 1))
        self._hub = [0.0] + [float(Fraction(1, 2 ** n) / norm) for n in range(1, self.n_max + 1)]
        super().__init__((0, 0))

    def params(self):
        return {"p": self.p, "n_max": self.n_max}

    def neighbors(self, v):
        n, x = v
        p, q = self._p, self._q
        if n == 0:
            if x != 0:
                raise ParameterError("hub address is (0, 0)")
            return [((m, 1), self._hub[m], q) for m in range(1, self.n_max + 1)]
        if not (1 <= n <= self.n_max and 1 <= x <= n):
            raise ParameterError(f"vertex {v!r} outside the star")
        out = []
        if x < n:
            out.append(((n, x + 1), p, q))
        down = (0, 0) if x == 1 else (n, x - 1)
        out.append((down, q, self._hub[n] if x == 1 else p))
        return out

    def contains(self, v):
        return v == (0, 0) or (isinstance(v, tuple) and len(v) == 2 and 1 <= v[0] <= self.n_max
                               and 1 <= v[1] <= v[0])

    def distance(self, a, b):
        if a == b:
            return 0
        if a[0] == b[0]:
            return abs(a[1] - b[1])
        return a[1] + b[1]

    def height(self, v):
        return v[1]

    def geodesic(self, a, b):
        def to_hub(v):
            return [(v[0], x) for x in range(v[1], 0, -1)]
        if a == b:
            return [a]
        if a[0] == b[0] and a[0] != 0:
            step = 1 if b[1] >= a[1] else -1
            return [(a[0], x) for x in range(a[1], b[1] + step, step)]
        return to_hub(a) + [(0, 0)] + to_hub(b)[::-1]

    def format(self, v):
        return "0" if v == (0, 0) else f"{v[0]}:{v[1]}"

    def parse(self, text):
        text = text.strip()
        if text == "0":
            return (0, 0)
        n, x = text.split(":")
        return (int(n), int(x))


# -- trees -----------------------------------------------------------------------


def _common_prefix(a: tuple, b: tuple) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


def _format_word(w) -> str:
    return ".".join(str(c) for c in w)


def _parse_word(text: str) -> tuple:
    return tuple(int(c) for c in text.split(".")) if text else ()


class RootedTree(Substrate):
    """Homogeneous tree of degree ``M`` rooted at the empty word.

    The root has ``M`` children labelled ``0..M-1``; every other vertex has
    ``M - 1`` children labelled ``0..M-2``.  All rates equal ``rate``.
    """

    family = "rooted_tree"
    is_tree = True

    def __init__(self, M=3, rate=1):
        if int(M) < 3:
            raise ParameterError("tree degree M must be at least 3")
        self.M = int(M)
        self.max_degree = self.M
        self.rate = rate
        self._r = _rate(rate)
        if self._r <= 0:
            raise ParameterError("rate must be positive")
        super().__init__(())

    def params(self):
        return {"M": self.M, "rate": self.rate}

    def neighbors(self, w):
        r = self._r
        out = [] if not w else [(w[:-1], r, r)]
        fan = self.M if not w else self.M - 1
        out += [(w + (j,), r, r) for j in range(fan)]
        return out

    def contains(self, w):
        if not isinstance(w, tuple):
            return False
        if w and not 0 <= w[0] < self.M:
            return False
        return all(0 <= c < self.M - 1 for c in w[1:])

    def distance(self, a, b):
        c = _common_prefix(a, b)
        return len(a) + len(b) - 2 * c

    def height(self, w):
        return len(w)

    def geodesic(self, a, b):
        c = _common_prefix(a, b)
        up = [a[:i] for i in range(len(a), c - 1, -1)]
        down = [b[:i] for i in range(c + 1, len(b) + 1)]
        return up + down

    def format(self, w):
        return f"{len(w)}:{_format_word(w)}"

    def parse(self, text):
        level, word = text.split(":")
        w = _parse_word(word)
        if len(w) != int(level):
            raise ParameterError(f"level {level} does not match word {word!r}")
        return w


class TreeWithEnd(Substrate):
    """Homogeneous tree of degree ``M`` organised by horocycles around a fixed end.

    Every vertex has one father (towards the end) reached with rate
    ``(1 - a) * scale`` and ``M - 1`` sons, each reached with rate
    ``a / (M - 1) * scale``.  With ``a = (M - 1) / M`` and ``scale = M`` all
    rates equal one, i.e. the simple random walk.

    Address ``(u, w)``: climb ``u`` fathers from the origin to the ancestor
    ``a_u``, then descend along the son labels in ``w`` (letters
    ``0..M-2``).  Son 0 of ``a_u`` is ``a_{u-1}``, so for ``u > 0`` a
    nonempty ``w`` never starts with 0.
    """

    family = "tree_with_end"
    is_tree = True

    def __init__(self, M=3, a=Fraction(1, 2), scale=1):
        if int(M) < 3:
            raise ParameterError("tree degree M must be at least 3")
        if not 0 < float(a) < 1:
            raise ParameterError("a must lie strictly between 0 and 1")
        self.M, self.a, self.scale = int(M), a, scale
        self.max_degree = self.M
        self._up = _rate((1 - a) * scale)
        self._down = _rate(a * scale / (self.M - 1))
        if self._up <= 0 or self._down <= 0:
            raise ParameterError("rates must be positive")
        super().__init__((0, ()))

    def params(self):
        return {"M": self.M, "a": self.a, "scale": self.scale}

    def father(self, v):
        u, w = v
        return (u, w[:-1]) if w else (u + 1, ())

    def sons(self, v):
        u, w = v
        if w or u == 0:
            return [(u, w + (j,)) for j in range(self.M - 1)]
        return [(u - 1, ())] + [(u, (j,)) for j in range(1, self.M - 1)]

    def neighbors(self, v):
        up, down = self._up, self._down
        out = [(self.father(v), up, down)]
        out += [(s, down, up) for s in self.sons(v)]
        return out

    def moves(self, v):
        targets = [self.father(v)] + self.sons(v)
        return targets, [self._up] + [self._down] * (self.M - 1)

    def contains(self, v):
        if not (isinstance(v, tuple) and len(v) == 2 and isinstance(v[1], tuple)):
            return False
        u, w = v
        if u < 0 or any(not 0 <= c < self.M - 1 for c in w):
            return False
        return not (u > 0 and w and w[0] == 0)

    def descent_word(self, v, top: int) -> tuple:
        """Son labels leading from the ancestor ``a_top`` down to ``v``."""
        u, w = v
        return (0,) * (top - u) + w

    def distance(self, x, y):
        ux, wx = x
        uy, wy = y
        if ux == uy:
            c = _common_prefix(wx, wy)
            return len(wx) + len(wy) - 2 * c
        if ux > uy:
            ux, wx, uy, wy = uy, wy, ux, wx
        # x hangs below a_uy through son 0; y's word starts with a nonzero letter.
        return uy - ux + len(wx) + len(wy)

    def height(self, v):
        return len(v[1]) - v[0]

    def meet(self, x, y):
        """Confluent of ``x`` and ``y`` with respect to the end."""
        top = max(x[0], y[0])
        a, b = self.descent_word(x, top), self.descent_word(y, top)
        c = _common_prefix(a, b)
        return self._from_descent(top, a[:c])

    def _from_descent(self, top, word):
        # strip leading zeros back into the ancestor count
        i = 0
        while i < len(word) and i < top and word[i] == 0:
            i += 1
        return (top - i, word[i:])

    def normalize_config(self, cfg):
        # Map the first leg to the origin.  The automorphism sends its
        # ancestor at depth i (from a_top) to a_{n-i}, relabelling the son
        # on the first leg's path as son 0; other branches keep their labels.
        base = cfg[0]
        top = max(v[0] for v in cfg)
        dx = self.descent_word(base, top)
        n = len(dx)
        out = []
        for v in cfg:
            dv = self.descent_word(v, top)
            c = _common_prefix(dx, dv)
            if c == n:
                word = (0,) * n + dv[n:]
            elif c == len(dv):
                word = (0,) * c
            else:
                j = dx[c] if dv[c] == 0 else dv[c]
                word = (0,) * c + (j,) + dv[c + 1:]
            out.append(self._from_descent(n, word))
        return tuple(out), n - top

    def geodesic(self, x, y):
        top = max(x[0], y[0])
        a, b = self.descent_word(x, top), self.descent_word(y, top)
        c = _common_prefix(a, b)
        up = [self._from_descent(top, a[:i]) for i in range(len(a), c - 1, -1)]
        down = [self._from_descent(top, b[:i]) for i in range(c + 1, len(b) + 1)]
        return up + down

    def format(self, v):
        return f"{v[0]}:{_format_word(v[1])}"

    def parse(self, text):
        u, word = text.split(":")
        v = (int(u), _parse_word(word))
        if not self.contains(v):
            raise ParameterError(f"{text!r} is not a canonical address")
        return v


class ProductZ3Z(Substrate):
    """Cartesian product of the 3-cycle and the integers, unit rates by default."""

    family = "product_z3_z"
    max_degree = 4

    def __init__(self, cycle_rate=1, line_rate=1):
        self.cycle_rate, self.line_rate = cycle_rate, line_rate
        self._c, self._l = _rate(cycle_rate), _rate(line_rate)
        if self._c <= 0 or self._l <= 0:
            raise ParameterError("rates must be positive")
        super().__init__((0, 0))

    def params(self):
        return {"cycle_rate": self.cycle_rate, "line_rate": self.line_rate}

    def neighbors(self, v):
        u, x = v
        c, l = self._c, self._l
        return [(((u + 1) % 3, x), c, c), (((u - 1) % 3, x), c, c),
                ((u, x + 1), l, l), ((u, x - 1), l, l)]

    def contains(self, v):
        return isinstance(v, tuple) and len(v) == 2 and v[0] in (0, 1, 2)

    def distance(self, a, b):
        return (a[0] != b[0]) + abs(a[1] - b[1])

    def height(self, v):
        return v[1]

    def translate(self, v, offset):
        return ((v[0] + offset[0]) % 3, v[1] + offset[1])

    def offset(self, base, v):
        return ((v[0] - base[0]) % 3, v[1] - base[1])

    def normalize_config(self, cfg):
        base = cfg[0]
        return tuple(self.offset(base, v) for v in cfg), base[1]

    def format(self, v):
        return f"{v[0]},{v[1]}"

    def parse(self, text):
        u, x = text.split(",")
        return (int(u) % 3, int(x))


FAMILIES = {
    "line": Line,
    "lamperti_halfline": LampertiHalfLine,
    "rooted_tree": RootedTree,
    "tree_with_end": TreeWithEnd,
    "product_z3_z": ProductZ3Z,
    "decorated_line": DecoratedLine,
    "star_of_segments": StarOfSegments,
}


def parse_number(value):
    """Accept ints, floats, or exact ``"num/den"`` strings."""
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError as exc:
            raise ParameterError(f"cannot parse number {value!r}") from exc
    return value


def generate(family: str, **params) -> Substrate:
    """Build a substrate of the named family.

    Numeric parameters may be given as exact ``"num/den"`` strings.  The
    Lamperti family takes either ``up_rate`` (a callable) or ``theta``
    (mean drift ``theta / (2x)``).
    """
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ParameterError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}") from None
    params = {k: parse_number(v) for k, v in params.items()}
    if family == "lamperti_halfline" and "theta" in params:
        params["up_rate"] = LampertiRate(params.pop("theta"))
    if family == "tree_with_end" and params.pop("srw", False):
        M = int(params.get("M", 3))
        params.update(a=Fraction(M - 1, M), scale=M)
    try:
        return cls(**params)
    except TypeError as exc:
        raise ParameterError(str(exc)) from exc


# -- finite networks -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteNetwork:
    """Explicit vertex set with sparse rates ``q(x, y)``.

    ``rates`` is a CSR matrix indexed by vertex position.  ``boundary``
    flags vertices whose neighbourhood was cut by truncation; their
    outgoing rates are incomplete and analyses must not trust them.
    """

    vertices: tuple
    rates: sp.csr_matrix
    root: int = 0
    boundary: np.ndarray = None
    formatter: Callable[[Any], str] = str
    index: dict = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.vertices)
        if self.rates.shape != (n, n):
            raise ParameterError("rate matrix shape does not match the vertex list")
        if self.boundary is None:
            object.__setattr__(self, "boundary", np.zeros(n, dtype=bool))
        if self.index is None:
            object.__setattr__(self, "index", {v: i for i, v in enumerate(self.vertices)})
        self.rates.sort_indices()

    @classmethod
    def from_rates(cls, vertices: Sequence, rates: dict, root=0, boundary=(), formatter=str):
        """Build from ``{(i, j): q_ij}`` with integer endpoints."""
        n = len(vertices)
        if rates:
            ij = np.array(list(rates.keys()), dtype=np.int64)
            val = np.array(list(rates.values()), dtype=float)
        else:
            ij = np.zeros((0, 2), dtype=np.int64)
            val = np.zeros(0)
        mat = sp.csr_matrix((val, (ij[:, 0], ij[:, 1])), shape=(n, n))
        flags = np.zeros(n, dtype=bool)
        flags[list(boundary)] = True
        return cls(tuple(vertices), mat, int(root), flags, formatter)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def idx(self, v) -> int:
        try:
            return self.index[v]
        except KeyError:
            raise NotFoundError(f"{v!r} is not a vertex of this network") from None

    def rate(self, x, y) -> float:
        return float(self.rates[self.idx(x), self.idx(y)])

    def out_edges(self, i: int):
        start, stop = self.rates.indptr[i], self.rates.indptr[i + 1]
        return self.rates.indices[start:stop], self.rates.data[start:stop]

    def exit_rates(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel()

    def check(self, tol: float = 0.0) -> None:
        """Validate adaptedness: no self-rates, non-negative, symmetric support."""
        if self.rates.diagonal().any():
            raise ParameterError("self-rates are not allowed")
        if self.rates.nnz and self.rates.data.min() < 0:
            raise ParameterError("rates must be non-negative")
        support = (self.rates > tol).astype(np.int8)
        if (support != support.T).nnz:
            raise ParameterError("rate support is not symmetric")

    def interior_connected(self) -> bool:
        from scipy.sparse.csgraph import connected_components
        inner = self.interior
        if len(inner) == 0:
            return True
        sub = self.rates[inner][:, inner]
        ncomp, _ = connected_components(sub, directed=True, connection="weak")
        return ncomp == 1

    def to_json(self) -> dict:
        coo = sp.triu(self.rates + self.rates.T, k=1).tocoo()
        edges = []
        for i, j in zip(coo.row.tolist(), coo.col.tolist()):
            edges.append([i, j, float(self.rates[i, j]), float(self.rates[j, i])])
        return {
            "vertices": [self.formatter(v) for v in self.vertices],
            "root": self.formatter(self.vertices[self.root]),
            "edges": edges,
            "boundary": np.flatnonzero(self.boundary).tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @classmethod
    def from_json(cls, doc: dict, parser: Callable[[str], Any] | None = None, formatter=str):
        """Load a network; with no ``parser`` vertices stay address strings."""
        names = doc["vertices"]
        verts = [parser(s) for s in names] if parser else list(names)
        root = doc.get("root", 0)
        if isinstance(root, str):
            root = names.index(root)
        rates = {}
        for i, j, qij, qji in doc["edges"]:
            if qij:
                rates[(int(i), int(j))] = float(qij)
            if qji:
                rates[(int(j), int(i))] = float(qji)
        net = cls.from_rates(verts, rates, root=root, boundary=doc.get("boundary", []),
                             formatter=formatter)
        net.check()
        return net

    @classmethod
    def loads(cls, text: str, **kw):
        return cls.from_json(json.loads(text), **kw)


def bfs_distances(sub: Substrate, center, radius: int, vertex_cap: int = VERTEX_CAP) -> dict:
    """Distances from ``center`` to every substrate vertex within ``radius``."""
    dist = {center: 0}
    frontier = [center]
    for d in range(1, radius + 1):
        nxt = []
        for v in frontier:
            for w, _, _ in sub.neighbors(v):
                if w not in dist:
                    dist[w] = d
                    nxt.append(w)
        if len(dist) > vertex_cap:
            raise SizeError(f"ball of radius {radius} exceeds the vertex cap {vertex_cap}")
        frontier = nxt
        if not frontier:
            break
    return dist


def materialize_ball(sub: Substrate, center=None, radius: int = 1,
                     vertex_cap: int = VERTEX_CAP) -> FiniteNetwork:
    """Cut the ball of the given radius around ``center`` out of ``sub``.

    Vertices at distance exactly ``radius`` that still have neighbours
    outside the ball are flagged as boundary.
    """
    if radius < 1:
        raise ParameterError("radius must be at least 1")
    center = sub.root if center is None else center
    dist = bfs_distances(sub, center, radius, vertex_cap)
    verts = sorted(dist, key=lambda v: dist[v])
    index = {v: i for i, v in enumerate(verts)}
    rates = {}
    boundary = []
    for v, i in index.items():
        cut = False
        for w, f, _ in sub.neighbors(v):
            j = index.get(w)
            if j is None:
                cut = True
            elif f > 0:
                rates[(i, j)] = f
        if cut:
            boundary.append(i)
    return FiniteNetwork(tuple(verts), _csr(rates, len(verts)), index[center],
                         _flags(boundary, len(verts)), sub.format, index)


def _csr(rates: dict, n: int) -> sp.csr_matrix:
    if not rates:
        return sp.csr_matrix((n, n))
    ij = np.fromiter((k for pair in rates for k in pair), dtype=np.int64, count=2 * len(rates))
    ij = ij.reshape(-1, 2)
    val = np.fromiter(rates.values(), dtype=float, count=len(rates))
    return sp.csr_matrix((val, (ij[:, 0], ij[:, 1])), shape=(n, n))


def _flags(indices: Iterable[int], n: int) -> np.ndarray:
    flags = np.zeros(n, dtype=bool)
    flags[list(indices)] = True
    return flags


def distance(net: FiniteNetwork, x, y) -> float:
    """Length of a shortest positive-rate path from ``x`` to ``y``; ``inf`` if none."""
    src, dst = net.idx(x), net.idx(y)
    if src == dst:
        return 0
    indptr, indices, data = net.rates.indptr, net.rates.indices, net.rates.data
    seen = {src}
    frontier = [src]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for i in frontier:
            for k in range(indptr[i], indptr[i + 1]):
                j = int(indices[k])
                if data[k] <= 0 or j in seen:
                    continue
                if j == dst:
                    return d
                seen.add(j)
                nxt.append(j)
        frontier = nxt
    return math.inf


def network_distances(net: FiniteNetwork, source: int, allowed: np.ndarray | None = None) -> np.ndarray:
    """Unweighted BFS distances (``inf`` where unreachable) from vertex index ``source``."""
    from scipy.sparse.csgraph import shortest_path
    graph = net.rates
    if allowed is not None:
        mask = sp.diags(allowed.astype(float))
        graph = mask @ graph @ mask
    d = shortest_path(graph, directed=True, unweighted=True, indices=source)
    return d
