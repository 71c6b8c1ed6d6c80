"""Lumpability checks, factor chains, stationary vectors and exact speeds.

A *key* maps a state to a hashable block label.  A partition is strongly
lumpable when every member of a block sends the same total rate into each
block; the factor chain then carries those aggregate rates.  Block-to-self
rates are kept (they count as jumps of the original chain), so

* ``pi_ct`` solves ``pi_ct Q = 0`` for the factor generator, and
* ``pi``, the stationary law of the factor *jump* chain, is
  ``pi_ct * exit`` renormalised.

Speeds use the jump-chain weights: ``D = sum pi * dH``, ``T = sum pi *
holding`` and ``V = D / T``.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .chain import MoveTable, SpeedReport, first_step_solve
from .errors import LumpabilityError, ParameterError, ReducibleError, SolverError
from .graphs import FiniteNetwork, Substrate
from .spider import SpiderNetwork, SpiderWalk

LUMP_TOL = 1e-12
STATIONARY_TOL = 1e-10
DENSE_LIMIT = 3000


# -- keys ------------------------------------------------------------------------


class SpanKey:
    """Largest pairwise leg distance."""

    name = "span"

    def __init__(self, sub: Substrate):
        self.sub = sub

    def __call__(self, cfg):
        d = self.sub.distance
        return max((d(a, b) for i, a in enumerate(cfg) for b in cfg[i + 1:]), default=0)


class DistanceHeightKey:
    """``(l, k)``: leg distance and absolute height difference of a two-leg spider.

    With ``signed=True`` the second entry is ``h(x2) - h(x1)``, which makes
    first-leg height increments block-measurable.
    """

    name = "distance_height"

    def __init__(self, sub: Substrate, signed: bool = False):
        self.sub, self.signed = sub, signed

    def __call__(self, cfg):
        x, y = cfg
        dh = self.sub.height(y) - self.sub.height(x)
        return (self.sub.distance(x, y), dh if self.signed else abs(dh))


class LegParityKey:
    """Parity of one leg's height (a deliberately coarse key)."""

    name = "leg_parity"

    def __init__(self, sub: Substrate, leg: int = 0):
        self.sub, self.leg = sub, leg

    def __call__(self, cfg):
        return int(self.sub.height(cfg[self.leg])) % 2


class ConstantKey:
    """Everything in one block."""

    name = "constant"

    def __init__(self, sub: Substrate | None = None):
        self.sub = sub

    def __call__(self, cfg):
        return 0


KEYS = {"span": SpanKey, "distance_height": DistanceHeightKey,
        "leg_parity": LegParityKey, "constant": ConstantKey}


def format_key(key) -> str:
    if isinstance(key, tuple):
        return "(" + ",".join(format_key(k) for k in key) + ")"
    if isinstance(key, float) and key.is_integer():
        return str(int(key))
    return str(key)


# -- partitions ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Partition:
    """Blocks of a network's interior under ``key``.

    ``labels[i]`` is the block of state ``i`` for every state (boundary
    states get labels too, possibly of blocks with no interior member).
    """

    key: Callable
    blocks: tuple                # block keys, interior blocks first
    members: dict                # key -> interior state indices
    labels: np.ndarray
    n_interior_blocks: int

    @classmethod
    def of(cls, net: FiniteNetwork, key: Callable) -> "Partition":
        order: dict = {}
        inner = set(net.interior.tolist())
        keys = [key(v) for v in net.vertices]
        for i in net.interior:
            order.setdefault(keys[i], len(order))
        n_inner = len(order)
        if n_inner == 0:
            raise ParameterError("network has no interior states")
        for k in keys:
            order.setdefault(k, len(order))
        labels = np.fromiter((order[k] for k in keys), dtype=np.int64, count=len(keys))
        members = defaultdict(list)
        for i, k in enumerate(keys):
            if i in inner:
                members[k].append(i)
        return cls(key, tuple(order), dict(members), labels, n_inner)

    def representative(self, block) -> int:
        return self.members[block][0]


def _height_categories(net: FiniteNetwork, height: Callable, digits: int = 9):
    h = np.array([height(v) for v in net.vertices], dtype=float)
    coo = net.rates.tocoo()
    dh = h[coo.col] - h[coo.row]
    return coo, dh, np.round(dh, digits)


@dataclass(frozen=True)
class LumpabilityVerdict:
    lumpable: bool
    max_defect: float
    witness: tuple | None  # (x, y, target block, rate from x, rate from y)
    n_blocks: int
    augmented: bool = False

    def __bool__(self):
        return self.lumpable


def _aggregate(net: FiniteNetwork, part: Partition, height: Callable | None):
    """Rates from every state into each (target block[, height increment]) column."""
    coo = net.rates.tocoo()
    cols = part.labels[coo.col]
    names = list(part.blocks)
    if height is not None:
        _, dh, cat = _height_categories(net, height)
        pairs = {}
        cols = np.array([pairs.setdefault((c, d), len(pairs)) for c, d in zip(cols.tolist(), cat.tolist())],
                        dtype=np.int64)
        names = [(part.blocks[c], d) for c, d in pairs]
    agg = sp.csr_matrix((coo.data, (coo.row, cols)), shape=(net.n, max(len(names), 1)))
    return agg, names


def lumpability_check(net: FiniteNetwork | SpiderNetwork, key: Callable, tol: float = LUMP_TOL,
                      height: Callable | None = None) -> LumpabilityVerdict:
    """Strong lumpability of ``key`` over the interior states.

    With ``height`` the check runs on the augmented key (target block,
    height increment), i.e. it also verifies that the increment law is a
    function of the block.
    """
    if isinstance(net, SpiderNetwork):
        net = net.network
    part = Partition.of(net, key)
    agg, names = _aggregate(net, part, height)
    worst, witness = 0.0, None
    for block, idx in part.members.items():
        if len(idx) < 2:
            continue
        rows = agg[idx].toarray()
        diff = np.abs(rows - rows[0])
        if diff.size == 0:
            continue
        r, c = np.unravel_index(int(np.argmax(diff)), diff.shape)
        d = float(diff[r, c])
        if d > worst:
            worst = d
            witness = (net.vertices[idx[0]], net.vertices[idx[r]], names[c],
                       float(rows[0, c]), float(rows[r, c]))
    ok = worst <= tol
    return LumpabilityVerdict(ok, worst, None if ok else witness, part.n_interior_blocks,
                              height is not None)


# -- factor chains ---------------------------------------------------------------


@dataclass(eq=False)
class FactorChain:
    """Lumped chain on blocks.

    ``rates[i, j]`` is the aggregate rate from block ``i`` to block ``j``
    (diagonal: moves that stay in the block).  ``dH[i]`` is the mean height
    increment per jump out of a state of block ``i`` (``nan`` without a
    height functional).
    """

    blocks: list
    rates: np.ndarray | sp.csr_matrix
    dH: np.ndarray
    members: dict = field(default_factory=dict, repr=False)
    pi: np.ndarray | None = None
    pi_ct: np.ndarray | None = None
    residual: float = math.nan

    @property
    def n(self) -> int:
        return len(self.blocks)

    @property
    def exit(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel()

    @property
    def holding(self) -> np.ndarray:
        e = self.exit
        with np.errstate(divide="ignore"):
            return np.where(e > 0, 1.0 / np.where(e > 0, e, 1.0), math.inf)

    @property
    def frozen(self) -> bool:
        return not (self.exit > 0).any()

    def index(self, block) -> int:
        return self.blocks.index(block)

    def rate(self, a, b) -> float:
        return float(self.rates[self.index(a), self.index(b)]) if b in self.blocks else 0.0

    def jump_matrix(self) -> sp.csr_matrix:
        e = self.exit
        inv = np.where(e > 0, 1.0 / np.where(e > 0, e, 1.0), 0.0)
        return sp.csr_matrix(sp.diags(inv) @ sp.csr_matrix(self.rates))

    def to_json(self) -> dict:
        R = sp.coo_matrix(self.rates)
        return {
            "blocks": [format_key(b) for b in self.blocks],
            "rates": [[int(i), int(j), float(v)] for i, j, v in zip(R.row, R.col, R.data) if v],
            "pi": None if self.pi is None else [float(x) for x in self.pi],
            "holding": [float(x) if math.isfinite(x) else None for x in self.holding],
            "dH": [None if math.isnan(x) else float(x) for x in self.dH],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def _build(blocks, rows: dict, dh: dict) -> FactorChain:
    index = {b: i for i, b in enumerate(blocks)}
    n = len(blocks)
    vals, ii, jj = [], [], []
    for b, row in rows.items():
        for t, r in row.items():
            if t not in index:
                raise ParameterError(f"block {format_key(b)} feeds block {format_key(t)}, "
                                     "which has no interior member; enlarge the ball")
            ii.append(index[b])
            jj.append(index[t])
            vals.append(r)
    R = sp.csr_matrix((vals, (ii, jj)), shape=(n, n))
    rates = R.toarray() if n <= DENSE_LIMIT else R
    return FactorChain(list(blocks), rates, np.array([dh[b] for b in blocks], dtype=float))


def factor_chain(net: FiniteNetwork | SpiderNetwork, key: Callable, height: Callable | None = None,
                 tol: float = LUMP_TOL) -> FactorChain:
    """Factor chain of a verified partition of a finite network's interior.

    Rates come from each block's first interior member.  Raises
    :class:`LumpabilityError` with a witness if the (height-augmented)
    check fails.
    """
    if isinstance(net, SpiderNetwork):
        net = net.network
    verdict = lumpability_check(net, key, tol)
    if not verdict:
        raise LumpabilityError(f"partition is not lumpable (defect {verdict.max_defect:.3g})",
                               verdict.witness)
    if height is not None:
        aug = lumpability_check(net, key, tol, height)
        if not aug:
            raise LumpabilityError("height increments are not a function of the block "
                                   f"(defect {aug.max_defect:.3g})", aug.witness)
    part = Partition.of(net, key)
    blocks = list(part.blocks[:part.n_interior_blocks])
    h = None
    if height is not None:
        h = np.array([height(v) for v in net.vertices], dtype=float)
    rows, dh = {}, {}
    for b in blocks:
        i = part.representative(b)
        idx, val = net.out_edges(i)
        row = defaultdict(float)
        for j, r in zip(idx.tolist(), val.tolist()):
            row[part.blocks[part.labels[j]]] += r
        rows[b] = dict(row)
        total = val.sum()
        dh[b] = (float(np.dot(val, h[idx] - h[i]) / total) if (h is not None and total > 0)
                 else (0.0 if h is not None else math.nan))
    fc = _build(blocks, rows, dh)
    fc.members = {b: [net.vertices[i] for i in part.members[b]] for b in blocks}
    return fc


def explore_factor_chain(walk: SpiderWalk, key: Callable, start, height: Callable | None = None,
                         members: int = 3, max_blocks: int = 200_000,
                         tol: float = LUMP_TOL) -> FactorChain:
    """Factor chain of a spider on an infinite substrate, explored lazily.

    Breadth-first search over blocks; each block collects up to ``members``
    distinct states (in the normalised frame when the substrate is
    transitive), and every collected state is checked against its block's
    first member, including the law of height increments.  The substrate
    itself is never truncated.
    """
    table = MoveTable(walk, height)
    s0, _ = table.enter(tuple(start))
    k0 = key(s0)
    pool = {k0: [s0]}
    seen = {s0}
    queue = deque([s0])
    while queue:
        st = queue.popleft()
        _, _, tg, _, _ = table.entry(st)
        for t in tg:
            if t in seen:
                continue
            kt = key(t)
            lst = pool.get(kt)
            if lst is None:
                lst = pool[kt] = []
                if len(pool) > max_blocks:
                    raise ParameterError(f"more than {max_blocks} blocks; is the key finite?")
            if len(lst) < members:
                lst.append(t)
                seen.add(t)
                queue.append(t)
    rows, dh = {}, {}
    worst, witness = 0.0, None
    for b, states in pool.items():
        ref = None
        for st in states:
            _, total, tg, inc, rs = table.entry(st)
            row = defaultdict(float)
            law = defaultdict(float)
            for t, d, r in zip(tg, inc, rs):
                kt = key(t)
                row[kt] += r
                law[(kt, round(d, 9))] += r
            if ref is None:
                ref = (row, law, st)
                rows[b] = dict(row)
                dh[b] = (sum(d * r for d, r in zip(inc, rs)) / total if total > 0 else 0.0) \
                    if height is not None else math.nan
                continue
            pairs = [(ref[0], row)] + ([(ref[1], law)] if height is not None else [])
            for a, b2 in pairs:
                for c in set(a) | set(b2):
                    d = abs(a.get(c, 0.0) - b2.get(c, 0.0))
                    if d > worst:
                        worst = d
                        witness = (ref[2], st, c, a.get(c, 0.0), b2.get(c, 0.0))
    if worst > tol:
        raise LumpabilityError(f"partition is not lumpable (defect {worst:.3g})", witness)
    blocks = sorted(pool, key=_sort_key)
    fc = _build(blocks, rows, dh)
    fc.members = {b: list(pool[b]) for b in blocks}
    return fc


def _sort_key(b):
    return (0, b) if isinstance(b, (int, float)) else (1, tuple(b)) if isinstance(b, tuple) else (2, str(b))


# -- stationary law and speed ----------------------------------------------------


def stationary(fc: FactorChain) -> np.ndarray:
    """Stationary law ``pi`` of the factor jump chain (also fills ``fc.pi_ct``).

    Grounds one equation of ``pi (P - I) = 0`` with the normalisation and
    solves directly (dense up to a few thousand blocks, sparse LU beyond).
    """
    n = fc.n
    if fc.frozen:
        raise ReducibleError("factor chain has no moves", [list(fc.blocks)])
    R = sp.csr_matrix(fc.rates)
    off = R - sp.diags(R.diagonal())
    ncomp, labels = connected_components(off, directed=True, connection="strong")
    if ncomp > 1:
        comps = [[fc.blocks[i] for i in np.flatnonzero(labels == c)] for c in range(ncomp)]
        raise ReducibleError(f"factor chain has {ncomp} communicating classes", comps)
    P = fc.jump_matrix()
    A = (P - sp.identity(n)).T.tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    if n <= DENSE_LIMIT:
        pi = np.linalg.solve(A.toarray(), b)
    else:
        pi = splu(A.tocsc()).solve(b)
    resid = float(np.abs(P.T @ pi - pi).max())
    if resid > STATIONARY_TOL or pi.min() < -STATIONARY_TOL:
        raise SolverError(f"stationary residual {resid:.3g} exceeds {STATIONARY_TOL:g}")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    ct = pi * fc.holding
    fc.pi, fc.pi_ct, fc.residual = pi, ct / ct.sum(), resid
    return pi


def exact_speed(fc: FactorChain, label: str = "") -> SpeedReport:
    """``V = D / T`` from the factor chain; a frozen chain has speed 0."""
    if fc.frozen:
        return SpeedReport(label, 0.0, 0.0, 0, 0, None, "exact", 0.0, math.inf, True)
    if np.isnan(fc.dH).any():
        raise ParameterError("factor chain carries no height increments")
    pi = fc.pi if fc.pi is not None else stationary(fc)
    D = float(pi @ fc.dH)
    T = float(pi @ fc.holding)
    return SpeedReport(label, D / T, 0.0, 0, 0, None, "exact", D, T)


def block_mass(fc: FactorChain, blocks: Iterable) -> float:
    pi = fc.pi if fc.pi is not None else stationary(fc)
    return float(sum(pi[fc.index(b)] for b in blocks))


def ksk_identity_check(fc: FactorChain, B: Iterable) -> float:
    """``|sum_{i in B} pi(i) m_{i,B} - 1|`` with jump-chain return times ``m``."""
    pi = fc.pi if fc.pi is not None else stationary(fc)
    idx = np.array(sorted({fc.index(b) for b in B}), dtype=np.int64)
    if len(idx) == 0:
        raise ParameterError("block set is empty")
    steps, _, _ = first_step_solve(fc.jump_matrix(), idx, mode="return",
                                   labels=[format_key(b) for b in fc.blocks])
    return abs(float(pi[idx] @ steps[idx]) - 1.0)


# -- reference rate table for the two-leg spider on the 3-regular tree -----------


def reference_tree_rates(s: int) -> list[tuple[str, tuple, tuple, float, bool]]:
    """Reference rate table for the SRW two-leg spider on the 3-regular tree.

    Rows are ``(rule, source, target, rate, unambiguous)`` instantiated for
    span ``s``.  ``unambiguous`` is False for the generic-interior rule,
    whose list names the same target twice with different rates.
    Keys follow the table's own ``(l, k)`` convention.  Its ``(0, s)``
    entry names no reachable block (legs are distinct and ``k <= l``), so
    it is kept as listed and repeated in the transposed reading
    ``(s, 0)``; both are flagged ambiguous.
    """
    rows = [("l=k=1", (1, 1), (2, 2), 3.0, True), ("l=k=1", (1, 1), (2, 0), 1.0, True),
            ("l=k=s", (s, s), (s - 1, s - 1), 2.0, True),
            ("l=0,k=s", (0, s), (1, s - 1), 2.0, False),
            ("l=0,k=s read as (s,0)", (s, 0), (s - 1, 1), 2.0, False)]
    for l in range(2, s):
        rows += [("1<l=k<s", (l, l), (l + 1, l + 1), 3.0, True),
                 ("1<l=k<s", (l, l), (l + 1, l - 1), 1.0, True),
                 ("1<l=k<s", (l, l), (l - 1, l - 1), 2.0, True)]
    for l in range(2, s, 2):
        rows += [("k=0", (l, 0), (l - 1, 1), 2.0, True), ("k=0", (l, 0), (l + 1, 1), 4.0, True)]
    for l in range(3, s):
        for k in range(1, l):
            if (l - k) % 2:
                continue
            rows += [("0<k<l<s", (l, k), (l + 1, k - 1), 1.0, False),
                     ("0<k<l<s", (l, k), (l + 1, k + 1), 1.0, False),
                     ("0<k<l<s", (l, k), (l + 1, k - 1), 2.0, False),
                     ("0<k<l<s", (l, k), (l - 1, k + 1), 2.0, False)]
    for k in range(1, s):
        if (s - k) % 2 == 0:
            rows += [("l=s", (s, k), (s - 1, k - 1), 1.0, True), ("l=s", (s, k), (s - 1, k + 1), 1.0, True)]
    return rows


@dataclass(frozen=True)
class RateComparison:
    rule: str
    source: tuple
    target: tuple
    reference: float
    derived: float
    unambiguous: bool

    @property
    def match(self) -> bool:
        return abs(self.reference - self.derived) < LUMP_TOL


def compare_tree_rates(fc: FactorChain, s: int) -> list[RateComparison]:
    """Confront derived factor rates with :func:`reference_tree_rates`.

    A source block absent from the factor chain (such as the table's
    ``(0, s)``) yields ``derived = nan``.
    """
    out = []
    for rule, a, b, v, clear in reference_tree_rates(s):
        derived = fc.rate(a, b) if a in fc.blocks else math.nan
        out.append(RateComparison(rule, a, b, v, derived, clear))
    return out


def derived_rate_table(fc: FactorChain) -> list[tuple[tuple, tuple, float]]:
    """All nonzero off-diagonal factor rates as ``(source, target, rate)``."""
    R = sp.coo_matrix(fc.rates)
    return sorted((fc.blocks[i], fc.blocks[j], float(v))
                  for i, j, v in zip(R.row, R.col, R.data) if v and i != j)
