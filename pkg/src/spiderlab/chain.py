"""Continuous-time chain machinery on finite networks and lazy spider walks.

Linear algebra works on :class:`~spiderlab.graphs.FiniteNetwork` objects:
jump chains, reversible measures and conductances, effective resistances
(Dirichlet problems) and first-step hitting-time systems.  Simulation works
on the lazy oracles directly, so it carries no truncation bias.
"""
from __future__ import annotations

import csv
import io
import math
import os
from bisect import bisect_right
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import cg, splu

from .errors import (AbsorbingStateError, NonReversibleError, ParameterError, SolverError,
                     UnreachableError)
from .graphs import FiniteNetwork, Substrate
from .spider import ConfigRule, SpiderWalk

RESIDUAL_TOL = 1e-10
BALANCE_TOL = 1e-12


# -- jump chain ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JumpChain:
    """Embedded discrete chain: ``P[x, y] = q(x, y) / rate(x)``.

    Rows of states with zero exit rate (allowed only on the boundary) are
    left empty.
    """

    network: FiniteNetwork
    P: sp.csr_matrix
    rate: np.ndarray
    holding: np.ndarray

    def p(self, x, y) -> float:
        net = self.network
        return float(self.P[net.idx(x), net.idx(y)])


def jump_chain(net: FiniteNetwork) -> JumpChain:
    rate = net.exit_rates()
    stuck = np.flatnonzero((rate <= 0) & ~net.boundary)
    if len(stuck):
        names = [net.formatter(net.vertices[i]) for i in stuck[:5]]
        raise AbsorbingStateError(f"{len(stuck)} interior state(s) have no exit rate, e.g. {names}")
    with np.errstate(divide="ignore"):
        inv = np.where(rate > 0, 1.0 / np.where(rate > 0, rate, 1.0), 0.0)
    P = sp.diags(inv) @ net.rates
    holding = np.where(rate > 0, inv, math.inf)
    return JumpChain(net, sp.csr_matrix(P), rate, holding)


# -- reversibility and electrical networks ---------------------------------------


@dataclass(frozen=True, eq=False)
class ReversibleStructure:
    """Reversible measure ``mu`` (``mu[root] = 1``), ``pi = rate * mu`` and conductances.

    ``conductance[x, y] = mu(x) q(x, y) = pi(x) p(x, y)``, symmetric.
    """

    network: FiniteNetwork
    mu: np.ndarray
    pi: np.ndarray
    conductance: sp.csr_matrix
    balance_residual: float

    def resistance(self, x, y) -> float:
        c = float(self.conductance[self.network.idx(x), self.network.idx(y)])
        return math.inf if c == 0 else 1.0 / c


def _tree_path(parent: np.ndarray, a: int, b: int) -> list[int]:
    up_a, up_b = [a], [b]
    seen = {a: 0}
    while parent[up_a[-1]] >= 0:
        up_a.append(int(parent[up_a[-1]]))
        seen[up_a[-1]] = len(up_a) - 1
    while up_b[-1] not in seen:
        up_b.append(int(parent[up_b[-1]]))
    cut = seen[up_b[-1]]
    return up_a[:cut + 1] + up_b[-2::-1]


def reversible_measure(net: FiniteNetwork, tol: float = BALANCE_TOL) -> ReversibleStructure:
    """Propagate ``mu`` along a BFS spanning tree and check every remaining edge.

    The check is relative: ``|mu(x) q(x,y) - mu(y) q(y,x)| <= tol * max(...)``.
    """
    net.check()
    Q = net.rates
    order, pred = breadth_first_order(Q, net.root, directed=True, return_predecessors=True)
    if len(order) < net.n:
        missing = np.setdiff1d(np.arange(net.n), order)
        if not net.boundary[missing].all() or not net.interior_connected():
            raise UnreachableError("network is not connected from the root",
                                   [net.vertices[i] for i in missing[:10]])
    mu = np.zeros(net.n)
    mu[net.root] = 1.0
    QT = Q.T.tocsr()
    for y in order[1:]:
        x = pred[y]
        mu[y] = mu[x] * Q[x, y] / QT[x, y]
    coo = Q.tocoo()
    flow = mu[coo.row] * coo.data
    back = mu[coo.col] * np.asarray(QT[coo.row, coo.col]).ravel()
    scale = np.maximum(np.abs(flow), np.abs(back))
    rel = np.abs(flow - back) / np.where(scale > 0, scale, 1.0)
    worst = int(np.argmax(rel)) if len(rel) else 0
    resid = float(rel[worst]) if len(rel) else 0.0
    if resid > tol:
        x, y = int(coo.row[worst]), int(coo.col[worst])
        cycle = _tree_path(pred, x, y) + [x]
        names = [net.formatter(net.vertices[i]) for i in cycle]
        raise NonReversibleError(f"detailed balance fails on the cycle {' -> '.join(names)} "
                                 f"(relative defect {resid:.3g})", [net.vertices[i] for i in cycle])
    C = sp.csr_matrix((flow, (coo.row, coo.col)), shape=Q.shape)
    C = (C + C.T) * 0.5
    pi = mu * net.exit_rates()
    return ReversibleStructure(net, mu, pi, sp.csr_matrix(C), resid)


@dataclass(frozen=True)
class ResistanceSolution:
    value: float
    current: float
    potential: np.ndarray
    residual: float
    solver: str


def _dirichlet(C: sp.csr_matrix, source: int, sinks: np.ndarray, method: str, tol: float):
    n = C.shape[0]
    fixed = np.zeros(n, dtype=bool)
    fixed[sinks] = True
    fixed[source] = True
    # restrict to the component of the source; other components carry no current
    _, labels = connected_components(C, directed=False)
    comp = labels == labels[source]
    if not comp[sinks].any():
        raise SolverError("no sink is connected to the source")
    free = np.flatnonzero(comp & ~fixed)
    deg = np.asarray(C.sum(axis=1)).ravel()
    v = np.zeros(n)
    v[source] = 1.0
    if len(free) == 0:
        return v, 0.0, "none"
    L = (sp.diags(deg) - C).tocsr()
    A = L[free][:, free].tocsc()
    b = -L[free][:, [source]].toarray().ravel()
    bnorm = np.linalg.norm(b) or 1.0
    used = method
    x = None
    if method in ("cg", "auto"):
        M = sp.diags(1.0 / A.diagonal())
        x, info = cg(A, b, rtol=tol * 1e-3, atol=0.0, maxiter=max(1000, 20 * len(free)), M=M)
        res = np.linalg.norm(A @ x - b) / bnorm
        if info != 0 or res > tol:
            if method == "cg":
                raise SolverError(f"conjugate gradient failed (info={info}, residual {res:.3g})")
            x = None
    if x is None:
        used = "lu"
        x = splu(A).solve(b)
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    if res > tol:
        raise SolverError(f"Dirichlet solve residual {res:.3g} exceeds {tol:g}")
    v[free] = x
    return v, res, used


def effective_resistance(net: FiniteNetwork, source, sinks, method: str = "auto",
                         tol: float = RESIDUAL_TOL, detail: bool = False):
    """Resistance between ``source`` and the set ``sinks`` (vertex addresses).

    Unit potential at the source, zero on the sinks; the resistance is the
    inverse of the current leaving the source.  ``method`` is ``"cg"``
    (preconditioned conjugate gradient, fails loudly), ``"lu"``, or
    ``"auto"`` (CG with an LU fallback).
    """
    rev = reversible_measure(net)
    s = net.idx(source)
    sink_idx = np.array(sorted({net.idx(v) for v in sinks}), dtype=np.int64)
    if len(sink_idx) == 0:
        raise ParameterError("sink set is empty")
    if s in set(sink_idx.tolist()):
        raise ParameterError("source lies in the sink set")
    C = rev.conductance
    v, res, used = _dirichlet(C, s, sink_idx, method, tol)
    start, stop = C.indptr[s], C.indptr[s + 1]
    current = float(np.dot(C.data[start:stop], 1.0 - v[C.indices[start:stop]]))
    if current <= 0:
        raise SolverError("no current flows from the source")
    out = ResistanceSolution(1.0 / current, current, v, res, used)
    return out if detail else out.value


def resistance_to_boundary(net: FiniteNetwork, **kw):
    """Effective resistance from the root to the boundary-flagged vertices."""
    sinks = [net.vertices[i] for i in np.flatnonzero(net.boundary)]
    return effective_resistance(net, net.vertices[net.root], sinks, **kw)


# -- hitting times ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HittingTimeReport:
    """Expected hitting (``mode="hit"``) or return times of a target set.

    ``steps`` counts jump-chain steps, ``time`` is continuous time.  In hit
    mode targets get 0; in return mode target entries hold the return
    times and the others the hitting times.  Boundary states are treated as
    absorbing (value 0) and ``truncated`` records whether the walk can
    reach one before the target.
    """

    states: tuple
    target: tuple
    mode: str
    steps: np.ndarray
    time: np.ndarray
    residual: float
    truncated: bool

    def at(self, state, continuous: bool = False) -> float:
        i = self.states.index(state) if not isinstance(state, (int, np.integer)) else int(state)
        return float((self.time if continuous else self.steps)[i])


def first_step_solve(P: sp.spmatrix, targets: np.ndarray, holding: np.ndarray | None = None,
                     absorbing: np.ndarray | None = None, mode: str = "hit",
                     labels: Sequence | None = None):
    """Solve ``m = c + P m`` off the target set.

    ``P`` may carry diagonal (self-loop) entries.  Returns ``(steps, time,
    residual)``; ``time`` weights each visit by ``holding``.
    """
    if mode not in ("hit", "return"):
        raise ParameterError(f"mode must be 'hit' or 'return', not {mode!r}")
    P = sp.csr_matrix(P)
    n = P.shape[0]
    stop = np.zeros(n, dtype=bool)
    stop[targets] = True
    if absorbing is not None:
        stop |= absorbing
    free = np.flatnonzero(~stop)
    hold = np.ones(n) if holding is None else np.asarray(holding, dtype=float)
    steps = np.zeros(n)
    time = np.zeros(n)
    residual = 0.0
    if len(free):
        # states that cannot reach a stopping state have infinite expectations
        G = P.T.tocsr()
        reach = np.zeros(n, dtype=bool)
        queue = deque(np.flatnonzero(stop).tolist())
        reach[stop] = True
        while queue:
            j = queue.popleft()
            for i in G.indices[G.indptr[j]:G.indptr[j + 1]]:
                if not reach[i]:
                    reach[i] = True
                    queue.append(i)
        bad = free[~reach[free]]
        if len(bad):
            names = [labels[i] for i in bad[:10]] if labels is not None else bad[:10].tolist()
            raise UnreachableError(f"{len(bad)} state(s) cannot reach the target set", names)
        A = (sp.identity(len(free), format="csr") - P[free][:, free]).tocsc()
        lu = splu(A)
        rhs = np.column_stack([np.ones(len(free)), hold[free]])
        sol = lu.solve(rhs)
        res = np.abs(A @ sol - rhs).max(axis=0) / np.maximum(np.abs(rhs).max(axis=0), 1.0)
        residual = float(res.max())
        if residual > RESIDUAL_TOL:
            raise SolverError(f"first-step residual {residual:.3g} exceeds {RESIDUAL_TOL:g}")
        steps[free], time[free] = sol[:, 0], sol[:, 1]
    if mode == "return":
        tg = np.asarray(targets)
        steps[tg] = 1.0 + P[tg] @ steps
        time[tg] = hold[tg] + P[tg] @ time
    return steps, time, residual


def hitting_times(net: FiniteNetwork, target, mode: str = "hit") -> HittingTimeReport:
    """Expected hitting or return times of ``target`` (iterable of addresses)."""
    tg = np.array(sorted({net.idx(v) for v in target}), dtype=np.int64)
    if len(tg) == 0:
        raise ParameterError("target set is empty")
    jc = jump_chain(net)
    absorbing = net.boundary.copy()
    absorbing[tg] = False
    labels = [net.formatter(v) for v in net.vertices]
    steps, time, residual = first_step_solve(jc.P, tg, jc.holding, absorbing, mode, labels)
    truncated = False
    if absorbing.any():
        # boundary hit before the target by some free state?
        hit_edge = jc.P[:, np.flatnonzero(absorbing)].sum(axis=1)
        free = ~absorbing
        free[tg] = False
        truncated = bool(np.asarray(hit_edge).ravel()[free].any())
    return HittingTimeReport(net.vertices, tuple(net.vertices[i] for i in tg), mode,
                             steps, time, residual, truncated)


# -- simulation ------------------------------------------------------------------


def substream(seed: int, replica: int = 0) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(seed, replica)``."""
    if seed is None:
        raise ParameterError("a seed is required for stochastic analyses")
    key = np.array([int(seed) & (2**64 - 1), int(replica) & (2**64 - 1)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class NetworkWalk:
    """Oracle view of a finite network's states (by index), for simulation."""

    def __init__(self, net: FiniteNetwork):
        self.network = net

    def moves(self, i):
        idx, val = self.network.out_edges(i)
        return idx.tolist(), val.tolist()

    def format(self, i):
        return self.network.formatter(self.network.vertices[i])


class VertexHeight:
    """Substrate height of a bare vertex (single-walker simulations)."""

    def __init__(self, sub: Substrate):
        self.sub = sub

    def __call__(self, v) -> float:
        return float(self.sub.height(v))


class SingleWalker:
    """A substrate seen as a one-leg walk whose states are bare vertices."""

    def __init__(self, sub: Substrate):
        self.substrate = sub

    def moves(self, v):
        return self.substrate.moves(v)

    def format(self, v):
        return self.substrate.format(v)


def _as_walk(obj):
    if isinstance(obj, (SpiderWalk, NetworkWalk, SingleWalker)):
        return obj
    if isinstance(obj, Substrate):
        return SingleWalker(obj)
    if isinstance(obj, FiniteNetwork):
        return NetworkWalk(obj)
    if isinstance(obj, tuple) and len(obj) == 2:
        return SpiderWalk(*obj)
    raise ParameterError(f"cannot simulate {type(obj).__name__}")


class MoveTable:
    """Memoised move lists ``state -> (cumulative rates, total, targets, height increments)``.

    When the substrate offers :meth:`~spiderlab.graphs.Substrate.normalize_config`
    and the rule is symmetric, states are kept in the normalised frame, so a
    walk on an infinite transitive substrate only ever meets finitely many
    states.  Height increments then use the frame shift, which requires an
    automorphism-equivariant height (both built-in heights are).
    """

    def __init__(self, walk, height: Callable | None = None, normalize: bool = True,
                 max_entries: int = 2_000_000):
        self.walk = walk
        self.height = height
        self.max_entries = max_entries
        self.table: dict = {}
        self._norm = None
        if normalize and isinstance(walk, SpiderWalk) and walk.rule.kind != "custom":
            sub = walk.substrate
            if sub.normalize_config(tuple([sub.root] * walk.rule.k)) is not None:
                self._norm = sub.normalize_config

    @property
    def normalized(self) -> bool:
        return self._norm is not None

    def enter(self, state):
        """Return ``(state in table frame, height of the original state)``."""
        h = self.height(state) if self.height is not None else 0.0
        if self._norm is not None:
            state, _ = self._norm(state)
        return state, h

    def entry(self, state):
        e = self.table.get(state)
        if e is not None:
            return e
        targets, rates = self.walk.moves(state)
        pairs = [(t, float(r)) for t, r in zip(targets, rates) if r > 0]
        H = self.height
        h0 = H(state) if H is not None else 0.0
        tg, dh, cum = [], [], []
        total = 0.0
        for t, r in pairs:
            if self._norm is not None:
                img, shift = self._norm(t)
                d = (H(img) + shift - h0) if H is not None else 0.0
                t = img
            else:
                d = (H(t) - h0) if H is not None else 0.0
            total += r
            tg.append(t)
            dh.append(d)
            cum.append(total)
        e = (cum, total, tg, dh, [r for _, r in pairs])
        if len(self.table) >= self.max_entries:
            self.table.clear()
        self.table[state] = e
        return e


@dataclass(frozen=True, eq=False)
class Trace:
    """One simulated trajectory: jump times (``times[0] = 0``) and visited states."""

    times: np.ndarray
    states: list
    seed: int
    replica: int
    n_jumps: int
    frozen: bool
    heights: np.ndarray | None = None

    def to_csv(self, fmt: Callable[[Any], str] = str) -> str:
        return traces_to_csv([self], fmt)


def traces_to_csv(traces: Sequence[Trace], fmt: Callable[[Any], str] = str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica", "jump_index", "time", "state_address", "height"])
    for tr in traces:
        for j, (t, s) in enumerate(zip(tr.times, tr.states)):
            h = "" if tr.heights is None else repr(float(tr.heights[j]))
            w.writerow([tr.replica, j, repr(float(t)), fmt(s), h])
    return buf.getvalue()


_BATCH = 1 << 14


def simulate(model, start, n_jumps: int, seed: int, replica: int = 0,
             height: Callable | None = None) -> Trace:
    """Competing-exponentials simulation on the lazy oracle of ``model``.

    ``model`` is a :class:`SpiderWalk`, a substrate (single walker), a
    finite network (states are vertex indices) or a ``(substrate, rule)``
    pair.  A state without admissible moves ends the trace early with
    ``frozen`` set.
    """
    if n_jumps < 1:
        raise ParameterError("n_jumps must be at least 1")
    walk = _as_walk(model)
    if isinstance(walk, SpiderWalk):
        start = tuple(start)
        if not walk.admissible(start):
            from .errors import RuleViolationError
            raise RuleViolationError("start configuration is not admissible")
    rng = substream(seed, replica)
    table = MoveTable(walk, None, normalize=False, max_entries=1 << 20)
    times = np.empty(n_jumps + 1)
    times[0] = 0.0
    states = [start]
    state, t, frozen = start, 0.0, False
    j = 0
    while j < n_jumps:
        m = min(_BATCH, n_jumps - j)
        ex = rng.standard_exponential(m).tolist()
        un = rng.random(m).tolist()
        for k in range(m):
            cum, total, tg, _, _ = table.entry(state)
            if total <= 0:
                frozen = True
                break
            t += ex[k] / total
            state = tg[bisect_right(cum, un[k] * total)]
            j += 1
            times[j] = t
            states.append(state)
        if frozen:
            break
    heights = None if height is None else np.array([height(s) for s in states], dtype=float)
    return Trace(times[:j + 1].copy(), states, seed, replica, j, frozen, heights)


def _run_replica(table: MoveTable, start, n_jumps: int, seed: int, replica: int):
    """Return ``(height increment, elapsed time, jumps done, frozen)`` for one replica."""
    rng = substream(seed, replica)
    state, _ = table.enter(start)
    entry = table.entry
    table_get = table.table.get
    h = t = 0.0
    j = 0
    while j < n_jumps:
        m = min(_BATCH, n_jumps - j)
        ex = rng.standard_exponential(m).tolist()
        un = rng.random(m).tolist()
        for k in range(m):
            e = table_get(state)
            if e is None:
                e = entry(state)
            cum, total, tg, dh, _ = e
            if total <= 0:
                return h, t, j + k, True
            t += ex[k] / total
            i = bisect_right(cum, un[k] * total)
            h += dh[i]
            state = tg[i]
        j += m
    return h, t, j, False


def _replica_batch(args):
    walk, height, start, n_jumps, seed, replicas = args
    table = MoveTable(walk, height)
    return [_run_replica(table, start, n_jumps, seed, r) for r in replicas]


@dataclass(frozen=True)
class SpeedReport:
    """Speed ``V = D / T`` with provenance.

    ``kind`` is ``"exact"`` (factor-chain solve) or ``"mc"`` (mean over
    replicas of ``h(S_T) / T``, ``stderr`` across replicas).  ``D`` is the
    mean height increment per jump and ``T`` the mean holding time.
    """

    label: str
    estimate: float
    stderr: float
    replicas: int
    n_jumps: int
    seed: int | None
    kind: str
    D: float = math.nan
    T: float = math.nan
    frozen: bool = False

    FIELDS = ("label", "estimate", "stderr", "replicas", "n_jumps", "seed")

    def row(self) -> list[str]:
        return [self.label, repr(float(self.estimate)), repr(float(self.stderr)),
                str(self.replicas), str(self.n_jumps), "" if self.seed is None else str(self.seed)]


def speed_reports_to_csv(reports: Sequence[SpeedReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SpeedReport.FIELDS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def worker_count(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("SPIDERLAB_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def mc_speed(walk, height: Callable, start, n_jumps: int, replicas: int, seed: int,
             threads: int | None = None, label: str = "") -> SpeedReport:
    """Monte Carlo speed: per replica ``(h(S_T) - h(S_0)) / T``, mean and standard error.

    Replica ``r`` draws from the substream ``(seed, r)``, so the result does
    not depend on ``threads``.
    """
    if replicas < 2:
        raise ParameterError("mc_speed needs at least two replicas")
    if n_jumps < 1:
        raise ParameterError("n_jumps must be at least 1")
    walk = _as_walk(walk)
    if isinstance(walk, SpiderWalk):
        start = tuple(start)
        if not walk.admissible(start):
            from .errors import RuleViolationError
            raise RuleViolationError("start configuration is not admissible")
    nthreads = min(worker_count(threads), replicas)
    ids = list(range(replicas))
    if nthreads == 1:
        results = _replica_batch((walk, height, start, n_jumps, seed, ids))
    else:
        chunks = [ids[i::nthreads] for i in range(nthreads)]
        with ProcessPoolExecutor(nthreads) as pool:
            parts = list(pool.map(_replica_batch,
                                  [(walk, height, start, n_jumps, seed, c) for c in chunks]))
        by_id = {}
        for c, part in zip(chunks, parts):
            by_id.update(zip(c, part))
        results = [by_id[r] for r in ids]
    dh = np.array([r[0] for r in results])
    tt = np.array([r[1] for r in results])
    jumps = np.array([r[2] for r in results])
    frozen = any(r[3] for r in results)
    if frozen:
        if (jumps == 0).all():
            return SpeedReport(label, 0.0, 0.0, replicas, n_jumps, seed, "mc", 0.0, math.inf, True)
        raise SolverError("some replicas froze after moving; speed is undefined")
    v = dh / tt
    return SpeedReport(label, float(v.mean()), float(v.std(ddof=1) / math.sqrt(replicas)),
                       replicas, n_jumps, seed, "mc", float(dh.sum() / jumps.sum()),
                       float(tt.sum() / jumps.sum()))
