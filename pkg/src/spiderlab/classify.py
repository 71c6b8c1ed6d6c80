"""Recurrence, transience and ergodicity diagnostics.

Two families of evidence are offered:

* drift criteria for nearest-neighbour chains on the half-line, read off
  ``g(x) = 2 x mu(x)`` over the tail of a drift profile, and
* growth of the effective resistance from the root to the boundary of
  growing balls.

Neither certifies anything about the infinite chain; verdicts are printed
with an ``-evidence`` suffix.  :func:`distortion_scan` compares substrate
distances with spider-graph distances.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .chain import effective_resistance, jump_chain
from .errors import ParameterError
from .graphs import LampertiHalfLine, LampertiRate, Substrate, bfs_distances, materialize_ball
from .spider import (ConfigRule, SpiderWalk, build_spider_network, config_diameter,
                     stretched_config, stretched_index)

CLASSES = ("transient", "null_recurrent", "positive_recurrent", "recurrent", "inconclusive")
_EPS = 1e-9


@dataclass(frozen=True)
class DriftProfile:
    """Jump-chain mean drift ``mu`` sampled at strictly increasing points ``x``."""

    x: np.ndarray
    mu: np.ndarray
    label: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if x.shape != mu.shape or x.ndim != 1:
            raise ParameterError("x and mu must be 1-d arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ParameterError("sample points must be strictly increasing")
        if not np.all(np.isfinite(mu)) or np.any(np.abs(mu) > 1 + 1e-12):
            raise ParameterError("drifts must be finite and lie in [-1, 1]")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "mu", mu)

    @property
    def g(self) -> np.ndarray:
        return 2.0 * self.x * self.mu

    def fit_limit(self, window: float = 10.0):
        """Weighted least squares ``g(x) = L + c / x`` on ``x >= x_max / window``.

        Returns ``(L, stderr)``; weights ``x`` favour the far tail.
        """
        sel = self.x >= self.x[-1] / window
        x, g = self.x[sel], self.g[sel]
        if len(x) < 3:
            return float(g[-1]), math.inf
        A = np.column_stack([np.ones_like(x), 1.0 / x])
        w = np.sqrt(x)
        coef, *_ = np.linalg.lstsq(A * w[:, None], g * w, rcond=None)
        resid = (g - A @ coef) * w
        dof = max(len(x) - 2, 1)
        cov = np.linalg.pinv((A * w[:, None]).T @ (A * w[:, None])) * (resid @ resid) / dof
        return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


@dataclass(frozen=True)
class Verdict:
    """Classification with its supporting numbers.

    ``label`` is one of :data:`CLASSES`; :attr:`display` adds the
    ``-evidence`` suffix used in all printed output.
    """

    label: str
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in CLASSES:
            raise ParameterError(f"unknown class {self.label!r}")

    @property
    def display(self) -> str:
        return self.label if self.label == "inconclusive" else f"{self.label}-evidence"

    def __str__(self):
        return self.display


def lamperti_classify(profile: DriftProfile, margin: float = 0.05, window: float = 10.0,
                      min_x: float = 1e3) -> Verdict:
    """Classify a half-line chain from the tail of ``g(x) = 2 x mu(x)``.

    On the window ``x >= x_max / window`` the one-sided criteria are
    checked in order: ``g >= 1 + margin`` transient; ``g <= -1 - margin``
    positive recurrent; ``-1 <= g <= 0`` null recurrent; ``g <= 1``
    recurrent; anything else is inconclusive.  The fitted limit ``L`` is
    reported alongside.
    """
    if profile.x[-1] < min_x:
        raise ParameterError(f"profile must reach x >= {min_x:g}")
    sel = profile.x >= profile.x[-1] / window
    g = profile.g[sel]
    L, se = profile.fit_limit(window)
    ev = {"L": L, "L_stderr": se, "g_min": float(g.min()), "g_max": float(g.max()),
          "window": (float(profile.x[sel][0]), float(profile.x[-1])), "margin": margin}
    if not math.isfinite(L):
        return Verdict("inconclusive", ev)
    if g.min() >= 1 + margin:
        label = "transient"
    elif g.max() <= -1 - margin:
        label = "positive_recurrent"
    elif g.min() >= -1 - _EPS and g.max() <= _EPS:
        label = "null_recurrent"
    elif g.max() <= 1 + _EPS:
        label = "recurrent"
    else:
        label = "inconclusive"
    return Verdict(label, ev)


def _as_halfline(rate) -> LampertiHalfLine:
    if isinstance(rate, LampertiHalfLine):
        return rate
    return LampertiHalfLine(rate)


def drift_profile(rate, x_points: Sequence[int]) -> DriftProfile:
    """Jump-chain drift ``p(x, x+1) - p(x, x-1)`` of a half-line chain.

    ``rate`` is a :class:`LampertiHalfLine` or an up-rate function.
    """
    sub = _as_halfline(rate)
    xs = np.asarray(sorted(set(int(x) for x in x_points)))
    if xs.min() < 1:
        raise ParameterError("drift points must be >= 1")
    net = materialize_ball(sub, 0, int(xs.max()) + 1)
    jc = jump_chain(net)
    mu = [jc.p(x, x + 1) - jc.p(x, x - 1) for x in xs]
    return DriftProfile(xs, np.array(mu), "walk")


def spider_drift_profile(rate, s: int = 2, x_points: Sequence[int] = range(1, 201)) -> DriftProfile:
    """Drift of the two-leg span-2 spider along the stretched line.

    The spider network is built (left-leg convention) and its jump chain
    read at labels ``2x`` and ``2x + 1``; the profile's sample points are
    those labels.
    """
    if s != 2:
        raise ParameterError("the stretched-line picture needs span 2")
    sub = _as_halfline(rate)
    xs = sorted(set(int(x) for x in x_points))
    if xs[0] < 1:
        raise ParameterError("drift points must be >= 1")
    rule = ConfigRule.bounded_span(2, 2, left_leg=True)
    spn = build_spider_network(sub, rule, (0, 1), radius=xs[-1] + 4, center=0, margin=0)
    jc = jump_chain(spn.network)
    labels, mu = [], []
    for x in xs:
        for n in (2 * x, 2 * x + 1):
            a, up, down = stretched_config(n), stretched_config(n + 1), stretched_config(n - 1)
            labels.append(n)
            mu.append(jc.p(a, up) - jc.p(a, down))
    return DriftProfile(np.array(labels), np.array(mu), "spider")


# -- resistance growth -----------------------------------------------------------


@dataclass(frozen=True)
class ResistanceCurve:
    radii: np.ndarray
    resistance: np.ndarray
    verdict: Verdict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["radius", "R_eff"])
        for r, R in zip(self.radii, self.resistance):
            w.writerow([int(r), repr(float(R))])
        return buf.getvalue()


def _growth_label(radii, R, cauchy: float):
    inc = np.diff(R) / np.log2(radii[1:] / radii[:-1])
    if len(inc) < 3:
        return "inconclusive", {}
    ratios = inc[1:] / np.where(inc[:-1] != 0, inc[:-1], np.nan)
    rel = float(np.diff(R)[-1] / R[-1])
    ev = {"ratios": [float(x) for x in ratios], "last_relative_increment": rel}
    tail = ratios[-2:]
    if rel < cauchy or np.all(tail <= 0.75):
        return "transient", ev
    if np.all(tail >= 0.9):
        return "recurrent", ev
    return "inconclusive", ev


def resistance_growth(model, radii: Sequence[int], start=None, cauchy: float = 1e-4,
                      margin: int | None = None) -> ResistanceCurve:
    """Effective resistance from the root to the boundary of growing balls.

    ``model`` is a substrate or a :class:`SpiderWalk` (then ``start`` is the
    root configuration and the sink set is the boundary-flagged
    configurations).  Per-octave increments that shrink geometrically, or
    a last increment below ``cauchy`` times the value, count as transience
    evidence; increments that do not shrink count as recurrence evidence.
    The verdict must agree with the one obtained without the largest
    radius, else it is inconclusive.
    """
    radii = np.asarray(sorted(set(int(r) for r in radii)), dtype=float)
    if len(radii) < 2:
        raise ParameterError("need at least two radii")
    R = []
    for r in radii.astype(int):
        if isinstance(model, SpiderWalk):
            cfg = tuple(start) if start is not None else model.lined_start()
            spn = build_spider_network(model.substrate, model.rule, cfg, int(r),
                                       center=cfg[0], margin=margin)
            net = spn.network
        else:
            net = materialize_ball(model, None, int(r))
        if net.boundary[net.root]:
            raise ParameterError(f"radius {r} is too small: the start already touches the boundary")
        sinks = [net.vertices[i] for i in np.flatnonzero(net.boundary)]
        if not sinks:
            raise ParameterError(f"ball of radius {r} has no boundary; the graph is finite")
        R.append(effective_resistance(net, net.vertices[net.root], sinks))
    R = np.array(R)
    label, ev = _growth_label(radii, R, cauchy)
    if label != "inconclusive":
        prev, _ = _growth_label(radii[:-1], R[:-1], cauchy)
        if prev != label:
            ev["unstable"] = prev
            label = "inconclusive"
    return ResistanceCurve(radii, R, Verdict(label, ev))


# -- distortion ------------------------------------------------------------------


@dataclass(frozen=True)
class DistortionReport:
    mapping: str
    pairs: list            # (x, y, d, d_spider, truncated)
    ratio_min: float
    ratio_max: float
    alpha: float
    beta: float
    diameters: dict        # site -> (diameter, truncated)
    bound: int

    @property
    def max_diameter(self) -> float:
        return max((d for d, _ in self.diameters.values()), default=0.0)

    @property
    def within_bound(self) -> bool:
        return self.max_diameter <= self.bound

    def to_csv(self, fmt: Callable = str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["site", "config_diameter", "truncated"])
        for site, (d, t) in self.diameters.items():
            w.writerow([fmt(site), repr(float(d)), int(t)])
        return buf.getvalue()


def distortion_scan(sub: Substrate, rule: ConfigRule, radius: int, sites: Sequence | None = None,
                    center=None, n_pairs: int = 200, seed: int = 0,
                    site_radius: int | None = None) -> DistortionReport:
    """Compare ``d(x, y)`` with ``d^S(l1(x), l1(y))`` and measure config diameters.

    ``l1(x)`` is the lined configuration starting at ``x``.  Sites default
    to the substrate vertices within ``site_radius`` (default
    ``radius // 3``) of the centre.  Spider distances that could be
    shortened outside the ball are flagged as truncated.
    """
    from .graphs import network_distances

    center = sub.root if center is None else center
    walk = SpiderWalk(sub, rule)
    spn = build_spider_network(sub, rule, walk.lined_start(center), radius, center=center)
    net = spn.network
    site_radius = max(1, radius // 3) if site_radius is None else site_radius
    inner = [v for v, d in bfs_distances(sub, center, site_radius).items()]
    if sites is None:
        sites = inner
    diam = {}
    for x in sites:
        d = config_diameter(spn, x)
        diam[x] = (d.value, d.truncated)
    rng = np.random.default_rng(seed)
    anchors = {}
    for x in inner:
        try:
            anchors[x] = net.idx(walk.lined_start(x))
        except Exception:
            continue
    keys = list(anchors)
    pairs = []
    boundary = np.flatnonzero(net.boundary)
    rows = {}
    for _ in range(min(n_pairs, len(keys) * (len(keys) - 1))):
        i, j = rng.choice(len(keys), size=2, replace=False)
        x, y = keys[i], keys[j]
        a = anchors[x]
        if a not in rows:
            rows[a] = network_distances(net, a)
        dS = float(rows[a][anchors[y]])
        edge = float(rows[a][boundary].min()) if len(boundary) else math.inf
        pairs.append((x, y, sub.distance(x, y), dS, dS > edge))
    d = np.array([p[2] for p in pairs], dtype=float)
    dS = np.array([p[3] for p in pairs], dtype=float)
    ok = np.isfinite(dS) & (d > 0)
    ratios = dS[ok] / d[ok]
    if len(ratios):
        alpha = float(max(ratios.max(), 1.0 / ratios.min(), 1.0))
        beta = float(max(0.0, np.max(dS[ok] - alpha * d[ok]), np.max(d[ok] / alpha - dS[ok])))
        rmin, rmax = float(ratios.min()), float(ratios.max())
    else:
        alpha, beta, rmin, rmax = 1.0, 0.0, math.nan, math.nan
    k, s = rule.k, rule.reach(sub)
    return DistortionReport("first lined configuration", pairs, rmin, rmax, alpha, beta,
                            diam, 2 * k * (s + k))
