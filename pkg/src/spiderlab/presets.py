"""Ready-made experiments, each producing one or more CSV tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .chain import hitting_times, mc_speed
from .classify import (distortion_scan, drift_profile, lamperti_classify, resistance_growth,
                       spider_drift_profile)
from .graphs import LampertiRate, generate, materialize_ball
from .quotient import (DistanceHeightKey, SpanKey, block_mass, compare_tree_rates,
                       derived_rate_table, exact_speed, explore_factor_chain, format_key,
                       ksk_identity_check, stationary)
from .spider import (ConfigRule, MidpointHeight, SpiderWalk, build_spider_network,
                     config_diameter)

TREE_ROOT = (0, ())
TREE_START = ((0, ()), (1, ()))

# Local configurations of the two-leg spider on Z_3 x Z as a finite offset
# table relative to the first leg.  (u +- 2, x) coincides with (u -+ 1, x),
# so the table has eight shapes; bounded span 2 would add (u, x +- 2).
Z3Z_TABLE = (((0, 0), (1, 0)), ((0, 0), (2, 0)), ((0, 0), (0, 1)), ((0, 0), (0, -1)),
             ((0, 0), (2, 1)), ((0, 0), (2, -1)), ((0, 0), (1, 1)), ((0, 0), (1, -1)))


def fmt(value) -> str:
    """Locale-free, round-trip formatting for CSV cells."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, tuple):
        return format_key(value)
    return str(value)


@dataclass
class Table:
    name: str
    header: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([fmt(c) for c in r])
        return buf.getvalue()


@dataclass(frozen=True)
class Preset:
    name: str
    source: str
    runtime: float           # declared upper bound, seconds
    run: Callable


# -- the presets -----------------------------------------------------------------


def line_speed(seed=1, threads=None, p=0.7, q=0.3, spans=range(2, 13), n_jumps=20_000, replicas=16):
    sub = generate("line", p=p, q=q)
    t = Table("line_speed", ["s", "V_exact", "V_formula", "V_mc", "stderr"])
    for s in spans:
        walk = SpiderWalk(sub, ConfigRule.bounded_span(2, s, left_leg=True))
        h = MidpointHeight(sub)
        fc = explore_factor_chain(walk, SpanKey(sub), (0, 1), h)
        ex = exact_speed(fc)
        mc = mc_speed(walk, h, (0, 1), n_jumps, replicas, seed, threads)
        t.rows.append([s, ex.estimate, (p - q) * (1 - 1 / s), mc.estimate, mc.stderr])
    return [t]


def tree_speed_decay(seed=None, threads=None, M=3, spans=(3, 6, 12, 24, 48)):
    sub = generate("tree_with_end", M=M, srw=True)
    key, h = DistanceHeightKey(sub), MidpointHeight(sub)
    t = Table("tree_speed_decay", ["s", "V_exact", "D", "T", "Pi_B", "ksk_residual", "blocks"])
    for s in spans:
        walk = SpiderWalk(sub, ConfigRule.bounded_span(2, s))
        fc = explore_factor_chain(walk, key, TREE_START, h)
        sp = exact_speed(fc)
        B = [b for b in fc.blocks if b[1] == 0]
        t.rows.append([s, sp.estimate, sp.D, sp.T, block_mass(fc, B), ksk_identity_check(fc, B), fc.n])
    return [t]


def tree_factor_rates(seed=None, threads=None, s=10):
    sub = generate("tree_with_end", M=3, srw=True)
    walk = SpiderWalk(sub, ConfigRule.bounded_span(2, s))
    fc = explore_factor_chain(walk, DistanceHeightKey(sub), TREE_START, MidpointHeight(sub))
    derived = Table("tree_factor_rates", ["source", "target", "rate"],
                    [list(r) for r in derived_rate_table(fc)])
    cmp = Table("tree_rate_comparison",
                ["rule", "source", "target", "reference", "derived", "match", "unambiguous"])
    for c in compare_tree_rates(fc, s):
        cmp.rows.append([c.rule, c.source, c.target, c.reference, c.derived, c.match, c.unambiguous])
    return [derived, cmp]


def lamperti(seed=None, threads=None, x_max=4000):
    t = Table("lamperti", ["chain", "theta", "L_fit", "g_min", "g_max", "verdict"])
    for theta in (1, -1):
        rate = LampertiRate(theta)
        for name, prof in (("walk", drift_profile(rate, range(1, x_max + 1))),
                           ("spider_s2", spider_drift_profile(rate, 2, range(1, x_max // 2 + 1)))):
            v = lamperti_classify(prof)
            e = v.evidence
            t.rows.append([name, theta, e["L"], e["g_min"], e["g_max"], v.display])
    return [t]


def star_ergodicity(seed=None, threads=None, n_max=12, Ns=range(4, 13)):
    ratio = math.sqrt(2)
    p = ratio / (1 + ratio)
    sub = generate("star_of_segments", p=p, n_max=n_max)
    walk = hitting_times(materialize_ball(sub, (0, 0), n_max), [(0, 0)])
    spn = build_spider_network(sub, ConfigRule.bounded_span(2, 2), ((n_max, 1), (n_max, 2)),
                               n_max, center=(0, 0))
    hub = [c for c in spn.configs if (0, 0) in c]
    spider = hitting_times(spn.network, hub)
    t = Table("star_ergodicity", ["N", "walk_steps", "walk_time", "spider_steps", "spider_time"])
    for N in Ns:
        c = ((N, 1), (N, 2))
        t.rows.append([N, walk.at((N, 1)), walk.at((N, 1), True), spider.at(c), spider.at(c, True)])
    arr = np.array([r[1:] for r in t.rows], dtype=float)
    Nv = np.array(list(Ns), dtype=float)
    slopes = Table("star_slopes", ["series", "slope", "target"])
    for j, name in enumerate(t.header[1:]):
        target = math.log(ratio) * (2 if name.startswith("spider") else 1)
        slopes.rows.append([name, float(np.polyfit(Nv, np.log(arr[:, j]), 1)[0]), target])
    return [t, slopes]


def tree_end_speed(seed=1, threads=None, a=Fraction(1, 2), spans=(1, 2, 3), n_jumps=20_000,
                   replicas=16):
    sub = generate("tree_with_end", M=3, a=a)
    key, h = DistanceHeightKey(sub), MidpointHeight(sub)
    t = Table("tree_end_speed", ["s", "V_exact", "D", "T", "frozen", "V_mc", "stderr"])
    for s in spans:
        walk = SpiderWalk(sub, ConfigRule.bounded_span(2, s))
        ex = exact_speed(explore_factor_chain(walk, key, TREE_START, h))
        mc = mc_speed(walk, h, TREE_START, n_jumps, replicas, seed, threads)
        t.rows.append([s, ex.estimate, ex.D, ex.T, ex.frozen, mc.estimate, mc.stderr])
    return [t]


def distortion_decorated_line(seed=None, threads=None, ks=(3, 4, 5), s=2):
    sub = generate("decorated_line")
    rule = ConfigRule.bounded_span(2, s)
    t = Table("decorated_line_diameters", ["k", "site", "diameter", "truncated", "bound"])
    for k in ks:
        site = (2**k + 2**(k - 1), 0)
        spn = build_spider_network(sub, rule, (site, (site[0] + 1, 0)), 2**k + 6, center=site)
        d = config_diameter(spn, site)
        t.rows.append([k, sub.format(site), d.value, d.truncated, 2 * 2 * (s + 2)])
    bounded = Table("bounded_span_diameters", ["substrate", "k", "s", "max_diameter", "bound",
                                               "alpha", "beta"])
    for name, sb, rl, radius, site_r in (
            ("line", generate("line"), ConfigRule.bounded_span(2, 3, left_leg=True), 20, None),
            ("tree_with_end", generate("tree_with_end", M=3, srw=True), ConfigRule.bounded_span(2, 3), 8, 1),
            ("product_z3_z", generate("product_z3_z"), ConfigRule.bounded_span(2, 2), 12, None),
            ("product_z3_z_table", generate("product_z3_z"), ConfigRule.explicit(2, Z3Z_TABLE), 12, None)):
        rep = distortion_scan(sb, rl, radius, site_radius=site_r)
        bounded.rows.append([name, rl.k, rl.reach(sb), rep.max_diameter, rep.bound, rep.alpha, rep.beta])
    return [t, bounded]


def resistance_lamperti(seed=None, threads=None, radii=tuple(2**k for k in range(5, 13))):
    sub = generate("lamperti_halfline", theta=1)
    walk = resistance_growth(sub, radii)
    spider = resistance_growth(SpiderWalk(sub, ConfigRule.bounded_span(2, 2, left_leg=True)),
                               radii, start=(0, 1))
    t = Table("resistance_lamperti", ["radius", "R_walk", "R_spider"])
    for r, a, b in zip(walk.radii, walk.resistance, spider.resistance):
        t.rows.append([int(r), a, b])
    v = Table("resistance_verdicts", ["chain", "verdict"],
              [["walk", walk.verdict.display], ["spider_s2", spider.verdict.display]])
    return [t, v]


PRESETS = {p.name: p for p in (
    Preset("line-speed", "biased line, two-leg spider: exact vs closed-form vs Monte Carlo speed", 30, line_speed),
    Preset("tree-speed-decay", "SRW on the 3-regular tree: spider speed and mass of (l,0) blocks as s grows", 20, tree_speed_decay),
    Preset("tree-factor-rates", "SRW on the 3-regular tree: lumped (l,k) rates vs the reference table", 10, tree_factor_rates),
    Preset("lamperti", "Lamperti drift 1/(2x) and -1/(2x): walk and span-2 spider verdicts", 20, lamperti),
    Preset("star-ergodicity", "star of segments, p/q = sqrt 2: hitting-time growth of walk and spider", 10, star_ergodicity),
    Preset("tree-end-speed", "tree with an end, a = 1/2: spider speed for s = 1, 2, 3", 30, tree_end_speed),
    Preset("distortion-decorated-line", "line with pendants at 2^k: unbounded config diameters", 30, distortion_decorated_line),
    Preset("resistance-lamperti", "Lamperti line vs its span-2 spider: resistance growth", 30, resistance_lamperti),
)}
