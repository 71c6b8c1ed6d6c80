"""Command-line front end.

Subcommands::

    spiderlab run <scenario.json>
    spiderlab preset <name> [--seed N] [--out DIR]
    spiderlab list-presets
    spiderlab validate <scenario.json>

Exit codes: 0 success, 2 validation error, 3 numerical failure.
``--threads`` (or ``SPIDERLAB_THREADS``) caps the Monte Carlo workers.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import jsonschema

from . import presets as P
from .chain import hitting_times, mc_speed, simulate, traces_to_csv, worker_count
from .classify import (distortion_scan, drift_profile, lamperti_classify, resistance_growth,
                       spider_drift_profile)
from .errors import NumericalError, SpiderlabError
from .graphs import LampertiHalfLine, generate, materialize_ball
from .quotient import KEYS, exact_speed, explore_factor_chain, factor_chain, lumpability_check
from .spider import HEIGHTS, ConfigRule, SpiderWalk, build_spider_network, check_irreducible

SCHEMA_VERSION = 1

_number = {"type": ["number", "string"]}
_ANALYSES = {
    "build": {"radius": {"type": "integer", "minimum": 1}},
    "simulate": {"n_jumps": {"type": "integer", "minimum": 1}, "replicas": {"type": "integer", "minimum": 1},
                 "height": {"enum": list(HEIGHTS)}},
    "speed-exact": {"key": {"enum": list(KEYS)}, "height": {"enum": list(HEIGHTS)},
                    "members": {"type": "integer", "minimum": 1}},
    "speed-mc": {"height": {"enum": list(HEIGHTS)}, "n_jumps": {"type": "integer", "minimum": 1},
                 "replicas": {"type": "integer", "minimum": 2}},
    "classify": {"chain": {"enum": ["walk", "spider"]}, "x_max": {"type": "integer", "minimum": 1000},
                 "margin": {"type": "number", "exclusiveMinimum": 0}},
    "lumpability": {"key": {"enum": list(KEYS)}, "radius": {"type": "integer", "minimum": 1},
                    "height": {"enum": list(HEIGHTS)}},
    "resistance": {"radii": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2}},
    "distortion": {"radius": {"type": "integer", "minimum": 1},
                   "sites": {"type": "array", "items": {"type": "string"}}},
    "hitting": {"radius": {"type": "integer", "minimum": 1},
                "target": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "mode": {"enum": ["hit", "return"]}},
}
STOCHASTIC = {"simulate", "speed-mc"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "preset": {"enum": sorted(P.PRESETS)},
        "substrate": {
            "type": "object", "additionalProperties": False, "required": ["family"],
            "properties": {"family": {"enum": ["line", "lamperti_halfline", "rooted_tree", "tree_with_end",
                                               "product_z3_z", "decorated_line", "star_of_segments"]},
                           "params": {"type": "object", "additionalProperties": _number}},
        },
        "rule": {"type": "object"},
        "start": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "analyses": {"type": "array", "items": {"oneOf": [
            {"type": "object", "additionalProperties": False, "required": ["type"],
             "properties": {"type": {"const": name}, **props}}
            for name, props in _ANALYSES.items()]}},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
    },
    "oneOf": [{"required": ["preset"], "not": {"required": ["analyses"]}},
              {"required": ["substrate", "analyses"], "not": {"required": ["preset"]}}],
}


class ScenarioError(SpiderlabError, ValueError):
    pass


def load_scenario(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    validate_scenario(doc)
    return doc


def validate_scenario(doc: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        where = "/".join(map(str, best.absolute_path)) or "<root>"
        raise ScenarioError(f"scenario invalid at {where}: {best.message}")
    kinds = {a["type"] for a in doc.get("analyses", [])}
    if kinds & STOCHASTIC and "seed" not in doc:
        raise ScenarioError("a seed is mandatory for simulate and speed-mc analyses")
    if "rule" in doc:
        ConfigRule.from_json(doc["rule"])
    elif kinds - {"classify", "resistance", "hitting", "build"}:
        raise ScenarioError(f"analyses {sorted(kinds)} need a configuration rule")


# -- execution -------------------------------------------------------------------


def _write(outdir: Path | None, name: str, text: str, echo=True):
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / name, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
    if echo:
        sys.stdout.write(f"# {name}\n{text}")


def run_scenario(doc: dict, outdir: Path | None, threads=None) -> None:
    if "preset" in doc:
        run_preset(doc["preset"], doc.get("seed", 1), outdir, threads)
        return
    spec = doc["substrate"]
    sub = generate(spec["family"], **spec.get("params", {}))
    rule = ConfigRule.from_json(doc["rule"]) if "rule" in doc else None
    walk = SpiderWalk(sub, rule) if rule else None
    if "start" in doc:
        start = tuple(sub.parse(s) for s in doc["start"])
    else:
        start = walk.lined_start() if walk else (sub.root,)
    seed = doc.get("seed")
    for n, a in enumerate(doc["analyses"]):
        kind = a["type"]
        name = f"{n:02d}-{kind}"
        rows = _ANALYSIS_FUNCS[kind](sub, rule, walk, start, seed, a, threads)
        _write(outdir, name + ".csv", rows.to_csv())


def _height(sub, a):
    return HEIGHTS[a.get("height", "midpoint" if sub.is_tree else "first_leg")](sub)


def _a_build(sub, rule, walk, start, seed, a, threads):
    r = a.get("radius", 8)
    if walk is None:
        net = materialize_ball(sub, start[0], r)
        return P.Table("build", ["vertices", "boundary"], [[net.n, int(net.boundary.sum())]])
    spn = build_spider_network(sub, rule, start, r)
    irr = check_irreducible(spn)
    return P.Table("build", ["configs", "boundary", "irreducible", "witness"],
                   [[spn.network.n, int(spn.network.boundary.sum()), irr.irreducible,
                     "" if irr.witness is None else " / ".join(walk.format(c) for c in irr.witness)]])


def _a_simulate(sub, rule, walk, start, seed, a, threads):
    model = walk if walk else sub
    st = start if walk else start[0]
    h = _height(sub, a)
    height = h if walk else (lambda v: h((v,)))
    traces = [simulate(model, st, a.get("n_jumps", 1000), seed, r, height)
              for r in range(a.get("replicas", 1))]
    fmt = walk.format if walk else sub.format
    table = P.Table("simulate", ["replica", "jump_index", "time", "state_address", "height"])
    table.to_csv = lambda: traces_to_csv(traces, fmt)
    return table


def _a_speed_exact(sub, rule, walk, start, seed, a, threads):
    key = KEYS[a.get("key", "span")](sub)
    fc = explore_factor_chain(walk, key, start, _height(sub, a), members=a.get("members", 3))
    r = exact_speed(fc, "exact")
    return P.Table("speed", ["label", "V", "D", "T", "blocks", "frozen"],
                   [[r.label, r.estimate, r.D, r.T, fc.n, r.frozen]])


def _a_speed_mc(sub, rule, walk, start, seed, a, threads):
    r = mc_speed(walk, _height(sub, a), start, a.get("n_jumps", 100_000), a.get("replicas", 32),
                 seed, threads, "mc")
    return P.Table("speed", ["label", "estimate", "stderr", "replicas", "n_jumps", "seed"],
                   [[r.label, r.estimate, r.stderr, r.replicas, r.n_jumps, r.seed]])


def _a_classify(sub, rule, walk, start, seed, a, threads):
    if not isinstance(sub, LampertiHalfLine):
        raise ScenarioError("classify needs a lamperti_halfline substrate")
    x_max = a.get("x_max", 4000)
    if a.get("chain", "walk") == "walk":
        prof = drift_profile(sub, range(1, x_max + 1))
    else:
        prof = spider_drift_profile(sub, 2, range(1, x_max // 2 + 1))
    v = lamperti_classify(prof, a.get("margin", 0.05))
    e = v.evidence
    return P.Table("classify", ["chain", "L_fit", "L_stderr", "g_min", "g_max", "verdict"],
                   [[a.get("chain", "walk"), e["L"], e["L_stderr"], e["g_min"], e["g_max"], v.display]])


def _a_lumpability(sub, rule, walk, start, seed, a, threads):
    spn = build_spider_network(sub, rule, start, a.get("radius", 8))
    key = KEYS[a.get("key", "span")](sub)
    h = _height(sub, a) if "height" in a else None
    v = lumpability_check(spn, key, height=h)
    w = "" if v.witness is None else repr(v.witness)
    return P.Table("lumpability", ["lumpable", "max_defect", "blocks", "witness"],
                   [[v.lumpable, v.max_defect, v.n_blocks, w]])


def _a_resistance(sub, rule, walk, start, seed, a, threads):
    curve = resistance_growth(walk if walk else sub, a["radii"], start=start if walk else None)
    t = P.Table("resistance", ["radius", "R_eff", "verdict"])
    for r, R in zip(curve.radii, curve.resistance):
        t.rows.append([int(r), R, curve.verdict.display])
    return t


def _a_distortion(sub, rule, walk, start, seed, a, threads):
    sites = [sub.parse(s) for s in a["sites"]] if "sites" in a else None
    rep = distortion_scan(sub, rule, a.get("radius", 10), sites=sites)
    t = P.Table("distortion", ["site", "config_diameter", "truncated", "bound", "alpha", "beta"])
    for site, (d, tr) in rep.diameters.items():
        t.rows.append([sub.format(site), d, tr, rep.bound, rep.alpha, rep.beta])
    return t


def _a_hitting(sub, rule, walk, start, seed, a, threads):
    r = a.get("radius", 8)
    if walk is None:
        net = materialize_ball(sub, start[0], r)
        target = [sub.parse(s) for s in a["target"]]
        fmt = sub.format
    else:
        net = build_spider_network(sub, rule, start, r).network
        target = [walk.parse(s) for s in a["target"]]
        fmt = walk.format
    rep = hitting_times(net, target, a.get("mode", "hit"))
    t = P.Table("hitting", ["state", "steps", "time", "truncated"])
    for i, v in enumerate(net.vertices):
        if not net.boundary[i]:
            t.rows.append([fmt(v), rep.steps[i], rep.time[i], rep.truncated])
    return t


_ANALYSIS_FUNCS = {"build": _a_build, "simulate": _a_simulate, "speed-exact": _a_speed_exact,
                   "speed-mc": _a_speed_mc, "classify": _a_classify, "lumpability": _a_lumpability,
                   "resistance": _a_resistance, "distortion": _a_distortion, "hitting": _a_hitting}


def run_preset(name: str, seed: int, outdir: Path | None, threads=None):
    if name not in P.PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; see list-presets")
    for table in P.PRESETS[name].run(seed=seed, threads=threads):
        _write(outdir, table.name + ".csv", table.to_csv())


def list_presets() -> str:
    rows = [(p.name, p.source, f"{p.runtime:g}s") for p in P.PRESETS.values()]
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    lines = [f"{'name':<{w0}}  {'experiment':<{w1}}  runtime"]
    lines += [f"{a:<{w0}}  {b:<{w1}}  {c}" for a, b, c in rows]
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spiderlab", description="Spider walks on graphs.")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker processes for Monte Carlo (default: $SPIDERLAB_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", default=None, help="output directory (overrides the scenario)")
    p = sub.add_parser("preset", help="run a named experiment")
    p.add_argument("name")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    sub.add_parser("list-presets", help="list the named experiments")
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = worker_count(args.threads)
    try:
        if args.command == "list-presets":
            sys.stdout.write(list_presets())
        elif args.command == "validate":
            load_scenario(args.scenario)
            print("ok")
        elif args.command == "preset":
            t0 = time.perf_counter()
            run_preset(args.name, args.seed, Path(args.out) if args.out else None, threads)
            print(f"# {args.name} finished in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        else:
            doc = load_scenario(args.scenario)
            out = args.out or doc.get("output")
            run_scenario(doc, Path(out) if out else None, threads)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (SpiderlabError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
