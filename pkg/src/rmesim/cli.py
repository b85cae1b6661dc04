"""Command line: check, bench, replay, demo-starvation.

Runs are described by a JSON config file (see ``CONFIG_SCHEMA``); command
line flags override file values.  Output files go to ``$RMESIM_OUT`` (default:
the current directory).  Exit codes: 0 pass, 1 property failure, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import jsonschema

from . import bench, bounds
from .checker import (Caps, ExploreConfig, LockConfig, RandomConfig, check_properties, explore,
                      random_run, run_decisions)
from .counterexamples import ARRIVALS, scenario_config, starvation_scenario
from .kernel import CS, SECTION_ENTER, ConfigError, read_trace, write_trace

OUT_ENV = "RMESIM_OUT"

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lock": {"enum": ["wport", "tree", "adaptive", "faulty-wport"]},
        "N": {"type": "integer", "minimum": 1},
        "D": {"type": ["integer", "null"], "minimum": 1},
        "W": {"type": "integer", "minimum": 2},
        "B": {"type": "integer", "minimum": 1},
        "allocator": {"enum": ["reclaiming", "oracle"]},
        "rmr_model": {"enum": ["cc", "dsm", "both"]},
        "scheduler": {"enum": ["exhaustive", "random", "starvation"]},
        "crashes": {"type": ["integer", "null"], "minimum": 0},
        "aborts": {"type": ["integer", "null"], "minimum": 0},
        "superpassages": {"type": ["integer", "null"], "minimum": 1},
        "steps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "p_crash": {"type": "number", "minimum": 0, "maximum": 1},
        "p_abort": {"type": "number", "minimum": 0, "maximum": 1},
        "time_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "max_states": {"type": "integer", "minimum": 1},
        "liveness_every": {"type": "integer", "minimum": 0},
        "frozen_caps": {"type": "boolean"},
        "rounds": {"type": "integer", "minimum": 1},
        "sweep": {"type": "array", "items": {"enum": ["passage", "superpassage", "adaptivity"]}},
        "Ns": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "Ds": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "Ks": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "Fs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "runs": {"type": "integer", "minimum": 1},
        "report": {"type": "string"},
        "trace": {"type": "string"},
        "csv": {"type": "string"},
    },
}

DEFAULTS = {
    "lock": "wport", "N": 2, "D": None, "W": 8, "B": 4, "allocator": "reclaiming",
    "rmr_model": "both", "scheduler": "exhaustive", "crashes": 0, "aborts": 0,
    "superpassages": 1, "steps": 100_000, "seed": 0, "p_crash": 0.005, "p_abort": 0.005,
    "time_limit": None, "max_states": 2_000_000, "liveness_every": 0, "frozen_caps": True,
    "rounds": 1000, "sweep": ["passage", "superpassage", "adaptivity"], "Ns": [], "Ds": [],
    "Ks": [], "Fs": [0, 1, 2, 3, 4, 5], "runs": 200,
    "report": "report.json", "trace": "counterexample.trace", "csv": "bench.csv",
}


class UsageError(Exception):
    pass


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}") from None
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise UsageError(f"config {path}: {e.message}") from None
        cfg.update(data)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise UsageError(f"config: {e.message}") from None
    return cfg


def lock_config(cfg: dict) -> LockConfig:
    lc = LockConfig(cfg["lock"], cfg["N"], cfg["D"], cfg["B"], cfg["W"], cfg["allocator"])
    lc.validate()
    return lc


def out_path(name: str) -> Path:
    p = Path(name)
    if p.is_absolute():
        return p
    base = Path(os.environ.get(OUT_ENV, "."))
    base.mkdir(parents=True, exist_ok=True)
    return base / p


def caps_for(lc: LockConfig, cfg: dict) -> Caps:
    if not cfg["frozen_caps"]:
        return Caps()
    return bounds.caps_for(lc, cfg["rmr_model"])


# -- check ----------------------------------------------------------------------

def cmd_check(cfg: dict) -> int:
    lc = lock_config(cfg)
    if cfg["scheduler"] == "starvation":
        return _check_starvation(cfg, lc)
    caps = caps_for(lc, cfg)
    if cfg["scheduler"] == "exhaustive":
        ec = ExploreConfig(lock=lc, crashes=cfg["crashes"] or 0, aborts=cfg["aborts"] or 0,
                           superpassages=cfg["superpassages"] or 1, max_states=cfg["max_states"],
                           time_limit=cfg["time_limit"], liveness_every=cfg["liveness_every"], caps=caps)
        rep = explore(ec)
        arrivals = ec.superpassages
    else:
        rc = RandomConfig(lock=lc, steps=cfg["steps"], seed=cfg["seed"], p_crash=cfg["p_crash"],
                          p_abort=cfg["p_abort"], crashes=cfg["crashes"], aborts=cfg["aborts"],
                          superpassages=cfg["superpassages"], caps=caps, record=True)
        rep, _ = random_run(rc)
        arrivals = cfg["superpassages"] if cfg["superpassages"] is not None else 10**12
    report = rep.to_json()
    if rep.counterexample is not None:
        crep, m = run_decisions(lc, rep.counterexample, arrivals, caps)
        tpath = out_path(cfg["trace"])
        write_trace(tpath, {"lock": asdict(lc), "arrivals": arrivals, "caps": asdict(caps)},
                    m.trace, crep.verdicts)
        report["trace"] = str(tpath)
    rpath = out_path(cfg["report"])
    rpath.write_text(json.dumps(report, indent=2, default=str))
    _summary(rep.mode, rep.verdicts, report.get("trace"), rpath, extra=_explore_line(rep))
    return 0 if rep.ok else 1


def _explore_line(rep) -> str:
    if rep.mode != "EXHAUSTIVE":
        return f"steps={rep.transitions}"
    return (f"states={rep.states} dedup_hits={rep.dedup_hits} exhaustive={rep.exhaustive} "
            f"elapsed={rep.elapsed:.1f}s")


def _check_starvation(cfg: dict, lc: LockConfig) -> int:
    if lc.lock not in ("wport", "faulty-wport"):
        raise ConfigError("the starvation scheduler drives a W-port lock")
    faulty = lc.lock == "faulty-wport"
    rep = starvation_scenario(cfg["rounds"], faulty=faulty, reclaim=lc.allocator == "reclaiming",
                              record=True)
    bound = bounds.STARVATION_ADMIT_ROUNDS
    live = rep.p2_admitted_round is not None and rep.p2_admitted_round <= bound
    verdicts = {"liveness": live}
    tpath = out_path(cfg["trace"])
    header = {"lock": asdict(scenario_config(faulty, lc.allocator == "reclaiming")), "arrivals": ARRIVALS,
              "victim": 1}
    safety = check_properties(LockConfig(**header["lock"]), rep.trace, ARRIVALS)
    verdicts.update(safety)
    write_trace(tpath, header, rep.trace, verdicts)
    report = {"mode": "STARVATION", "variant": rep.variant, "rounds": rep.rounds,
              "p2_admitted_round": rep.p2_admitted_round, "bound": bound, "steps": rep.steps,
              "fallbacks": rep.fallbacks, "verdicts": verdicts, "trace": str(tpath)}
    rpath = out_path(cfg["report"])
    rpath.write_text(json.dumps(report, indent=2))
    ok = all(verdicts.values())
    _summary("STARVATION", verdicts, str(tpath) if not ok else None, rpath,
             extra=f"variant={rep.variant} rounds={rep.rounds} p2_admitted_round={rep.p2_admitted_round}")
    return 0 if ok else 1


def _summary(mode, verdicts, trace, rpath, extra="") -> None:
    failed = [k for k, v in verdicts.items() if not v]
    print(f"{mode}: {'PASS' if not failed else 'FAIL'} {extra}".rstrip())
    for k in failed:
        print(f"  violated: {k}")
    if trace:
        print(f"  counterexample trace: {trace}")
    print(f"  report: {rpath}")


# -- bench ------------------------------------------------------------------------

def cmd_bench(cfg: dict) -> int:
    lc = lock_config(cfg)
    seed, steps = cfg["seed"], cfg["steps"]
    rows: list[bench.Row] = []
    if "passage" in cfg["sweep"]:
        if lc.lock == "wport" or lc.lock == "faulty-wport":
            for D in cfg["Ds"] or [lc.ports()]:
                one = LockConfig(lc.lock, D, D, lc.B, lc.W, lc.allocator)
                one.validate()
                rows.append(bench.passage_row(one, steps, seed))
        else:
            for N in cfg["Ns"] or [lc.N]:
                one = LockConfig(lc.lock, N, lc.D, lc.B, lc.W, lc.allocator)
                one.validate()
                rows.append(bench.passage_row(one, steps, seed))
    if "superpassage" in cfg["sweep"]:
        rows += bench.crash_rows(lc, cfg["Fs"], cfg["runs"], seed)
    if "adaptivity" in cfg["sweep"]:
        rows += bench.adaptivity_rows(lc, cfg["Ks"] or range(1, lc.N + 1), steps, seed)
    cols = bench.COLUMNS
    if cfg["rmr_model"] != "both":
        drop = "dsm" if cfg["rmr_model"] == "cc" else "cc"
        cols = [c for c in cols if not c.endswith(drop)]
    path = out_path(cfg["csv"])
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    print(f"BENCH: {len(rows)} rows -> {path}")
    return 0


# -- replay -----------------------------------------------------------------------

def cmd_replay(path: str, render: bool = False) -> int:
    try:
        header, events, end = read_trace(path)
        lc = LockConfig(**header["lock"])
        lc.validate()
        arrivals = header["arrivals"]
        caps = Caps(**header.get("caps", {}))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise UsageError(f"cannot replay {path}: {e}") from None
    verdicts = check_properties(lc, events, arrivals, caps)
    if "victim" in header:
        verdicts["liveness"] = any(ev["kind"] == SECTION_ENTER and ev["pid"] == header["victim"]
                                   and ev.get("section") == CS for ev in events)
    if render:
        for ev in events:
            print(render_event(ev))
    recorded = end.get("verdict") or {}
    same = all(recorded.get(k, v) == v for k, v in verdicts.items())
    ok = all(verdicts.values())
    print(f"REPLAY: {'PASS' if ok else 'FAIL'} steps={end.get('steps')} matches_recorded={same}")
    for k, v in verdicts.items():
        if not v:
            print(f"  violated: {k}")
    return 0 if ok else 1


def render_event(ev: dict) -> str:
    head = f"{ev['step_no']:>7} p{ev['pid']} {ev['kind']:<14}"
    rest = {k: v for k, v in ev.items() if k not in ("step_no", "pid", "kind")}
    if ev["kind"] == "MEMOP":
        return (f"{head} {rest['op']:<4} {rest['name']} {rest['value_before']!r} -> {rest['value_after']!r}"
                f"  cc={rest['cost_cc']} dsm={rest['cost_dsm']}  @{rest['frame']}")
    return f"{head} " + " ".join(f"{k}={v}" for k, v in rest.items())


# -- demo-starvation ----------------------------------------------------------------

def cmd_demo(rounds: int, correct: bool, show: int) -> int:
    rep = starvation_scenario(rounds, faulty=not correct)
    print(f"variant={rep.variant} rounds={rep.rounds} steps={rep.steps} fallbacks={rep.fallbacks}")
    print(f"{'round':>6} {'aborter':>8} {'owner':>6} {'taken':>6}  p2")
    for row in rep.table[:show]:
        print(f"{row['round']:>6} {str(row['aborter']):>8} {row['owner']:>6} {row['taken']:>6}  {row['p2_phase']}")
    if rep.starved:
        print(f"p2 never entered the CS in {rep.rounds} rounds")
    else:
        print(f"p2 entered the CS in round {rep.p2_admitted_round}")
    return 0


# -- entry point ----------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="JSON run config")
    p.add_argument("--lock", choices=["wport", "tree", "adaptive", "faulty-wport"])
    p.add_argument("--N", type=int)
    p.add_argument("--D", type=int)
    p.add_argument("--W", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--allocator", choices=["reclaiming", "oracle"])
    p.add_argument("--rmr-model", dest="rmr_model", choices=["cc", "dsm", "both"])
    p.add_argument("--scheduler", choices=["exhaustive", "random", "starvation"])
    p.add_argument("--crashes", type=int)
    p.add_argument("--aborts", type=int)
    p.add_argument("--superpassages", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float)
    p.add_argument("--rounds", type=int)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="rmesim", description="Recoverable mutual exclusion simulator and checker")
    sub = ap.add_subparsers(dest="cmd", required=True)
    _add_run_flags(sub.add_parser("check", help="model-check or soak-test a lock"))
    _add_run_flags(sub.add_parser("bench", help="RMR sweeps to CSV"))
    rp = sub.add_parser("replay", help="re-execute and re-check a trace file")
    rp.add_argument("trace")
    rp.add_argument("--render", action="store_true", help="print the trace step by step")
    dp = sub.add_parser("demo-starvation", help="run the abort-driven starvation script")
    dp.add_argument("--rounds", type=int, default=1000)
    dp.add_argument("--correct", action="store_true", help="run against the correct lock instead")
    dp.add_argument("--show", type=int, default=12, help="table rows to print")
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        if args.cmd == "replay":
            return cmd_replay(args.trace, args.render)
        if args.cmd == "demo-starvation":
            return cmd_demo(args.rounds, args.correct, args.show)
        flags = {k: v for k, v in vars(args).items() if k not in ("cmd", "config")}
        cfg = load_config(args.config, flags)
        return cmd_check(cfg) if args.cmd == "check" else cmd_bench(cfg)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
