"""Frozen complexity constants and the measurement protocol behind them.

The asymptotic bounds are checked as regression bounds: each constant below
was measured once with ``measure()`` (deterministic seeds and step counts in
``PROTOCOL``) and frozen.  Any later measurement above a constant fails.
"""

from __future__ import annotations

import math

from . import bench
from .checker import Caps, ExploreConfig, LockConfig, explore

PROTOCOL = {
    "wport_Ds": (2, 4, 8),
    "wport_steps": 1_000_000,
    "Fs": (0, 1, 2, 3, 4, 5),
    "crash_runs": 300,
    "tree_Ns": (2, 4, 8, 16),
    "tree_steps": 200_000,
    "adaptive_N": 16,
    "adaptive_B": 4,
    "adaptive_Ks": (1, 2, 3, 4, 5, 6, 7, 8),
    "adaptive_steps": 200_000,
    "liveness_Ns": (2, 3, 4, 5, 6, 7, 8),
    "liveness_runs": 150,
    "seed": 1,
}

# Exhaustive configurations that complete on a laptop; shared by tests and measurement.
EXHAUSTIVE_SUITE = (
    dict(lock=LockConfig("wport", 2, 2), crashes=1, aborts=0, superpassages=2),
    dict(lock=LockConfig("wport", 2, 2), crashes=0, aborts=1, superpassages=2),
    dict(lock=LockConfig("wport", 2, 2), crashes=1, aborts=1, superpassages=1),
    dict(lock=LockConfig("wport", 2, 2, allocator="oracle"), crashes=1, aborts=0, superpassages=2),
    dict(lock=LockConfig("wport", 2, 2, allocator="oracle"), crashes=0, aborts=1, superpassages=2),
    dict(lock=LockConfig("wport", 2, 2, allocator="oracle"), crashes=1, aborts=1, superpassages=1),
)

# -- frozen constants ----------------------------------------------------------

C_WP = 43                   # crash-free W-port passage, both models, any D
SP_A, SP_B = 39, 5          # W-port super-passage <= SP_A + SP_B * F
C_LEVEL = 53                # tree passage <= C_LEVEL * log2 N
TREE_A, TREE_B = 0, 1       # tree super-passage <= TREE_A + TREE_B * F + C_LEVEL * log2 N
ADAPT_C0, ADAPT_C1 = 60, 54  # adaptive passage <= C1 * min(K, B) + C0
ADAPT_SOLO = 114            # adaptive passage at K = 1
LIVENESS = {                # lock -> {N: S(N)}
    "wport": {2: 128, 3: 218, 4: 334, 5: 461, 6: 611, 7: 793, 8: 996},
    "tree": {2: 141, 3: 447, 4: 668, 5: 1444, 6: 1746, 7: 2097, 8: 2490},
    "adaptive": {2: 312, 3: 601, 4: 973, 5: 1247, 6: 1709, 7: 2165, 8: 2749},
}
ABORT_STEPS = {"wport": 59}     # lock -> own-step cap after an abort signal
EXIT_STEPS = {"wport": 48}      # lock -> own-step cap in Exit
REENTRY_STEPS = {"wport": 1}    # lock -> own-step cap to re-enter the CS after a crash in it
STARVATION_ADMIT_ROUNDS = 2  # correct lock: rounds until p2 is admitted


def caps_for(lock: LockConfig, rmr_model: str = "both") -> Caps:
    """Frozen caps that apply to ``lock`` (None where nothing is frozen)."""
    name = "wport" if lock.lock == "faulty-wport" else lock.lock
    rmr = None
    if name == "wport":
        rmr = C_WP
    elif name == "tree" and C_LEVEL is not None:
        rmr = C_LEVEL * max(1, math.ceil(math.log2(lock.N)))
    elif name == "adaptive" and ADAPT_C1 is not None:
        rmr = ADAPT_C1 * min(lock.N, lock.B) + ADAPT_C0
    return Caps(abort_steps=ABORT_STEPS.get(name), exit_steps=EXIT_STEPS.get(name),
                reentry_steps=REENTRY_STEPS.get(name), passage_rmr=rmr,
                liveness_steps=LIVENESS.get(name, {}).get(lock.N), rmr_model=rmr_model)


# -- fitting helpers -------------------------------------------------------------

def fit_affine(points: dict) -> tuple[int, int]:
    """Smallest integer ``b`` with ``y <= a + b*x`` for all points, ``a = y(0)``."""
    a = points[0]
    b = max((math.ceil((y - a) / x) for x, y in points.items() if x > 0), default=0)
    return a, max(b, 0)


def fit_adaptive(by_k: dict, B: int) -> tuple[int, int]:
    """(c0, c1) with ``y_K <= c1*min(K, B) + c0``, tight at K = 1."""
    solo = by_k[1]
    c1 = max((math.ceil((y - solo) / (min(k, B) - 1)) for k, y in by_k.items() if min(k, B) > 1), default=0)
    c1 = max(c1, 0)
    return solo - c1, c1


# -- measurement protocol ------------------------------------------------------------

def measure_wport(P=PROTOCOL) -> dict:
    out = {}
    for D in P["wport_Ds"]:
        met = bench.passage_sweep(LockConfig("wport", D, D), P["wport_steps"], P["seed"] + D)
        out[D] = max(met.max_passage_cc, met.max_passage_dsm)
    return out


def measure_exhaustive() -> dict:
    """Max passage RMRs and own-step counts over the exhaustive suite."""
    agg = {"passage": 0, "abort": 0, "exit": 0, "reentry": 0, "liveness": 0, "complete": True}
    for kw in EXHAUSTIVE_SUITE:
        rep = explore(ExploreConfig(**kw, liveness_every=50))
        met = rep.metrics
        agg["passage"] = max(agg["passage"], met.max_passage_cc, met.max_passage_dsm)
        agg["abort"] = max(agg["abort"], met.max_abort_steps)
        agg["exit"] = max(agg["exit"], met.max_exit_steps)
        agg["reentry"] = max(agg["reentry"], met.max_reentry_steps)
        agg["liveness"] = max(agg["liveness"], met.max_liveness_steps)
        agg["complete"] = agg["complete"] and rep.exhaustive and rep.ok
    return agg


def measure_superpassage(lock: LockConfig, P=PROTOCOL) -> dict:
    rows = bench.crash_rows(lock, P["Fs"], P["crash_runs"], P["seed"])
    return {r.F: max(r.max_cc, r.max_dsm) for r in rows}


def measure_tree(P=PROTOCOL) -> dict:
    out = {}
    for N in P["tree_Ns"]:
        met = bench.passage_sweep(LockConfig("tree", N, 2), P["tree_steps"], P["seed"] + N)
        out[N] = max(met.max_passage_cc, met.max_passage_dsm)
    return out


def measure_adaptive(P=PROTOCOL) -> dict:
    """Max crash-free passage RMRs by measured point contention K."""
    lock = LockConfig("adaptive", P["adaptive_N"], 2, P["adaptive_B"])
    by_k: dict = {}
    for K in P["adaptive_Ks"]:
        met = bench.contention_sweep(lock, K, P["adaptive_steps"], P["seed"] + K)
        for k, (cc, dsm) in met.passage_by_k.items():
            by_k[k] = max(by_k.get(k, 0), cc, dsm)
    return by_k


def measure_liveness(P=PROTOCOL) -> dict:
    out: dict = {}
    for name in ("wport", "tree", "adaptive"):
        for N in P["liveness_Ns"]:
            lock = LockConfig(name, N, N if name == "wport" else 2, min(4, N))
            out.setdefault(name, {})[N] = bench.liveness_steps(lock, P["liveness_runs"], P["seed"] + N)
    return out
