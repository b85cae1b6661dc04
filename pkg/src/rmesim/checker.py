"""Exhaustive exploration, randomized runs and property evaluation.

``explore`` is a depth-first search over adversary decisions (step, crash or
abort-signal a process) with visited-state pruning on ``Machine.digest``.
Decisions of a process whose next memory op touches a port-private word are
not interleaved with other processes (they commute with everything else).

The ``Monitor`` evaluates safety properties after every decision and
collects RMR metrics from the passage ledger.  Liveness is checked as a
bounded property: from a state, fair round-robin scheduling without faults
must finish every in-flight super-passage within ``S`` steps.
"""

from __future__ import annotations

import random
import time
from dataclasses import asdict, dataclass, field
from typing import Any

from .adaptive import AdaptiveLock
from .kernel import (COUNTERS, CRASH, IDLE, NOTE, RECOVER, SP_START, TRY, ConfigError, Machine,
                     SchedulerError, WellFormedMonitor, decisions_of)
from .memory import HarnessFault
from .reclamation import SlotPool
from .tree import TreeLock
from .wport import WPortLock

LOCKS = ("wport", "tree", "adaptive", "faulty-wport")
ALLOCATORS = ("reclaiming", "oracle")

PROPERTIES = (
    "mutual_exclusion", "well_formed", "well_behaved", "cs_reentry", "bounded_abort",
    "abort_only_when_signalled", "wait_free_exit", "wait_free_reentry", "reclamation",
    "point_contention", "quiescent_clean", "rmr_caps", "liveness", "harness",
)


@dataclass
class LockConfig:
    lock: str = "wport"
    N: int = 2
    D: int | None = None      # ports of the W-port lock, or tree fan-in
    B: int = 4                # fast-path ports of the adaptive lock
    W: int = 8
    allocator: str = "reclaiming"

    def validate(self) -> None:
        if self.lock not in LOCKS:
            raise ConfigError(f"unknown lock {self.lock!r} (expected one of {', '.join(LOCKS)})")
        if self.allocator not in ALLOCATORS:
            raise ConfigError(f"unknown allocator {self.allocator!r}")
        if self.N < 1 or self.W < 2:
            raise ConfigError("need N >= 1 and W >= 2")
        D = self.ports()
        if self.lock in ("wport", "faulty-wport"):
            if D > self.W:
                raise ConfigError(f"D={D} exceeds word size W={self.W}")
            if self.N > D:
                raise ConfigError(f"N={self.N} processes but only D={D} ports")
        elif D < 2 or D > self.W:
            raise ConfigError(f"tree fan-in D={D} must be in 2..W")
        if self.lock == "adaptive" and not 1 <= self.B <= self.W:
            raise ConfigError(f"B={self.B} must be in 1..W")

    def ports(self) -> int:
        if self.D is not None:
            return self.D
        return self.N if self.lock in ("wport", "faulty-wport") else 2


def build(cfg: LockConfig, arrivals: int = 1, record: bool = False) -> Machine:
    cfg.validate()
    m = Machine(cfg.N, cfg.W, arrivals, record)
    reclaim = cfg.allocator == "reclaiming"
    if cfg.lock == "wport":
        lock = WPortLock(m, "wp", cfg.ports(), reclaim)
    elif cfg.lock == "faulty-wport":
        from .counterexamples import FaultyWPort
        lock = FaultyWPort(m, "wp", cfg.ports(), reclaim)
    elif cfg.lock == "tree":
        lock = TreeLock(m, "tree", cfg.N, cfg.ports(), reclaim)
    else:
        lock = AdaptiveLock(m, "adapt", cfg.N, cfg.B, cfg.ports(), reclaim)
    m.set_top(lock)
    return m


@dataclass
class Caps:
    """Own-step and RMR caps; None means measure only."""
    abort_steps: int | None = None
    exit_steps: int | None = None
    reentry_steps: int | None = None
    passage_rmr: int | None = None          # crash-free passages, both models
    liveness_steps: int | None = None       # S(N)
    rmr_model: str = "both"                 # which cost model passage_rmr applies to


@dataclass
class Violation:
    prop: str
    message: str
    step_no: int
    pid: int | None = None


@dataclass
class Metrics:
    max_passage_cc: int = 0
    max_passage_dsm: int = 0
    sp_by_f: dict = field(default_factory=dict)          # F -> [max cc, max dsm]
    passage_by_k: dict = field(default_factory=dict)     # K -> [max cc, max dsm]
    max_abort_steps: int = 0
    max_exit_steps: int = 0
    max_reentry_steps: int = 0
    max_liveness_steps: int = 0
    min_witness_margin: int | None = None                # K - i over failed port-i CASes
    passages: int = 0
    superpassages: int = 0
    clean_passages: int = 0          # crash-free, non-recovery passages
    sum_passage_cc: int = 0
    sum_passage_dsm: int = 0

    def merge_max(self, d: dict, key, cc: int, dsm: int) -> None:
        cur = d.setdefault(key, [0, 0])
        cur[0] = max(cur[0], cc)
        cur[1] = max(cur[1], dsm)


_COUNTER_CHECKS = {
    "abort_steps": ("max_abort_steps", "bounded_abort", "since abort signal"),
    "exit_steps": ("max_exit_steps", "wait_free_exit", "in Exit"),
    "reentry_steps": ("max_reentry_steps", "wait_free_reentry", "to re-enter"),
}


class Monitor:
    """Evaluates per-step properties on a machine; restorable alongside it."""

    def __init__(self, m: Machine, caps: Caps | None = None, wellformed: bool = True):
        self.m = m
        self.caps = caps or Caps()
        self.wf = WellFormedMonitor() if wellformed else None
        self.metrics = Metrics()
        self.np = 0
        self.nsp = 0
        self.pools = [lk for lk in m.locks.values() if isinstance(lk, SlotPool)]
        self.ports = [lk for lk in m.locks.values() if isinstance(lk, WPortLock)]

    def snapshot(self) -> tuple:
        return (self.wf.snapshot() if self.wf else None, self.np, self.nsp)

    def restore(self, snap: tuple) -> None:
        wf, self.np, self.nsp = snap
        if self.wf:
            self.wf.restore(wf)

    def after(self, events: list[dict]) -> list[Violation]:
        m, caps, met = self.m, self.caps, self.metrics
        out: list[Violation] = []
        step = m.step_no - 1
        cs = m.in_cs()
        if len(cs) > 1:
            out.append(Violation("mutual_exclusion", f"processes {cs} in the CS", step))
        for ev in events:
            if self.wf:
                msg = self.wf.feed(ev)
                if msg:
                    out.append(Violation("well_formed", msg, step, ev["pid"]))
            kind = ev["kind"]
            if kind == NOTE:
                out += self._note(ev, step)
            elif kind == SP_START:
                out += self._free_nonempty(step, ev["pid"])
        counts = [(p.pid, name, getattr(p, name)) for p in m.procs for name in COUNTERS]
        counts += [(events[0]["pid"] if events else None, name, v) for name, v in m.closed.items()]
        for pid, name, v in counts:
            if v is None:
                continue
            field_, prop, what = _COUNTER_CHECKS[name]
            setattr(met, field_, max(getattr(met, field_), v))
            cap = getattr(caps, name)
            if cap is not None and v > cap:
                out.append(Violation(prop, f"{v} own steps {what}", step, pid))
        out += self._ledger(step)
        if m.quiescent():
            for msg in m.top.clean():
                out.append(Violation("quiescent_clean", msg, step))
        for msg in m.top.check_state():
            out.append(Violation("quiescent_clean", msg, step))
        return out

    def _note(self, ev: dict, step: int) -> list[Violation]:
        note, pid = ev["note"], ev["pid"]
        if note == "ILL_BEHAVED":
            return [Violation("well_behaved", f"Recover returned {ev['got']}, expected {ev['expected']}", step, pid)]
        if note == "SPURIOUS_ABORT":
            return [Violation("abort_only_when_signalled", "Try returned FALSE without an abort signal", step, pid)]
        if note == "CS_REENTRY_VIOLATION":
            return [Violation("cs_reentry", f"entered CS while {ev['waiting']} must re-enter first", step, pid)]
        if note == "PORT_CAS_FAIL":
            margin = ev["k_point"] - ev["port"]
            met = self.metrics
            met.min_witness_margin = margin if met.min_witness_margin is None else min(met.min_witness_margin, margin)
            if ev["k_point"] < ev["port"] + 1:
                return [Violation("point_contention",
                                  f"failed port {ev['port']} with point contention {ev['k_point']}", step, pid)]
        if note == "GET_INDEX":
            slot = ev["slot"]
            for q in self.m.procs:
                if q.pid == pid:
                    continue
                for fr in q.stack:
                    if fr.proc == "promote" and fr.reg("held") == slot:
                        return [Violation("reclamation",
                                          f"slot {slot} handed out while process {q.pid} may still write it",
                                          step, pid)]
        return []

    def _free_nonempty(self, step: int, pid: int) -> list[Violation]:
        out = []
        mem, nv = self.m.memory, self.m.nv
        for pool in self.pools:
            for k in range(pool.D):
                if nv.get(pool.key(k)) is None and pool.free[k].size(mem) == 0:
                    out.append(Violation("reclamation", f"{pool.name}: FREE empty for idle port {k}", step, pid))
        return out

    def _ledger(self, step: int) -> list[Violation]:
        out = []
        led, met, cap = self.m.ledger, self.metrics, self.caps.passage_rmr
        while self.np < len(led.passages):
            p = led.passages[self.np]
            self.np += 1
            met.passages += 1
            if p.crashed or p.recovery:
                continue
            met.clean_passages += 1
            met.sum_passage_cc += p.cc
            met.sum_passage_dsm += p.dsm
            met.max_passage_cc = max(met.max_passage_cc, p.cc)
            met.max_passage_dsm = max(met.max_passage_dsm, p.dsm)
            met.merge_max(met.passage_by_k, p.k, p.cc, p.dsm)
            cost = {"cc": p.cc, "dsm": p.dsm}.get(self.caps.rmr_model, max(p.cc, p.dsm))
            if cap is not None and cost > cap:
                out.append(Violation("rmr_caps", f"crash-free passage of {p.pid} cost cc={p.cc} dsm={p.dsm} > {cap}",
                                     step, p.pid))
        while self.nsp < len(led.superpassages):
            s = led.superpassages[self.nsp]
            self.nsp += 1
            met.superpassages += 1
            met.merge_max(met.sp_by_f, s.crashes, s.cc, s.dsm)
        return out


# -- liveness ---------------------------------------------------------------

def fair_completion(m: Machine, bound: int | None, max_steps: int = 200_000) -> tuple[bool, int]:
    """Round-robin without faults until every in-flight super-passage ends.

    Returns (ok, steps used).  Restores nothing: callers snapshot first.
    No new super-passages are started.
    """
    pending = {p.pid for p in m.procs if p.phase != IDLE}
    steps = 0
    limit = max_steps if bound is None else bound
    i = 0
    while pending:
        if steps >= limit:
            return False, steps
        pid = sorted(pending)[i % len(pending)]
        m.step(pid)
        steps += 1
        i += 1
        if m.procs[pid].phase == IDLE:
            pending.discard(pid)
            i = 0 if not pending else i % len(pending)
    return True, steps


# -- reports ------------------------------------------------------------------

@dataclass
class Report:
    config: dict
    mode: str
    verdicts: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    counterexample: list | None = None
    exhaustive: bool = False
    states: int = 0
    dedup_hits: int = 0
    transitions: int = 0
    elapsed: float = 0.0
    metrics: Metrics = field(default_factory=Metrics)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())

    def record(self, vs: list[Violation], path: list | None) -> None:
        for v in vs:
            if self.verdicts.get(v.prop, True):
                self.verdicts[v.prop] = False
                self.violations.append(asdict(v))
                if self.counterexample is None and path is not None:
                    self.counterexample = list(path)

    def to_json(self) -> dict:
        d = asdict(self)
        d["metrics"]["sp_by_f"] = {str(k): v for k, v in self.metrics.sp_by_f.items()}
        d["metrics"]["passage_by_k"] = {str(k): v for k, v in self.metrics.passage_by_k.items()}
        d["ok"] = self.ok
        return d


def _init_verdicts(rep: Report, liveness: bool) -> None:
    for p in PROPERTIES:
        if p != "liveness" or liveness:
            rep.verdicts[p] = True


# -- exhaustive exploration ---------------------------------------------------

@dataclass
class ExploreConfig:
    lock: LockConfig = field(default_factory=LockConfig)
    crashes: int = 0              # total crash budget
    aborts: int = 0               # total abort budget
    superpassages: int = 1        # per process
    max_depth: int = 2_000
    max_states: int = 2_000_000
    time_limit: float | None = None
    por: bool = True
    fault_reduction: bool = True  # offer crashes/aborts only where they can make a difference
    dedup: bool = True
    liveness_every: int = 0       # run the fair-completion check on every n-th new state
    caps: Caps = field(default_factory=Caps)
    stop_on_violation: bool = True


def enabled(m: Machine, crashes_left: int, aborts_left: int, por: bool = True,
            last: int | None = None, crash_last: bool = True,
            abort_last: bool = True, reduce_faults: bool = True) -> list[tuple[str, int]]:
    """Adversary decisions to branch on.

    With ``por`` set, two reductions apply.  Crash steps and abort signals
    touch only the target's local state, so they commute with every action of
    other processes; they are offered only to ``last``, the process that made
    the previous decision (any crash point of p is reached by crashing p right
    after one of its own steps).  A crash right after a step that changed
    neither memory, NVRAM nor the section gives the same state as a crash
    just before it, so ``crash_last`` False withholds the crash.  An abort
    signal is only observed where Try reads the flag; signalling right after
    such a read (or after arrival or a crash) covers every later point up to
    the next read and gives the longest abort, so ``abort_last`` False
    withholds the signal.  ``reduce_faults`` False offers faults to every
    process instead.  And a process whose next memory op is on a port-private
    word is stepped without interleaving the others.
    """
    def faults(p, crash=True, abort=True) -> list[tuple[str, int]]:
        out = []
        if p.phase == IDLE:
            return out
        if crashes_left > 0 and crash:
            out.append(("crash", p.pid))
        if aborts_left > 0 and abort and not p.aborted and _abortable(p):
            out.append(("abort", p.pid))
        return out

    procs = m.procs
    if not por:
        acts = []
        for p in procs:
            if p.phase != IDLE or p.arrivals_left > 0:
                acts.append(("step", p.pid))
            acts += faults(p)
        return acts
    if not reduce_faults:
        tail = [a for p in procs for a in faults(p)]
    else:
        tail = faults(procs[last], crash_last, abort_last) if last is not None else []
    private = m.memory.private
    for p in procs:
        if p.poised is not None and p.poised[1] is not None and private[p.poised[1]]:
            return [("step", p.pid)] + tail
    acts = [("step", p.pid) for p in procs if p.phase != IDLE or p.arrivals_left > 0]
    return acts + tail


def _abortable(p) -> bool:
    return p.phase == TRY or (p.phase == RECOVER and p.expect == TRY)


def explore(cfg: ExploreConfig) -> Report:
    """Depth-first search over all adversary decisions within the budgets."""
    t0 = time.monotonic()
    m = build(cfg.lock, arrivals=cfg.superpassages)
    mon = Monitor(m, cfg.caps)
    rep = Report(config={**asdict(cfg)}, mode="EXHAUSTIVE")
    _init_verdicts(rep, cfg.liveness_every > 0)
    visited: dict = {}
    # entries: (machine snapshot, monitor snapshot, crashes left, aborts left, depth, path node, action)
    stack: list = [(m.snapshot(), mon.snapshot(), cfg.crashes, cfg.aborts, 0, None, None, None, True, True)]
    complete = True
    new_states = 0
    while stack:
        snap, msnap, cl, al, depth, path, act, last, crash_ok, abort_ok = stack.pop()
        m.restore(snap)
        mon.restore(msnap)
        if act is not None:
            kind, pid = act
            last = pid
            rep.transitions += 1
            path = (path, act)
            try:
                evs = m.apply(kind, pid)
            except HarnessFault as e:
                rep.record([Violation("harness", str(e), m.step_no, pid)], _unwind(path))
                if cfg.stop_on_violation:
                    break
                continue
            if kind == "crash":
                cl -= 1
                crash_ok, abort_ok = False, True
            elif kind == "abort":
                al -= 1
                crash_ok, abort_ok = True, False
            else:
                crash_ok = m.nv_changed or not _pure(evs)
                abort_ok = m.abort_read or any(ev["kind"] == SP_START for ev in evs)
            vs = mon.after(evs)
            if vs:
                rep.record(vs, _unwind(path))
                if cfg.stop_on_violation:
                    break
                continue
        if cfg.dedup:
            # a state is covered by an earlier visit that had at least the same
            # fault budgets, the same or wider fault choice and no larger
            # step counters (counters only grow, by the same amounts)
            key = m.digest(counters=False)
            lp = (last, crash_ok, abort_ok) if cfg.por and cfg.fault_reduction and (cl or al) else None
            vec = m.step_counters()
            seen = visited.get(key)
            if seen is not None and any(c >= cl and a >= al and _covers(l, lp)
                                        and all(x <= y for x, y in zip(vec, v))
                                        for c, a, l, v in seen):
                rep.dedup_hits += 1
                continue
            visited.setdefault(key, []).append((cl, al, lp, vec))
        rep.states += 1
        new_states += 1
        if rep.states >= cfg.max_states or (cfg.time_limit and time.monotonic() - t0 > cfg.time_limit):
            complete = False
            rep.notes.append("state or time cap reached")
            break
        if cfg.liveness_every and new_states % cfg.liveness_every == 0:
            here, hmon = m.snapshot(), mon.snapshot()
            ok, used = fair_completion(m, cfg.caps.liveness_steps)
            mon.metrics.max_liveness_steps = max(mon.metrics.max_liveness_steps, used)
            if not ok:
                rep.record([Violation("liveness", f"in-flight super-passages not done after {used} fair steps",
                                      m.step_no)], _unwind(path))
            m.restore(here)
            mon.restore(hmon)
        acts = enabled(m, cl, al, cfg.por, last, crash_ok, abort_ok, cfg.fault_reduction)
        if not acts:
            continue
        if depth >= cfg.max_depth:
            complete = False
            continue
        here, hmon = m.snapshot(), mon.snapshot()
        for a in reversed(acts):
            stack.append((here, hmon, cl, al, depth + 1, path, a, last, crash_ok, abort_ok))
    rep.exhaustive = complete and not stack and rep.ok
    rep.elapsed = time.monotonic() - t0
    rep.metrics = mon.metrics
    return rep


def _covers(stored, new) -> bool:
    """Fault choice ``stored`` offers at least what ``new`` offers."""
    if stored is None:
        return True
    return (new is not None and stored[0] == new[0] and stored[1] >= new[1]
            and stored[2] >= new[2])


def _pure(evs: list[dict]) -> bool:
    """The step left memory unchanged and did not move between sections."""
    for ev in evs:
        kind = ev["kind"]
        if kind == "MEMOP":
            if ev["value_before"] != ev["value_after"]:
                return False
        elif kind not in ("INVOKE", "RETURN") or ev.get("caller") is None:
            return False
    return True


def _unwind(path) -> list:
    out = []
    while path is not None:
        path, act = path
        out.append(list(act))
    out.reverse()
    return out


# -- randomized runs ------------------------------------------------------------

@dataclass
class RandomConfig:
    lock: LockConfig = field(default_factory=LockConfig)
    steps: int = 100_000
    seed: int = 0
    p_crash: float = 0.005
    p_abort: float = 0.005
    crashes: int | None = None      # total budget (None: unbounded)
    aborts: int | None = None
    superpassages: int | None = None  # per process (None: unbounded)
    contention: int | None = None     # at most this many processes in super-passages at once
    caps: Caps = field(default_factory=Caps)
    record: bool = False


def random_run(cfg: RandomConfig) -> tuple[Report, list[dict]]:
    """One seeded random schedule with probabilistic crash/abort injection."""
    t0 = time.monotonic()
    arrivals = cfg.superpassages if cfg.superpassages is not None else 10**12
    m = build(cfg.lock, arrivals=arrivals, record=cfg.record)
    mon = Monitor(m, cfg.caps)
    rep = Report(config=asdict(cfg), mode=f"RANDOM({cfg.seed})")
    _init_verdicts(rep, False)
    rng = random.Random(cfg.seed)
    cl = cfg.crashes if cfg.crashes is not None else -1
    al = cfg.aborts if cfg.aborts is not None else -1
    decisions: list = []
    for _ in range(cfg.steps):
        active = [p.pid for p in m.procs if p.phase != IDLE]
        cands = [p.pid for p in m.procs if p.phase != IDLE or (
            p.arrivals_left > 0 and (cfg.contention is None or len(active) < cfg.contention))]
        if not cands:
            break
        pid = rng.choice(cands)
        p = m.procs[pid]
        x = rng.random()
        if p.phase != IDLE and cl != 0 and x < cfg.p_crash:
            act = ("crash", pid)
            cl -= 1
        elif p.phase != IDLE and al != 0 and not p.aborted and _abortable(p) and x < cfg.p_crash + cfg.p_abort:
            act = ("abort", pid)
            al -= 1
        else:
            act = ("step", pid)
        if cfg.record:
            decisions.append(act)
        try:
            evs = m.apply(*act)
        except HarnessFault as e:
            rep.record([Violation("harness", str(e), m.step_no, pid)], decisions if cfg.record else None)
            break
        vs = mon.after(evs)
        if vs:
            rep.record(vs, decisions if cfg.record else None)
            break
    rep.transitions = m.step_no
    rep.elapsed = time.monotonic() - t0
    rep.metrics = mon.metrics
    return rep, m.trace


# -- scripted replay and trace checks --------------------------------------------

def run_decisions(lock: LockConfig, decisions: list, arrivals: int, caps: Caps | None = None,
                  record: bool = True) -> tuple[Report, Machine]:
    """Re-execute a decision sequence (SCRIPTED mode) and evaluate all properties."""
    m = build(lock, arrivals=arrivals, record=record)
    mon = Monitor(m, caps)
    rep = Report(config={"lock": asdict(lock), "arrivals": arrivals}, mode="SCRIPTED")
    _init_verdicts(rep, False)
    done = []
    for kind, pid in decisions:
        done.append([kind, pid])
        try:
            evs = m.apply(kind, pid)
        except (HarnessFault, SchedulerError) as e:
            rep.record([Violation("harness", str(e), m.step_no, pid)], done)
            break
        rep.record(mon.after(evs), done)
    rep.transitions = m.step_no
    rep.metrics = mon.metrics
    return rep, m


def check_properties(lock: LockConfig, events: list[dict], arrivals: int,
                     caps: Caps | None = None) -> dict[str, bool]:
    """Verdict set for a recorded trace: replays its decisions under the monitor
    and checks that the replay reproduces the recorded memory operations."""
    rep, m = run_decisions(lock, decisions_of(events), arrivals, caps)
    verdicts = dict(rep.verdicts)
    verdicts["trace_consistent"] = _same_ops(events, m.trace)
    return verdicts


def _same_ops(a: list[dict], b: list[dict]) -> bool:
    def ops(evs):
        return [(e["step_no"], e["pid"], e.get("op"), e.get("addr")) for e in evs if e["kind"] == "MEMOP"]
    return ops(a) == ops(b)
