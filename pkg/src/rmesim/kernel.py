"""Process execution: step machines, crash steps, abort signals, the client driver.

Lock procedures are written as explicit step machines.  A procedure handler
has the signature ``handler(cx, pc, args, regs)`` and performs at most one
shared-memory operation through ``cx`` per invocation.  It returns one of:

* an ``int``: the next program counter (``regs`` is written back),
* ``Call(lock, proc, args, ret_pc, into)``: push a sub-procedure frame,
* ``Ret(value)``: pop the frame and hand ``value`` to the caller.

Frames are immutable tuples, so the whole process state can be snapshotted by
reference.  A kernel step runs the handlers of one process until exactly one
memory operation has happened and the next handler would need another one.

The client protocol is Recover -> Try -> CS -> Exit.  A crash clears the
stack; the next step of that process re-invokes Recover of the outermost lock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple

from .memory import CAS, FAA, READ, WRITE, HarnessFault, Memory

TRY, CS, EXIT, ABORT = "TRY", "CS", "EXIT", "ABORT"
IDLE, RECOVER = "IDLE", "RECOVER"
COUNTERS = ("abort_steps", "exit_steps", "reentry_steps")

MEMOP, CRASH, ABORT_SIGNAL = "MEMOP", "CRASH", "ABORT_SIGNAL"
SECTION_ENTER, SECTION_LEAVE = "SECTION_ENTER", "SECTION_LEAVE"
SP_START, SP_END = "SP_START", "SP_END"
INVOKE, RETURN, NOTE = "INVOKE", "RETURN", "NOTE"

LOCAL_LOOP_LIMIT = 10_000


class ConfigError(ValueError):
    """Invalid configuration (for example more ports than the word size allows)."""


class SchedulerError(Exception):
    """The schedule asked for something the protocol does not allow."""


class NeedStep(Exception):
    """Raised inside a handler when it wants a memory op in a step that already had one."""


class Call(NamedTuple):
    lock: str
    proc: str
    args: tuple
    ret_pc: int
    into: str | None = None


class Ret(NamedTuple):
    value: Any = None


class Frame(NamedTuple):
    lock: str
    proc: str
    pc: int
    args: tuple
    regs: tuple = ()
    into: str | None = None

    def reg(self, name: str, default: Any = None) -> Any:
        for k, v in self.regs:
            if k == name:
                return v
        return default


class ProcState(NamedTuple):
    pid: int
    phase: str = IDLE
    stack: tuple = ()
    aborted: bool = False
    arrivals_left: int = 0
    expect: str | None = None          # what the next complete Recover must return
    crashed_in_cs: bool = False
    abort_steps: int | None = None     # own steps since abort signal / last crash
    exit_steps: int | None = None      # own steps in Exit since last crash
    reentry_steps: int | None = None   # own steps since crash in CS
    k_point: int = 0                   # point contention of the current super-passage
    poised: tuple | None = None        # (op, addr) of the next memory op, if known


@dataclass
class Passage:
    pid: int
    sp: int
    cc: int = 0
    dsm: int = 0
    crashed: bool = False
    recovery: bool = False
    aborted: bool = False
    k: int = 0
    start_step: int = 0


@dataclass
class SuperPassage:
    pid: int
    sp: int
    cc: int = 0
    dsm: int = 0
    crashes: int = 0
    aborted: bool = False
    k: int = 0
    exit_steps: int = 0
    start_step: int = 0
    end_step: int = 0


class PassageLedger:
    """Per-process RMR counters for the open passage and super-passage."""

    def __init__(self, n: int):
        self.n = n
        self.open_p: list[Passage | None] = [None] * n
        self.open_sp: list[SuperPassage | None] = [None] * n
        self.passages: list[Passage] = []
        self.superpassages: list[SuperPassage] = []
        self.sp_count = [0] * n

    def start_sp(self, pid: int, step: int) -> None:
        sp = self.sp_count[pid]
        self.sp_count[pid] += 1
        self.open_sp[pid] = SuperPassage(pid, sp, start_step=step)
        self.open_p[pid] = Passage(pid, sp, start_step=step)

    def charge(self, pid: int, cc: int, dsm: int) -> None:
        p, s = self.open_p[pid], self.open_sp[pid]
        if p is not None:
            p.cc += cc
            p.dsm += dsm
        if s is not None:
            s.cc += cc
            s.dsm += dsm

    def crash(self, pid: int, step: int, k: int) -> None:
        p, s = self.open_p[pid], self.open_sp[pid]
        p.crashed = True
        p.k = k
        self.passages.append(p)
        s.crashes += 1
        self.open_p[pid] = Passage(pid, s.sp, recovery=True, start_step=step)

    def end_sp(self, pid: int, step: int, aborted: bool, k: int) -> None:
        p, s = self.open_p[pid], self.open_sp[pid]
        p.aborted = aborted
        p.k = k
        s.aborted = aborted
        s.k = k
        s.end_step = step
        self.passages.append(p)
        self.superpassages.append(s)
        self.open_p[pid] = self.open_sp[pid] = None

    def snapshot(self) -> tuple:
        def cp(x):
            return None if x is None else type(x)(**x.__dict__)
        return (tuple(cp(p) for p in self.open_p), tuple(cp(s) for s in self.open_sp),
                len(self.passages), len(self.superpassages), tuple(self.sp_count))

    def restore(self, snap: tuple) -> None:
        ops, osp, np_, nsp, spc = snap
        self.open_p = [None if p is None else Passage(**p.__dict__) for p in ops]
        self.open_sp = [None if s is None else SuperPassage(**s.__dict__) for s in osp]
        del self.passages[np_:]
        del self.superpassages[nsp:]
        self.sp_count = list(spc)


def freeze(regs: dict) -> tuple:
    return tuple(sorted(regs.items()))


class Ctx:
    """Handle through which a handler touches shared memory."""

    __slots__ = ("m", "pid", "dry", "op_done", "pending_nv", "pending_notes", "frame", "poised")

    def __init__(self, m: "Machine", pid: int):
        self.m = m
        self.pid = pid
        self.dry = False
        self.op_done = False
        self.pending_nv: list = []
        self.pending_notes: list = []
        self.frame: Frame | None = None
        self.poised: tuple | None = None

    def _gate(self, op: str, addr: int) -> None:
        if self.dry:
            self.poised = (op, addr)
            raise NeedStep
        if self.op_done:
            raise HarnessFault("handler performed two memory ops in one invocation")
        self.op_done = True

    def _event(self, op, addr, before, after, ch) -> None:
        m = self.m
        m.ledger.charge(self.pid, ch.cost_cc, ch.cost_dsm)
        m.emit(MEMOP, self.pid, op=op, addr=addr, name=m.memory.names[addr],
               value_before=before, value_after=after,
               cost_cc=ch.cost_cc, cost_dsm=ch.cost_dsm,
               frame=f"{self.frame.lock}.{self.frame.proc}@{self.frame.pc}")

    def read(self, addr: int) -> Any:
        self._gate(READ, addr)
        v, ch = self.m.memory.read(addr, self.pid)
        self._event(READ, addr, v, v, ch)
        return v

    def write(self, addr: int, v: Any) -> None:
        self._gate(WRITE, addr)
        before = self.m.memory.values[addr] if 0 <= addr < len(self.m.memory) else None
        ch = self.m.memory.write(addr, self.pid, v)
        self._event(WRITE, addr, before, v, ch)

    def cas(self, addr: int, old: Any, new: Any) -> bool:
        self._gate(CAS, addr)
        before = self.m.memory.values[addr] if 0 <= addr < len(self.m.memory) else None
        ok, ch = self.m.memory.cas(addr, self.pid, old, new)
        self._event(CAS, addr, before, self.m.memory.values[addr], ch)
        return ok

    def faa(self, addr: int, delta: int) -> int:
        self._gate(FAA, addr)
        old, ch = self.m.memory.faa(addr, self.pid, delta)
        self._event(FAA, addr, old, old + delta, ch)
        return old

    def alloc_word(self, name: str, init: Any, home: int) -> int:
        """Fresh memory word (oracle allocator). Counts as a side effect."""
        if self.dry:
            self.poised = ("ALLOC", None)
            raise NeedStep
        return self.m.memory.alloc(name, init, home)

    @property
    def aborted(self) -> bool:
        self.m.abort_read = True
        return self.m.procs[self.pid].aborted

    def recall(self, key) -> Any:
        for k, v in reversed(self.pending_nv):
            if k == key:
                return v
        return self.m.nv.get(key)

    def persist(self, key, value) -> None:
        """Write a process-private NVRAM variable (no RMR, survives crashes)."""
        self.pending_nv.append((key, value))

    def note(self, kind: str, **payload) -> None:
        self.pending_notes.append((kind, payload))


class Lock:
    """Base for lock step machines registered in a machine."""

    procs: dict[str, Callable]

    def __init__(self, machine: "Machine", name: str):
        self.m = machine
        self.name = name
        machine.register(self)

    @property
    def mem(self) -> Memory:
        return self.m.memory

    def port_of(self, pid: int) -> int:
        return pid

    def check_state(self) -> list[str]:
        """Lock-specific invariant violations in the current memory state."""
        return []

    def clean(self) -> list[str]:
        """Violations of the quiescent state (no process in a super-passage)."""
        return []


class Machine:
    """Holds memory, locks and process states; executes steps."""

    def __init__(self, n_procs: int, W: int = 8, arrivals: int = 1,
                 record: bool = False):
        self.n = n_procs
        self.W = W
        self.memory = Memory(n_procs, W)
        self.locks: dict[str, Lock] = {}
        self.top: Lock | None = None
        self.procs: list[ProcState] = [ProcState(pid=i, arrivals_left=arrivals) for i in range(n_procs)]
        self.nv: dict = {}
        self.ledger = PassageLedger(n_procs)
        self.step_no = 0
        self.record = record
        self.trace: list[dict] = []
        self.step_events: list[dict] = []
        self.nv_changed = False    # set by a step that wrote port-private NVRAM
        self.abort_read = False    # set by a step that consulted the abort flag
        self.closed: dict = {}     # step counters finished by the last step, with their final value

    # -- setup --------------------------------------------------------------

    def register(self, lock: Lock) -> None:
        if lock.name in self.locks:
            raise HarnessFault(f"duplicate lock name {lock.name}")
        self.locks[lock.name] = lock

    def set_top(self, lock: Lock) -> None:
        self.top = lock

    def set_arrivals(self, arrivals: int | Iterable[int]) -> None:
        if isinstance(arrivals, int):
            arrivals = [arrivals] * self.n
        self.procs = [p._replace(arrivals_left=a) for p, a in zip(self.procs, arrivals)]

    # -- events -------------------------------------------------------------

    def emit(self, kind: str, pid: int, **payload) -> None:
        ev = {"step_no": self.step_no, "pid": pid, "kind": kind}
        ev.update(payload)
        self.step_events.append(ev)

    def _flush(self) -> list[dict]:
        evs = self.step_events
        self.step_events = []
        if self.record:
            self.trace.extend(evs)
        self.step_no += 1
        return evs

    # -- queries ------------------------------------------------------------

    def in_sp(self, pid: int) -> bool:
        return self.procs[pid].phase != IDLE

    def can_step(self, pid: int) -> bool:
        p = self.procs[pid]
        return p.phase != IDLE or p.arrivals_left > 0

    def quiescent(self) -> bool:
        return all(p.phase == IDLE for p in self.procs)

    def finished(self) -> bool:
        return all(p.phase == IDLE and p.arrivals_left == 0 for p in self.procs)

    def in_cs(self) -> list[int]:
        return [p.pid for p in self.procs if p.phase == CS]

    # -- snapshots ----------------------------------------------------------

    def snapshot(self) -> tuple:
        return (self.memory.snapshot(), tuple(self.procs), tuple(sorted(self.nv.items(), key=repr)),
                self.step_no, self.ledger.snapshot(), len(self.trace))

    def restore(self, snap: tuple) -> None:
        mem, procs, nv, step_no, ledger, ntrace = snap
        self.memory.restore(mem)
        self.procs = list(procs)
        self.nv = dict(nv)
        self.step_no = step_no
        self.ledger.restore(ledger)
        del self.trace[ntrace:]
        self.step_events = []

    def digest(self, include_cache: bool = False, counters: bool = True) -> int:
        """State identity for visited-set pruning (memory, processes, NVRAM privates).

        With ``counters`` off, the own-step counters are reduced to whether
        they are running; ``step_counters`` returns their values.
        """
        procs = tuple(self.procs)
        if not counters:
            procs = tuple(p._replace(abort_steps=p.abort_steps is not None,
                                     exit_steps=p.exit_steps is not None,
                                     reentry_steps=p.reentry_steps is not None) for p in procs)
        return hash((self.memory.digest(include_cache), procs,
                     tuple(sorted(self.nv.items(), key=repr))))

    def step_counters(self) -> tuple:
        return tuple(c or 0 for p in self.procs
                     for c in (p.abort_steps, p.exit_steps, p.reentry_steps))

    # -- adversary actions --------------------------------------------------

    def crash(self, pid: int) -> list[dict]:
        p = self.procs[pid]
        if p.phase == IDLE:
            raise SchedulerError(f"crash of idle process {pid}")
        if p.phase == RECOVER:
            expect = p.expect
        else:
            expect = p.phase
        self.closed = {}
        self.emit(CRASH, pid, phase=p.phase)
        self.ledger.crash(pid, self.step_no, p.k_point)
        self.procs[pid] = p._replace(
            phase=RECOVER, stack=(), expect=expect, poised=None,
            crashed_in_cs=p.crashed_in_cs or p.phase == CS,
            abort_steps=0 if p.abort_steps is not None else None,
            exit_steps=0 if expect == EXIT else None,
            reentry_steps=0 if (p.crashed_in_cs or p.phase == CS) else None)
        return self._flush()

    def signal_abort(self, pid: int) -> list[dict]:
        p = self.procs[pid]
        if p.phase == IDLE:
            raise SchedulerError(f"abort signal to idle process {pid}")
        if p.aborted:
            raise SchedulerError(f"process {pid} already signalled")
        self.closed = {}
        self.emit(ABORT_SIGNAL, pid)
        counting = p.phase == TRY or (p.phase == RECOVER and p.expect == TRY)
        self.procs[pid] = p._replace(aborted=True, abort_steps=0 if counting else None)
        return self._flush()

    # -- stepping -----------------------------------------------------------

    def step(self, pid: int) -> list[dict]:
        self.nv_changed = self.abort_read = False
        self.closed = {}
        p = self.procs[pid]
        top = self.top
        port = top.port_of(pid)
        if p.phase == IDLE:
            if p.arrivals_left <= 0:
                raise SchedulerError(f"process {pid} has no pending arrival")
            active = sum(1 for q in self.procs if q.phase != IDLE) + 1
            for q in self.procs:
                if q.phase != IDLE and q.k_point < active:
                    self.procs[q.pid] = q._replace(k_point=active)
            p = self.procs[pid]
            self.ledger.start_sp(pid, self.step_no)
            self.emit(SP_START, pid, sp=self.ledger.sp_count[pid] - 1)
            self.emit(SECTION_ENTER, pid, section=RECOVER)
            self.emit(INVOKE, pid, lock=top.name, proc="recover", port=port, caller=None)
            p = p._replace(phase=RECOVER, arrivals_left=p.arrivals_left - 1, expect=TRY,
                           stack=(Frame(top.name, "recover", 0, (port,)),), k_point=active)
        elif p.phase == CS:
            self.emit(SECTION_LEAVE, pid, section=CS)
            self.emit(SECTION_ENTER, pid, section=EXIT)
            self.emit(INVOKE, pid, lock=top.name, proc="exit", port=port, caller=None)
            p = p._replace(phase=EXIT, stack=(Frame(top.name, "exit", 0, (port, False)),),
                           exit_steps=0)
        elif not p.stack:
            self.emit(SECTION_ENTER, pid, section=RECOVER)
            self.emit(INVOKE, pid, lock=top.name, proc="recover", port=port, caller=None)
            p = p._replace(stack=(Frame(top.name, "recover", 0, (port,)),))
        self.procs[pid] = p
        in_exit = p.exit_steps is not None
        before = {c: getattr(p, c) for c in COUNTERS}
        self._run(pid)
        if in_exit:
            s = self.ledger.open_sp[pid] or self.ledger.superpassages[-1]
            s.exit_steps += 1
        p = self.procs[pid]
        # step counters for bounded-abort / wait-free properties
        upd = {}
        if p.abort_steps is not None:
            upd["abort_steps"] = p.abort_steps + 1
        if p.exit_steps is not None:
            upd["exit_steps"] = p.exit_steps + 1
        if p.reentry_steps is not None:
            upd["reentry_steps"] = p.reentry_steps + 1
        if upd:
            self.procs[pid] = p._replace(**upd)
        self.closed = {c: v + 1 for c, v in before.items() if v is not None and getattr(p, c) is None}
        return self._flush()

    def _run(self, pid: int) -> None:
        cx = Ctx(self, pid)
        self.procs[pid] = self.procs[pid]._replace(poised=None)
        locks = self.locks
        for _ in range(LOCAL_LOOP_LIMIT):
            p = self.procs[pid]
            stack = p.stack
            if not stack:
                return
            fr = stack[-1]
            cx.dry = cx.op_done
            cx.frame = fr
            cx.pending_nv = []
            cx.pending_notes = []
            regs = dict(fr.regs)
            try:
                out = locks[fr.lock].procs[fr.proc](cx, fr.pc, fr.args, regs)
            except NeedStep:
                self.procs[pid] = p._replace(poised=cx.poised)
                return
            if cx.pending_nv:
                self.nv_changed = True
            for k, v in cx.pending_nv:
                if v is None:
                    self.nv.pop(k, None)
                else:
                    self.nv[k] = v
            for kind, payload in cx.pending_notes:
                self.emit(NOTE, pid, note=kind, k_point=p.k_point, **payload)
            if isinstance(out, int):
                stack = stack[:-1] + (fr._replace(pc=out, regs=freeze(regs)),)
            elif isinstance(out, Call):
                callee = Frame(out.lock, out.proc, 0, out.args)
                stack = stack[:-1] + (fr._replace(pc=out.ret_pc, regs=freeze(regs), into=out.into), callee)
                if out.lock != fr.lock:
                    self.emit(INVOKE, pid, lock=out.lock, proc=out.proc,
                              port=out.args[0] if out.args else None, caller=fr.lock)
            elif isinstance(out, Ret):
                stack = stack[:-1]
                caller_lock = stack[-1].lock if stack else None
                if fr.lock != caller_lock:
                    self.emit(RETURN, pid, lock=fr.lock, proc=fr.proc,
                              port=fr.args[0] if fr.args else None, value=out.value,
                              caller=caller_lock)
                if stack:
                    c = stack[-1]
                    cregs = c.regs
                    if c.into is not None:
                        d = dict(cregs)
                        d[c.into] = out.value
                        cregs = freeze(d)
                    stack = stack[:-1] + (c._replace(regs=cregs, into=None),)
                else:
                    self.procs[pid] = p._replace(stack=())
                    self._outer_return(pid, fr.proc, out.value)
                    if not self.procs[pid].stack:
                        return
                    continue
            else:
                raise HarnessFault(f"bad handler result {out!r} from {fr.lock}.{fr.proc}@{fr.pc}")
            self.procs[pid] = p._replace(stack=stack)
        raise HarnessFault(f"process {pid} looped locally without a memory op")

    def _outer_return(self, pid: int, proc: str, value: Any) -> None:
        p = self.procs[pid]
        top = self.top
        port = top.port_of(pid)
        if p.phase == RECOVER:
            self.emit(SECTION_LEAVE, pid, section=RECOVER)
            if p.expect is not None and value != p.expect:
                self.emit(NOTE, pid, note="ILL_BEHAVED", expected=p.expect, got=value)
            if value == TRY:
                self.emit(SECTION_ENTER, pid, section=TRY)
                self.emit(INVOKE, pid, lock=top.name, proc="try", port=port, caller=None)
                self.procs[pid] = p._replace(phase=TRY, expect=None,
                                             stack=(Frame(top.name, "try", 0, (port,)),))
            elif value == CS:
                self._enter_cs(pid, p._replace(expect=None))
            elif value == EXIT:
                self.emit(SECTION_ENTER, pid, section=EXIT)
                self.emit(INVOKE, pid, lock=top.name, proc="exit", port=port, caller=None)
                self.procs[pid] = p._replace(phase=EXIT, expect=None, abort_steps=None,
                                             stack=(Frame(top.name, "exit", 0, (port, False)),))
            else:
                raise HarnessFault(f"Recover returned {value!r}")
        elif p.phase == TRY:
            self.emit(SECTION_LEAVE, pid, section=TRY)
            if value is True:
                self._enter_cs(pid, p)
            elif value is False:
                self.abort_read = True
                if not p.aborted:
                    self.emit(NOTE, pid, note="SPURIOUS_ABORT")
                self._end_sp(pid, p, aborted=True)
            else:
                raise HarnessFault(f"Try returned {value!r}")
        elif p.phase == EXIT:
            self.emit(SECTION_LEAVE, pid, section=EXIT)
            self._end_sp(pid, p, aborted=False)
        else:
            raise HarnessFault(f"return from {proc} in phase {p.phase}")

    def _enter_cs(self, pid: int, p: ProcState) -> None:
        others = [q.pid for q in self.procs if q.pid != pid and q.crashed_in_cs]
        if others:
            self.emit(NOTE, pid, note="CS_REENTRY_VIOLATION", waiting=others)
        self.emit(SECTION_ENTER, pid, section=CS)
        self.procs[pid] = p._replace(phase=CS, stack=(), crashed_in_cs=False,
                                     abort_steps=None, reentry_steps=None)

    def _end_sp(self, pid: int, p: ProcState, aborted: bool) -> None:
        self.ledger.end_sp(pid, self.step_no, aborted, p.k_point)
        self.emit(SP_END, pid, aborted=aborted)
        self.procs[pid] = p._replace(phase=IDLE, stack=(), aborted=False, expect=None,
                                     crashed_in_cs=False, abort_steps=None, exit_steps=None,
                                     reentry_steps=None, k_point=0)

    # -- schedules ----------------------------------------------------------

    def apply(self, action: str, pid: int) -> list[dict]:
        if action == "step":
            return self.step(pid)
        if action == "crash":
            return self.crash(pid)
        if action == "abort":
            return self.signal_abort(pid)
        raise SchedulerError(f"unknown action {action!r}")


# -- trace serialization -----------------------------------------------------

def _jsonable(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def decisions_of(events: list[dict]) -> list[tuple[str, int]]:
    """Recover the adversary decision sequence from a trace."""
    out: list[tuple[str, int]] = []
    last = None
    for ev in events:
        if ev["step_no"] == last:
            continue
        last = ev["step_no"]
        kind = ev["kind"]
        if kind == CRASH:
            out.append(("crash", ev["pid"]))
        elif kind == ABORT_SIGNAL:
            out.append(("abort", ev["pid"]))
        else:
            out.append(("step", ev["pid"]))
    return out


def write_trace(path, config: dict, events: list[dict], verdict: dict | None = None) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"kind": "HEADER", "config": config}) + "\n")
        for ev in events:
            f.write(json.dumps(_jsonable(ev)) + "\n")
        f.write(json.dumps({"kind": "END", "steps": len(decisions_of(events)),
                            "verdict": verdict}) + "\n")


def read_trace(path) -> tuple[dict, list[dict], dict]:
    """Parse a trace file; raises ValueError on malformed or truncated input."""
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty trace file")
    try:
        recs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed trace line: {e}") from None
    if recs[0].get("kind") != "HEADER" or "config" not in recs[0]:
        raise ValueError("trace has no header")
    if recs[-1].get("kind") != "END":
        raise ValueError("trace is truncated (no END record)")
    events = recs[1:-1]
    for ev in events:
        if not {"step_no", "pid", "kind"} <= ev.keys():
            raise ValueError(f"malformed event {ev}")
    if len(decisions_of(events)) != recs[-1].get("steps"):
        raise ValueError("trace step count does not match END record")
    return recs[0]["config"], events, recs[-1]


# -- well-formedness ---------------------------------------------------------

@dataclass
class _UseState:
    port: Any = None
    need_recover: bool = True    # at super-passage start and after every crash
    recovered: str | None = None  # result of the last completed Recover, if not consumed
    in_cs: bool = False
    busy: bool = False           # inside Try or Exit
    occupying: bool = False


@dataclass
class WellFormedVerdict:
    ok: bool
    violation: str | None = None
    event: dict | None = None


class WellFormedMonitor:
    """Incremental check of the client discipline on every lock instance.

    Uses the INVOKE/RETURN events the kernel emits for calls that cross a lock
    boundary.  Checked per (lock, pid): Recover comes first after a crash or at
    the start of a super-passage; Try only after Recover returned TRY; Exit
    only from the CS or after Recover returned CS or EXIT; the port is constant
    within a super-passage; and no two processes hold the same port at once.
    """

    def __init__(self):
        self.use: dict[tuple[str, int], _UseState] = {}
        self.holder: dict[tuple[str, Any], int] = {}

    def snapshot(self) -> tuple:
        return ({k: _UseState(**u.__dict__) for k, u in self.use.items()}, dict(self.holder))

    def restore(self, snap: tuple) -> None:
        use, holder = snap
        self.use = {k: _UseState(**u.__dict__) for k, u in use.items()}
        self.holder = dict(holder)

    def _occupy(self, lock: str, u: _UseState, pid: int) -> str | None:
        h = self.holder.get((lock, u.port))
        if h is not None and h != pid:
            return f"{lock}: port {u.port} used by {pid} while held by {h}"
        self.holder[(lock, u.port)] = pid
        u.occupying = True
        return None

    def _release(self, lock: str, u: _UseState, pid: int) -> None:
        if self.holder.get((lock, u.port)) == pid:
            del self.holder[(lock, u.port)]
        u.occupying = False
        u.in_cs = False

    def feed(self, ev: dict) -> str | None:
        """Consume one event; return a violation message or None."""
        kind, pid = ev["kind"], ev["pid"]
        if kind == CRASH:
            for (lk, p), u in self.use.items():
                if p == pid:
                    u.need_recover = True
                    u.recovered = None
                    u.busy = False
            return None
        if kind == SP_END:
            for (lk, p), u in self.use.items():
                if p == pid and u.occupying:
                    return f"{lk}: super-passage of {pid} on port {u.port} still open"
            return None
        if kind not in (INVOKE, RETURN) or ev["proc"] not in ("recover", "try", "exit"):
            return None
        lock, proc, port = ev["lock"], ev["proc"], ev.get("port")
        u = self.use.get((lock, pid))
        if u is None:
            u = self.use[(lock, pid)] = _UseState()
        if kind == INVOKE:
            if u.occupying and port != u.port:
                return f"{lock}: port changed from {u.port} to {port} within a super-passage"
            if proc == "recover":
                u.port = port
                u.need_recover = False
                u.recovered = None
                return self._occupy(lock, u, pid) if u.occupying else None
            if u.need_recover:
                return f"{lock}: {proc} invoked without Recover first"
            if proc == "try":
                if u.recovered != TRY:
                    return f"{lock}: Try invoked without Recover returning TRY"
            elif not (u.in_cs or u.recovered in (CS, EXIT)):
                return f"{lock}: Exit invoked outside CS"
            u.recovered = None
            u.in_cs = False
            u.busy = True
            return self._occupy(lock, u, pid)
        val = ev.get("value")
        if proc == "recover":
            u.recovered = val
            if val in (CS, EXIT):
                u.in_cs = val == CS
                return self._occupy(lock, u, pid)
        elif proc == "try":
            u.busy = False
            if val is True:
                u.in_cs = True
            else:
                self._release(lock, u, pid)
        else:
            u.busy = False
            self._release(lock, u, pid)
        return None


def check_wellformed(events: Iterable[dict]) -> WellFormedVerdict:
    """Verdict for a whole trace; reports the first offending event."""
    mon = WellFormedMonitor()
    for ev in events:
        msg = mon.feed(ev)
        if msg:
            return WellFormedVerdict(False, msg, ev)
    return WellFormedVerdict(True)
