"""Abort handling that starves a waiter, and the adversary that shows it.

``FaultyWPort`` differs from ``WPortLock`` in two places only:

* Exit has no Promote before the release; its single Promote comes after.
* An aborting process that finds ``LOCK_STATUS = (0, o, os)`` CASes it to
  ``(0, k, GO[k])``, pretending it took and released the lock.  This fails
  every concurrent Promote, including those about to promote someone else.

``starvation_scenario`` drives four processes: p1 holds the lock, p2..p4
wait.  Each round one waiter other than p2 aborts and stops right before its
Promote CAS; the previously stopped Promotes are let go (their CAS fails) and
run until they stop before a CAS again; p2 takes one step.  Guards name
algorithmic positions, not step counts, so the same script runs against the
correct lock, where it falls back to fair scheduling when a guard cannot be
reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kernel import CS, EXIT, IDLE, TRY, Call, Machine, Ret
from .memory import CAS, READ, HarnessFault
from .wport import LockStatus, WPortLock


class FaultyWPort(WPortLock):
    def exit(self, cx, pc, args, r):
        k, abort = args
        if pc == 0:
            if abort:
                return 1
            cx.write(self.STATUS[k], EXIT)
            return 1
        if pc == 1:
            a = cx.read(self.ACTIVE)
            return 2 if a >> k & 1 else (30 if abort else 4)
        if pc == 2:
            cx.faa(self.ACTIVE, -(1 << k))
            return 30 if abort else 4
        # abort flow: make it look as if k took the lock and released it
        if pc == 30:
            ls = cx.read(self.LS)
            r["ls"] = ls
            return 4 if ls.taken else 31
        if pc == 31:
            r["mine"] = cx.read(self.GO[k])
            return 32
        if pc == 32:
            cx.cas(self.LS, r["ls"], LockStatus(0, k, r["mine"]))
            return 4
        if pc == 4:
            r["g"] = cx.read(self.GO[k])
            return 5
        if pc == 5:
            ls = cx.read(self.LS)
            r["ls"] = ls
            return 6 if ls == (1, k, r["g"]) else 7
        if pc == 6:
            cx.cas(self.LS, r["ls"], LockStatus(0, k, r["g"]))
            return 7
        if pc == 7:
            return Call(self.name, "promote", (k, None), 8)
        if pc == 8:
            return Call(self.alloc.name, "retire", (k, r["g"]), 10)
        if pc == 10:
            cx.write(self.GO[k], None)
            return 11
        if pc == 11:
            cx.write(self.STATUS[k], TRY)
            return Ret(None)
        raise HarnessFault(f"bad pc {pc}")


# -- guards ------------------------------------------------------------------

def at_promote_cas(m: Machine, lock: WPortLock, pid: int) -> bool:
    """About to CAS LOCK_STATUS from inside a Promote call."""
    p = m.procs[pid]
    return bool(p.stack) and p.stack[-1].proc == "promote" and p.poised == (CAS, lock.LS)


def in_exit(m: Machine, pid: int) -> bool:
    return any(f.proc == "exit" for f in m.procs[pid].stack)


def spinning(m: Machine, lock: WPortLock, pid: int) -> bool:
    p = m.procs[pid]
    if not p.stack or p.stack[-1].proc != "try" or p.stack[-1].pc != 6 or p.poised is None:
        return False
    return p.poised[0] == READ and p.poised[1] == p.stack[-1].reg("g")


@dataclass
class StarvationReport:
    variant: str
    rounds: int
    aborts: bool
    p2_admitted_round: int | None = None
    steps: int = 0
    fallbacks: int = 0
    table: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list, repr=False)

    @property
    def starved(self) -> bool:
        return self.p2_admitted_round is None


ARRIVALS = 10**9


def scenario_config(faulty: bool = True, reclaim: bool = True):
    from .checker import LockConfig
    return LockConfig("faulty-wport" if faulty else "wport", N=4, D=4, W=8,
                      allocator="reclaiming" if reclaim else "oracle")


class _Script:
    def __init__(self, faulty: bool, reclaim: bool, limit: int, record: bool = False):
        from .checker import build
        m = self.m = build(scenario_config(faulty, reclaim), arrivals=ARRIVALS, record=record)
        self.lock = m.top
        self.limit = limit
        self.fallbacks = 0

    def run_until(self, pid: int, guard, allow_idle: bool = True) -> bool:
        """Step ``pid`` until ``guard()`` holds; False if it did not within the limit."""
        m = self.m
        for _ in range(self.limit):
            if guard():
                return True
            if m.procs[pid].phase == IDLE and not allow_idle:
                return False
            m.step(pid)
        return guard()

    def fair(self, steps: int) -> None:
        self.fallbacks += 1
        m = self.m
        for i in range(steps):
            m.step(i % m.n)


def starvation_scenario(rounds: int = 1000, faulty: bool = True, aborts: bool = True,
                        reclaim: bool = True, limit: int = 500,
                        record: bool = False) -> StarvationReport:
    """Run the abort-driven starvation script; report whether p2 got the CS.

    Processes are 0-indexed here: pid 0 is p1, pid 1 is p2 (the victim).
    """
    s = _Script(faulty, reclaim, limit, record)
    m, L = s.m, s.lock
    rep = StarvationReport("faulty" if faulty else "correct", 0, aborts)
    victim = 1
    ok = s.run_until(0, lambda: m.procs[0].phase == CS)
    for q in (1, 2, 3):
        ok = ok and s.run_until(q, lambda q=q: spinning(m, L, q))
    if not ok:
        raise HarnessFault("scenario setup failed")
    m.step(0)  # leave the CS
    poised = []
    if s.run_until(0, lambda: at_promote_cas(m, L, 0)):
        poised.append(0)
    else:
        s.fair(4 * limit)
    turn = 0
    for rnd in range(1, rounds + 1):
        rep.rounds = rnd
        aborter = None
        if aborts:
            cands = [q for q in (0, 2, 3) if q not in poised and spinning(m, L, q)]
            if cands:
                aborter = cands[turn % len(cands)]
                turn += 1
                m.signal_abort(aborter)
                if not s.run_until(aborter, lambda: at_promote_cas(m, L, aborter) and in_exit(m, aborter)):
                    s.fair(4 * limit)
        stopped = []
        for q in poised:
            if m.procs[q].phase == CS or m.procs[victim].phase == CS:
                break
            m.step(q)
            # the CAS has been taken; run on until the next Promote CAS or the spin loop
            if s.run_until(q, lambda q=q: at_promote_cas(m, L, q) or spinning(m, L, q)
                           or m.procs[q].phase == CS):
                if at_promote_cas(m, L, q):
                    stopped.append(q)
            else:
                s.fair(4 * limit)
        poised = stopped + ([aborter] if aborter is not None and at_promote_cas(m, L, aborter) else [])
        if m.procs[victim].phase != CS:
            m.step(victim)
        ls = L.lock_status()
        rep.table.append({"round": rnd, "aborter": aborter, "owner": ls.owner, "taken": ls.taken,
                          "poised": list(poised), "p2_phase": m.procs[victim].phase})
        if m.procs[victim].phase == CS or _passed_cs(m, victim):
            rep.p2_admitted_round = rnd
            break
        if not poised and not any(spinning(m, L, q) for q in (0, 2, 3)):
            # nothing left for the script to drive: let the system run fairly
            s.fair(4 * limit)
    rep.steps = m.step_no
    rep.fallbacks = s.fallbacks
    rep.trace = m.trace
    return rep


def _passed_cs(m: Machine, pid: int) -> bool:
    return any(sp.pid == pid and not sp.aborted for sp in m.ledger.superpassages)
