"""Recoverable abortable W-port lock.

Ports ``0..D-1`` (``D <= W``) share a bitmask ``ACTIVE`` of waiting ports and
a single word ``LOCK_STATUS = (taken, owner, owner_go)``.  A waiter publishes
its spin slot in ``GO[k]``, sets its bit, and spins on the slot.  Any process
may promote the next active port after the current owner (round robin from
``owner + 1``) by installing ``(1, next, GO[next])`` and setting that slot.
"""

from __future__ import annotations

from typing import NamedTuple

from .kernel import ABORT, CS, EXIT, TRY, Call, ConfigError, Lock, Ret
from .memory import HarnessFault
from .reclamation import OracleAllocator, SlotPool

TRUE, FALSE = True, False


class LockStatus(NamedTuple):
    taken: int
    owner: int
    go: int | None


def next_port(owner: int, active: int, W: int) -> int | None:
    """First port after ``owner`` (cyclically, modulo W) whose bit is set in ``active``.

    ``owner`` itself is considered last.  Returns None when ``active`` is 0.
    """
    for d in range(1, W + 1):
        i = (owner + d) % W
        if active >> i & 1:
            return i
    return None


class WPortLock(Lock):
    """D-port recoverable abortable lock; D must not exceed the word size W."""

    def __init__(self, machine, name: str, D: int, reclaim: bool = True,
                 homes: list[int] | None = None):
        super().__init__(machine, name)
        W = machine.W
        if D < 1 or D > W:
            raise ConfigError(f"{name}: D={D} ports but word size W={W}")
        self.D = D
        self.W = W
        mem = machine.memory
        homes = homes or [k if k < machine.n else -1 for k in range(D)]
        self.homes = homes
        self.ACTIVE = mem.alloc(f"{name}.ACTIVE", 0)
        self.LS = mem.alloc(f"{name}.LOCK_STATUS", LockStatus(0, 0, None))
        self.GO = [mem.alloc(f"{name}.GO[{k}]", None, home=homes[k]) for k in range(D)]
        self.STATUS = [mem.alloc(f"{name}.STATUS[{k}]", TRY, home=homes[k], private=True)
                       for k in range(D)]
        if reclaim:
            self.alloc = SlotPool(machine, f"{name}.pool", D, homes)
        else:
            self.alloc = OracleAllocator(machine, f"{name}.oracle", D)
        self.reclaim = reclaim
        self.procs = {"recover": self.recover, "try": self.try_, "exit": self.exit,
                      "promote": self.promote}

    def port_of(self, pid: int) -> int:
        if pid >= self.D:
            raise ConfigError(f"{self.name}: process {pid} has no port (D={self.D})")
        return pid

    # -- Recover ------------------------------------------------------------

    def recover(self, cx, pc, args, r):
        (k,) = args
        s = cx.read(self.STATUS[k])
        if s in (TRY, ABORT):
            return Ret(TRY)
        return Ret(s)

    # -- Try ----------------------------------------------------------------

    def try_(self, cx, pc, args, r):
        (k,) = args
        if pc == 0:
            if cx.aborted:
                return 10
            g = cx.read(self.GO[k])
            r["g"] = g
            return 1 if g is None else 3
        if pc == 1:
            return Call(self.alloc.name, "get_index", (k,), 2, "g")
        if pc == 2:
            cx.write(self.GO[k], r["g"])
            return 3
        if pc == 3:
            a = cx.read(self.ACTIVE)
            return 5 if a >> k & 1 else 4
        if pc == 4:
            cx.faa(self.ACTIVE, 1 << k)
            return 5
        if pc == 5:
            return Call(self.name, "promote", (k, None), 6)
        if pc == 6:
            if cx.aborted:
                return 10
            return 7 if cx.read(r["g"]) is TRUE else 6
        if pc == 7:
            cx.write(self.STATUS[k], CS)
            return Ret(True)
        if pc == 10:
            cx.write(self.STATUS[k], ABORT)
            return 11
        if pc == 11:
            return Call(self.name, "exit", (k, True), 12)
        if pc == 12:
            return Ret(False)
        raise HarnessFault(f"bad pc {pc}")

    # -- Exit ---------------------------------------------------------------

    def exit(self, cx, pc, args, r):
        k, abort = args
        if pc == 0:
            if abort:
                return 1
            cx.write(self.STATUS[k], EXIT)
            return 1
        if pc == 1:
            a = cx.read(self.ACTIVE)
            return 2 if a >> k & 1 else 3
        if pc == 2:
            cx.faa(self.ACTIVE, -(1 << k))
            return 3
        if pc == 3:
            return Call(self.name, "promote", (k, k), 4)
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
            r.pop("ls", None)
            return Call(self.name, "promote", (k, None), 8)
        if pc == 8:
            # also when GO[k] is empty: a slot obtained before a crash but never
            # published must still go back to the pool
            return Call(self.alloc.name, "retire", (k, r["g"]), 10)
        if pc == 10:
            cx.write(self.GO[k], None)
            return 11
        if pc == 11:
            cx.write(self.STATUS[k], TRY)
            return Ret(None)
        raise HarnessFault(f"bad pc {pc}")

    # -- Promote ------------------------------------------------------------

    def promote(self, cx, pc, args, r):
        """Install the next active port as owner if the lock is free, then wake the owner.

        With reclamation on, every slot about to be written is first announced
        in ``REFERENCED[k]`` and re-validated against ``LOCK_STATUS``; a failed
        validation ends the call (someone else made progress).
        """
        k, j = args
        rec = self.reclaim
        if pc == 0:
            ls = cx.read(self.LS)
            r["ls"] = ls
            return 1 if rec and ls.go is not None else 3
        if pc == 1:
            cx.write(self.alloc.REF[k], r["ls"].go)
            r["ann"] = r["ls"].go
            return 2
        if pc == 2:
            return 3 if cx.read(self.LS) == r["ls"] else Ret(None)
        if pc == 3:
            ls = r["ls"]
            if ls.taken:
                r["tgt"] = ls.go
                if rec:
                    r["held"] = ls.go
                return 9
            a = cx.read(self.ACTIVE)
            cand = next_port(ls.owner, a, self.W) if a else j
            if cand is None:
                return 6
            r["cand"] = cand
            return 4
        if pc == 4:
            g = cx.read(self.GO[r["cand"]])
            if g is None:
                return 6
            r["cg"] = g
            return 5
        if pc == 5:
            cx.cas(self.LS, r["ls"], LockStatus(1, r["cand"], r["cg"]))
            return 6
        if pc == 6:
            ls = cx.read(self.LS)
            if not ls.taken:
                return Ret(None)
            r["ls"] = ls
            if not rec or r.get("ann") == ls.go:
                r["tgt"] = ls.go
                if rec:
                    r["held"] = ls.go
                return 9
            return 7
        if pc == 7:
            cx.write(self.alloc.REF[k], r["ls"].go)
            r["ann"] = r["ls"].go
            return 8
        if pc == 8:
            if cx.read(self.LS) != r["ls"]:
                return Ret(None)
            r["tgt"] = r["held"] = r["ls"].go
            return 9
        if pc == 9:
            if r["tgt"] is None:
                return Ret(None)
            cx.write(r["tgt"], TRUE)
            return Ret(None)
        raise HarnessFault(f"bad pc {pc}")

    # -- harness views ------------------------------------------------------

    def lock_status(self) -> LockStatus:
        return self.m.memory.peek(self.LS)

    def clean(self) -> list[str]:
        mem = self.m.memory
        bad = []
        if mem.peek(self.ACTIVE) != 0:
            bad.append(f"{self.name}: ACTIVE={mem.peek(self.ACTIVE):b} when quiescent")
        if mem.peek(self.LS).taken:
            bad.append(f"{self.name}: LOCK_STATUS taken when quiescent")
        for k in range(self.D):
            if mem.peek(self.GO[k]) is not None:
                bad.append(f"{self.name}: GO[{k}] not reset")
            if mem.peek(self.STATUS[k]) != TRY:
                bad.append(f"{self.name}: STATUS[{k}]={mem.peek(self.STATUS[k])}")
            if self.m.nv.get(self.alloc.key(k)) is not None:
                bad.append(f"{self.name}: allocator state for port {k} not idle")
        return bad

    def check_state(self) -> list[str]:
        a = self.m.memory.peek(self.ACTIVE)
        if a >> self.D:
            return [f"{self.name}: ACTIVE has bits beyond port {self.D - 1}"]
        return []
