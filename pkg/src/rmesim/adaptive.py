"""Contention-adaptive wrapper around the tournament tree.

Arriving processes try to capture one of ``B`` fast ports in ``K_OWNERS`` by
CAS, scanning upward from ``CURR_K[p]``.  A process that captures port ``k``
competes in a ``B``-port fast lock; one that runs off the end uses the slow
tree lock.  The two winners meet in a 2-port lock (fast side is port 1, slow
side port 0).  Failing to capture port ``i`` implies that at least ``i+1``
other processes were in their super-passages at some point since ``p``
started, which is what bounds the cost by ``min(K, B)``.
"""

from __future__ import annotations

from .kernel import CS, EXIT, TRY, Call, ConfigError, Lock, Ret
from .memory import HarnessFault
from .tree import TreeLock
from .wport import WPortLock

FAST, SLOW = "FAST", "SLOW"
LEFT, RIGHT = 0, 1


class AdaptiveLock(Lock):
    def __init__(self, machine, name: str, N: int, B: int, tree_D: int = 2,
                 reclaim: bool = True):
        super().__init__(machine, name)
        if B < 1 or B > machine.W:
            raise ConfigError(f"{name}: B={B} must be in 1..W={machine.W}")
        self.N, self.B = N, B
        mem = machine.memory
        g = [-1] * B
        self.fast = WPortLock(machine, f"{name}.fast", B, reclaim, homes=g)
        self.slow = TreeLock(machine, f"{name}.slow", N, tree_D, reclaim)
        self.two = WPortLock(machine, f"{name}.two", 2, reclaim, homes=[-1, -1])
        self.K_OWNERS = mem.alloc_array(f"{name}.K_OWNERS", B, None)
        self.CURR_K = [mem.alloc(f"{name}.CURR_K[{p}]", 0, home=p, private=True) for p in range(N)]
        self.PATH = [mem.alloc(f"{name}.PATH[{p}]", None, home=p, private=True) for p in range(N)]
        self.SIDE = [mem.alloc(f"{name}.SIDE[{p}]", None, home=p, private=True) for p in range(N)]
        self.STATUS = [mem.alloc(f"{name}.STATUS[{p}]", TRY, home=p, private=True) for p in range(N)]
        self.procs = {"recover": self.recover, "try": self.try_, "exit": self.exit}

    def port_of(self, pid: int) -> int:
        if pid >= self.N:
            raise ConfigError(f"{self.name}: process {pid} has no port (N={self.N})")
        return pid

    def recover(self, cx, pc, args, r):
        (p,) = args
        return Ret(cx.read(self.STATUS[p]))

    def _sub(self, r, p):
        if r["path"] == FAST:
            return self.fast.name, r["c"], self.two.name, RIGHT
        return self.slow.name, p, self.two.name, LEFT

    def try_(self, cx, pc, args, r):
        (p,) = args
        B = self.B
        if pc == 0:
            r["c"] = cx.read(self.CURR_K[p])
            return 1
        if pc == 1:
            if r["c"] >= B:
                return 6
            return 4 if cx.cas(self.K_OWNERS[r["c"]], None, p) else 2
        if pc == 2:
            if cx.read(self.K_OWNERS[r["c"]]) == p:
                return 4
            cx.note("PORT_CAS_FAIL", port=r["c"])
            return 3
        if pc == 3:
            r["c"] += 1
            cx.write(self.CURR_K[p], r["c"])
            return 1
        if pc == 4:
            cx.write(self.PATH[p], FAST)
            r["path"] = FAST
            return 7
        if pc == 6:
            cx.write(self.PATH[p], SLOW)
            r["path"] = SLOW
            return 7
        sub, sport, two, side = self._sub(r, p) if "path" in r else (None,) * 4
        if pc == 7:
            return Call(sub, "recover", (sport,), 8, "s")
        if pc == 8:
            s = r.pop("s")
            if s == TRY:
                return Call(sub, "try", (sport,), 9, "ok")
            return 10 if s == CS else 20
        if pc == 9:
            return 10 if r.pop("ok") else 20
        if pc == 10:
            cx.write(self.SIDE[p], side)
            return 11
        if pc == 11:
            return Call(two, "recover", (side,), 12, "s")
        if pc == 12:
            s = r.pop("s")
            if s == TRY:
                return Call(two, "try", (side,), 13, "ok")
            return 14 if s == CS else 20
        if pc == 13:
            return 14 if r.pop("ok") else 20
        if pc == 14:
            cx.write(self.STATUS[p], CS)
            return Ret(True)
        if pc == 20:
            return Call(self.name, "exit", (p, True), 21)
        if pc == 21:
            return Ret(False)
        raise HarnessFault(f"bad pc {pc}")

    def exit(self, cx, pc, args, r):
        """Release 2-port lock, then the path lock, then the captured port.

        PATH is cleared before the port is given back, so a crash after the
        release can no longer lead this process into the fast lock on a port
        another process may already own.
        """
        p, abort = args
        if pc == 0:
            if abort:
                return 1
            cx.write(self.STATUS[p], EXIT)
            return 1
        if pc == 1:
            r["side"] = cx.read(self.SIDE[p])
            return 4 if r["side"] is None else 2
        if pc == 2:
            return Call(self.two.name, "recover", (r["side"],), 3, "s")
        if pc == 3:
            if r.pop("s") != TRY:
                return Call(self.two.name, "exit", (r["side"], False), 30)
            return 30
        if pc == 30:
            cx.write(self.SIDE[p], None)
            return 4
        if pc == 4:
            path = cx.read(self.PATH[p])
            r["path"] = path
            if path is None:
                return 10
            return 5 if path == FAST else 6
        if pc == 5:
            r["c"] = cx.read(self.CURR_K[p])
            r["sub"], r["sport"] = self.fast.name, r["c"]
            return 7
        if pc == 6:
            r["sub"], r["sport"] = self.slow.name, p
            return 7
        if pc == 7:
            return Call(r["sub"], "recover", (r["sport"],), 8, "s")
        if pc == 8:
            if r.pop("s") != TRY:
                return Call(r["sub"], "exit", (r["sport"], False), 9)
            return 9
        if pc == 9:
            cx.write(self.PATH[p], None)
            return 10
        if pc == 10:
            c = cx.read(self.CURR_K[p])
            r["c"] = c
            return 11 if c < self.B else 12
        if pc == 11:
            cx.cas(self.K_OWNERS[r["c"]], p, None)
            return 12
        if pc == 12:
            cx.write(self.CURR_K[p], 0)
            return 13
        if pc == 13:
            cx.write(self.STATUS[p], TRY)
            return Ret(None)
        raise HarnessFault(f"bad pc {pc}")

    def clean(self) -> list[str]:
        mem = self.m.memory
        bad = []
        for p in range(self.N):
            for arr, want, nm in ((self.CURR_K, 0, "CURR_K"), (self.PATH, None, "PATH"),
                                  (self.SIDE, None, "SIDE"), (self.STATUS, TRY, "STATUS")):
                if mem.peek(arr[p]) != want:
                    bad.append(f"{self.name}: {nm}[{p}]={mem.peek(arr[p])!r}")
        bad += [f"{self.name}: K_OWNERS[{k}] held" for k in range(self.B) if mem.peek(self.K_OWNERS[k]) is not None]
        return bad + self.fast.clean() + self.slow.clean() + self.two.clean()

    def check_state(self) -> list[str]:
        return self.fast.check_state() + self.slow.check_state() + self.two.check_state()
