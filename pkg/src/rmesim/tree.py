"""Tournament tree of D-port locks for N processes.

Level 0 has ``ceil(N/D)`` nodes; process ``p`` enters node ``p // D`` on port
``p % D``.  The winner of node ``i`` at level ``l`` enters node ``i // D`` at
level ``l+1`` on port ``i % D``.  The root is the single node of the top
level.  ``CUR[p]`` records the highest level ``p`` is contending or holds, so a
crashed process resumes its ascent (or its descent in Exit) from there.
"""

from __future__ import annotations

from .kernel import CS, EXIT, TRY, Call, ConfigError, Lock, Ret
from .memory import HarnessFault
from .wport import WPortLock


def tree_shape(N: int, D: int) -> list[int]:
    """Number of nodes per level, bottom up."""
    if N < 1 or D < 2:
        raise ConfigError(f"tree needs N >= 1 and D >= 2 (got N={N}, D={D})")
    sizes = [-(-N // D)]
    while sizes[-1] > 1:
        sizes.append(-(-sizes[-1] // D))
    return sizes


class TreeLock(Lock):
    def __init__(self, machine, name: str, N: int, D: int, reclaim: bool = True):
        super().__init__(machine, name)
        if N > machine.n:
            raise ConfigError(f"{name}: N={N} exceeds {machine.n} processes")
        self.N, self.D = N, D
        self.shape = tree_shape(N, D)
        self.H = len(self.shape)
        self.nodes: list[list[WPortLock]] = []
        for lvl, count in enumerate(self.shape):
            span = D ** lvl
            row = []
            for i in range(count):
                homes = []
                for port in range(D):
                    first = (i * D + port) * span
                    homes.append(first if first < N else -1)
                row.append(WPortLock(machine, f"{name}.L{lvl}.{i}", D, reclaim, homes))
            self.nodes.append(row)
        mem = machine.memory
        self.CUR = [mem.alloc(f"{name}.CUR[{p}]", None, home=p, private=True) for p in range(N)]
        self.STATUS = [mem.alloc(f"{name}.STATUS[{p}]", TRY, home=p, private=True) for p in range(N)]
        self.procs = {"recover": self.recover, "try": self.try_, "exit": self.exit}

    def port_of(self, pid: int) -> int:
        if pid >= self.N:
            raise ConfigError(f"{self.name}: process {pid} has no port (N={self.N})")
        return pid

    def node(self, p: int, lvl: int) -> tuple[WPortLock, int]:
        """Node and port used by process ``p`` at level ``lvl``."""
        span = self.D ** lvl
        return self.nodes[lvl][p // (span * self.D)], (p // span) % self.D

    def path(self, p: int) -> list[tuple[str, int]]:
        return [(n.name, port) for n, port in (self.node(p, l) for l in range(self.H))]

    def recover(self, cx, pc, args, r):
        (p,) = args
        return Ret(cx.read(self.STATUS[p]))

    def try_(self, cx, pc, args, r):
        (p,) = args
        if pc == 0:
            c = cx.read(self.CUR[p])
            r["cur"] = c
            r["lvl"] = 0 if c is None else c
            return 1
        if pc == 1:
            # CUR names the level being contended or held, so an aborting
            # process that crashed mid-ascent still finishes that node's Try
            if r["cur"] == r["lvl"]:
                return 2
            cx.write(self.CUR[p], r["lvl"])
            r["cur"] = r["lvl"]
            return 2
        n, port = self.node(p, r["lvl"]) if pc in (2, 3) else (None, None)
        if pc == 2:
            return Call(n.name, "recover", (port,), 3, "s")
        if pc == 3:
            s = r.pop("s")
            if s == TRY:
                return Call(n.name, "try", (port,), 4, "ok")
            if s == CS:
                return 5
            return 20
        if pc == 4:
            return 5 if r.pop("ok") else 20
        if pc == 5:
            if r["lvl"] == self.H - 1:
                return 6
            if cx.aborted:
                return 20
            r["lvl"] += 1
            return 1
        if pc == 6:
            cx.write(self.STATUS[p], CS)
            return Ret(True)
        if pc == 20:
            return Call(self.name, "exit", (p, True), 21)
        if pc == 21:
            return Ret(False)
        raise HarnessFault(f"bad pc {pc}")

    def exit(self, cx, pc, args, r):
        p, abort = args
        if pc == 0:
            if abort:
                return 1
            cx.write(self.STATUS[p], EXIT)
            return 1
        if pc == 1:
            c = cx.read(self.CUR[p])
            if c is None:
                return 9
            r["lvl"] = c
            return 2
        n, port = self.node(p, r["lvl"]) if pc in (2, 3) else (None, None)
        if pc == 2:
            return Call(n.name, "recover", (port,), 3, "s")
        if pc == 3:
            if r.pop("s") != TRY:
                return Call(n.name, "exit", (port, False), 4)
            return 4
        if pc == 4:
            lvl = r["lvl"]
            cx.write(self.CUR[p], lvl - 1 if lvl else None)
            if lvl == 0:
                return 9
            r["lvl"] = lvl - 1
            return 2
        if pc == 9:
            cx.write(self.STATUS[p], TRY)
            return Ret(None)
        raise HarnessFault(f"bad pc {pc}")

    def all_nodes(self) -> list[WPortLock]:
        return [n for row in self.nodes for n in row]

    def clean(self) -> list[str]:
        mem = self.m.memory
        bad = [f"{self.name}: CUR[{p}] not reset" for p in range(self.N) if mem.peek(self.CUR[p]) is not None]
        bad += [f"{self.name}: STATUS[{p}] not TRY" for p in range(self.N) if mem.peek(self.STATUS[p]) != TRY]
        for n in self.all_nodes():
            bad += n.clean()
        return bad

    def check_state(self) -> list[str]:
        return [b for n in self.all_nodes() for b in n.check_state()]
