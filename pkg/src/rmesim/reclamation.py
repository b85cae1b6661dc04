"""Spin-slot allocation for the W-port lock.

Two allocators share one interface (``get_index(port)`` and
``retire(port, slot)`` step machines):

* ``OracleAllocator`` hands out a fresh word on every call and never reuses
  one.  It is the reference the reclaiming pool is compared against.
* ``SlotPool`` gives each port a fixed pool of ``2D+1`` spin slots and reuses
  them once no reader can still write to them.  Readers announce the slot they
  are about to write in ``REFERENCED[port]`` and re-validate; each retire scans
  one announcement cell, so a retired slot is held back for ``D`` retires and
  re-protected while an announcement for it is seen.

Both keep their durable progress in port-private NVRAM (``cx.persist``), so a
crashed get_index returns the same slot again and a crashed retire resumes at
the step where it stopped.
"""

from __future__ import annotations

from typing import Any

from .kernel import Lock, Ret
from .memory import HarnessFault

FALSE, TRUE = False, True


class OracleAllocator(Lock):
    """Never reuses a slot; every get_index allocates a new word."""

    reclaiming = False

    def __init__(self, machine, name: str, n_ports: int):
        super().__init__(machine, name)
        self.n_ports = n_ports
        self.procs = {"get_index": self.get_index, "retire": self.retire}

    def key(self, port: int) -> tuple:
        return (self.name, port)

    def get_index(self, cx, pc, args, r):
        (port,) = args
        st = cx.recall(self.key(port))
        if st is not None:
            return Ret(st[1])
        a = cx.alloc_word(f"{self.name}.slot{len(self.m.memory)}", FALSE, cx.pid)
        cx.persist(self.key(port), ("GOT", a))
        return Ret(a)

    def retire(self, cx, pc, args, r):
        cx.persist(self.key(args[0]), None)
        return Ret(None)

    def pool_of(self, addr: int) -> int | None:
        return None


class SlotPool(Lock):
    """Bounded per-port pools with announce-and-validate protection."""

    reclaiming = True

    def __init__(self, machine, name: str, n_ports: int, homes: list[int] | None = None):
        super().__init__(machine, name)
        D = self.D = n_ports
        size = self.size = 2 * D + 1
        mem = machine.memory
        self.REF = mem.alloc_array(f"{name}.REFERENCED", D, None)
        self.slots: list[list[int]] = []
        self.rc: list[list[int]] = []
        self.scan: list[int] = []
        self.free: list[_Ring] = []
        self.retired: list[_Ring] = []
        self.observed: list[_Ring] = []
        self.index: dict[int, tuple[int, int]] = {}
        for k in range(D):
            home = homes[k] if homes else k
            sl = mem.alloc_array(f"{name}.slot{k}", size, FALSE, home=home)
            for i, a in enumerate(sl):
                self.index[a] = (k, i)
            self.slots.append(sl)
            self.rc.append(mem.alloc_array(f"{name}.RC{k}", size, 0, home=home, private=True))
            self.scan.append(mem.alloc(f"{name}.SCAN{k}", 0, home=home, private=True))
            self.free.append(_Ring(mem, f"{name}.FREE{k}", size, home, list(range(size))))
            self.retired.append(_Ring(mem, f"{name}.RETIRED{k}", D, home))
            self.observed.append(_Ring(mem, f"{name}.OBSERVED{k}", D, home))
        self.procs = {"get_index": self.get_index, "retire": self.retire}

    def key(self, port: int) -> tuple:
        return (self.name, port)

    def pool_of(self, addr: int) -> int | None:
        e = self.index.get(addr)
        return None if e is None else e[0]

    # -- harness-side views (no RMR charge) ---------------------------------

    def free_slots(self, k: int) -> list[int]:
        return [self.slots[k][i] for i in self.free[k].peek_items(self.m.memory)]

    def refcounts(self, k: int) -> list[int]:
        return [self.m.memory.peek(a) for a in self.rc[k]]

    # -- get_index ----------------------------------------------------------

    def get_index(self, cx, pc, args, r):
        (k,) = args
        ring = self.free[k]
        if pc == 0:
            st = cx.recall(self.key(k))
            if st is not None:
                if st[0] != "GOT":
                    raise HarnessFault(f"get_index on port {k} during retire")
                r["i"], r["h"] = st[1], st[2]
                return 4
            r["h"] = cx.read(ring.head)
            return 1
        if pc == 1:
            t = cx.read(ring.tail)
            if t == r["h"]:
                raise HarnessFault(f"{self.name}: FREE empty on port {k}")
            return 2
        if pc == 2:
            i = cx.read(ring.buf[r["h"] % ring.cap])
            r["i"] = i
            cx.persist(self.key(k), ("GOT", i, r["h"]))
            return 4
        if pc == 4:
            # idempotent: redone after a crash in this window
            cx.write(ring.head, ring.bump(r["h"]))
            return 5
        if pc == 5:
            a = self.slots[k][r["i"]]
            cx.write(a, FALSE)
            self.m.memory.rehome(a, cx.pid)
            cx.note("GET_INDEX", slot=a, port=k, owner=self.name)
            return Ret(a)
        raise HarnessFault(f"bad pc {pc}")

    # -- retire -------------------------------------------------------------

    def _go(self, cx, k, r, pc):
        cx.persist(self.key(k), ("R", pc, tuple(sorted(r.items()))))
        return pc

    def retire(self, cx, pc, args, r):
        k, g = args
        D = self.D
        if pc == 0:
            st = cx.recall(self.key(k))
            if st is None:
                return Ret(None)
            if st[0] == "GOT":
                if g is not None and self.slots[k][st[1]] != g:
                    raise HarnessFault(f"retire of {g} but port {k} holds slot {st[1]}")
                r["g"] = st[1]
                return 1
            r.update(dict(st[2]))
            return st[1]
        if pc == 1:
            r["s"] = cx.read(self.scan[k])
            return self._go(cx, k, r, 2)
        if pc == 2:
            ref = cx.read(self.REF[r["s"] % D])
            e = self.index.get(ref)
            if e is not None and e[0] == k:
                r["o"] = e[1]
                return self._go(cx, k, r, 3)
            return self._go(cx, k, r, 6)
        if pc == 3:
            r["c"] = cx.read(self.rc[k][r["o"]])
            return self._go(cx, k, r, 4 if r["c"] > 0 else 6)
        if pc == 4:
            cx.write(self.rc[k][r["o"]], r["c"] + 1)
            return self._go(cx, k, r, 5)
        if pc == 5:
            return self._push(cx, k, r, self.observed[k], (r["o"], self._stamp(r)), 5, 6)
        if pc == 6:
            cx.write(self.scan[k], self._stamp(r))
            r.pop("o", None)
            r.pop("c", None)
            r["q"] = 0
            return self._go(cx, k, r, 7)
        # pc 7..: pop RETIRED (q=0) then OBSERVED (q=1)
        if pc == 7:
            if r["q"] == 2:
                return self._go(cx, k, r, 20)
            ring = self.retired[k] if r["q"] == 0 else self.observed[k]
            r["h"] = cx.read(ring.head)
            return self._go(cx, k, r, 8)
        if pc == 8:
            ring = self.retired[k] if r["q"] == 0 else self.observed[k]
            t = cx.read(ring.tail)
            return self._go(cx, k, r, 9 if t != r["h"] else 13)
        if pc == 9:
            ring = self.retired[k] if r["q"] == 0 else self.observed[k]
            slot, stamp = cx.read(ring.buf[r["h"] % ring.cap])
            if (self._stamp(r) - stamp) % (2 * D) >= D:
                r["p"] = slot
                return self._go(cx, k, r, 10)
            return self._go(cx, k, r, 13)
        if pc == 10:
            ring = self.retired[k] if r["q"] == 0 else self.observed[k]
            cx.write(ring.head, ring.bump(r["h"]))
            return self._go(cx, k, r, 11)
        if pc == 11:
            r["c"] = cx.read(self.rc[k][r["p"]])
            return self._go(cx, k, r, 12)
        if pc == 12:
            cx.write(self.rc[k][r["p"]], r["c"] - 1)
            return self._go(cx, k, r, 14 if r["c"] == 1 else 13)
        if pc == 13:
            for dead in ("h", "p", "c"):
                r.pop(dead, None)
            r["q"] += 1
            return self._go(cx, k, r, 7)
        if pc == 14:
            return self._push(cx, k, r, self.free[k], r["p"], 14, 13)
        if pc == 20:
            cx.write(self.rc[k][r["g"]], 1)
            return self._go(cx, k, r, 21)
        if pc == 21:
            return self._push(cx, k, r, self.retired[k], (r["g"], self._stamp(r)), 21, 30)
        if pc == 30:
            cx.persist(self.key(k), None)
            return Ret(None)
        raise HarnessFault(f"bad pc {pc}")

    def _stamp(self, r) -> int:
        return (r["s"] + 1) % (2 * self.D)

    def _push(self, cx, k, r, ring, item, here, after):
        """Three-step ring push driven by register ``u`` (0: read tail, 1: store, 2: bump)."""
        u = r.get("u", 0)
        if u == 0:
            r["t"] = cx.read(ring.tail)
            r["u"] = 1
            return self._go(cx, k, r, here)
        if u == 1:
            cx.write(ring.buf[r["t"] % ring.cap], item)
            r["u"] = 2
            return self._go(cx, k, r, here)
        cx.write(ring.tail, ring.bump(r["t"]))
        del r["u"], r["t"]
        return self._go(cx, k, r, after)


class _Ring:
    """Fixed-capacity FIFO in memory words; head and tail count modulo 2*cap."""

    def __init__(self, mem, name: str, cap: int, home: int, init: list | None = None):
        self.cap = cap
        init = init or []
        self.buf = [mem.alloc(f"{name}[{i}]", init[i] if i < len(init) else None,
                              home=home, private=True) for i in range(cap)]
        self.head = mem.alloc(f"{name}.head", 0, home=home, private=True)
        self.tail = mem.alloc(f"{name}.tail", len(init) % (2 * cap), home=home, private=True)

    def bump(self, x: int) -> int:
        return (x + 1) % (2 * self.cap)

    def size(self, mem) -> int:
        return (mem.peek(self.tail) - mem.peek(self.head)) % (2 * self.cap)

    def peek_items(self, mem) -> list[Any]:
        h = mem.peek(self.head)
        return [mem.peek(self.buf[(h + j) % self.cap]) for j in range(self.size(mem))]
