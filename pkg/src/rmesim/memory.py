"""Simulated persistent shared memory with RMR accounting.

Every word survives crash steps. Reads, writes, CAS and FAA are charged under
both cost models at once:

* CC: writes, CAS and FAA always cost one RMR; a read costs one RMR unless the
  reader still holds a valid cached copy of the word.
* DSM: an access costs one RMR iff the word is homed at another process.

The cache is kept per address as a bitmask of the pids holding a valid copy,
which keeps snapshots cheap for the model checker.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable

GLOBAL = -1
DEFAULT_WIDTH_FACTOR = 4

READ, WRITE, CAS, FAA = "READ", "WRITE", "CAS", "FAA"


class HarnessFault(Exception):
    """Simulation bug: bad address, width overflow, protocol misuse."""


@dataclass(frozen=True)
class RmrCharge:
    op_kind: str
    pid: int
    addr: int
    cost_cc: int
    cost_dsm: int


def encoded_width(value: Any) -> int:
    """Number of bits needed to encode ``value`` in a word.

    Tuples are packed field by field; ``None`` and booleans take one bit;
    short status strings are treated as members of a small enum (2 bits).
    """
    if value is None or isinstance(value, bool):
        return 1
    if isinstance(value, int):
        return max(1, value.bit_length()) + (1 if value < 0 else 0)
    if isinstance(value, str):
        return 2
    if isinstance(value, tuple):
        return sum(encoded_width(v) for v in value)
    raise HarnessFault(f"unencodable value {value!r}")


class Memory:
    """Flat array of persistent words.

    ``W`` is the word size in bits; each word may hold up to
    ``width_factor * W`` bits unless a narrower width is given at allocation.
    """

    def __init__(self, n_procs: int, W: int = 8, width_factor: int = DEFAULT_WIDTH_FACTOR):
        if n_procs < 1:
            raise ValueError("need at least one process")
        self.n_procs = n_procs
        self.W = W
        self.width_factor = width_factor
        self.values: list[Any] = []
        self.homes: list[int] = []
        self.widths: list[int] = []
        self.names: list[str] = []
        self.private: list[bool] = []
        # holders[a]: bitmask of pids with a valid cached copy of word a
        self.holders: list[int] = []
        self.charges: list[RmrCharge] = []
        self.keep_charges = False

    # -- allocation ---------------------------------------------------------

    def alloc(self, name: str, init: Any = None, home: int = GLOBAL,
              width: int | None = None, private: bool = False) -> int:
        w = self.width_factor * self.W if width is None else width
        if encoded_width(init) > w:
            raise HarnessFault(f"{name}: initial value {init!r} exceeds {w} bits")
        self.values.append(init)
        self.homes.append(home)
        self.widths.append(w)
        self.names.append(name)
        self.private.append(private)
        self.holders.append(0)
        return len(self.values) - 1

    def alloc_array(self, name: str, n: int, init: Any = None, home: int = GLOBAL,
                    width: int | None = None, private: bool = False) -> list[int]:
        return [self.alloc(f"{name}[{i}]", init, home, width, private) for i in range(n)]

    def rehome(self, addr: int, pid: int) -> None:
        self._check(addr)
        self.homes[addr] = pid

    def name(self, addr: int) -> str:
        return self.names[addr]

    def __len__(self) -> int:
        return len(self.values)

    # -- operations ---------------------------------------------------------

    def _check(self, addr: int) -> None:
        if not isinstance(addr, int) or addr < 0 or addr >= len(self.values):
            raise HarnessFault(f"unallocated address {addr!r}")

    def _fits(self, addr: int, v: Any) -> None:
        if encoded_width(v) > self.widths[addr]:
            raise HarnessFault(
                f"{self.names[addr]}: value {v!r} exceeds {self.widths[addr]} bits")

    def _charge(self, kind: str, pid: int, addr: int, cc: int) -> RmrCharge:
        ch = RmrCharge(kind, pid, addr, cc, 0 if self.homes[addr] == pid else 1)
        if self.keep_charges:
            self.charges.append(ch)
        return ch

    def _mutated(self, addr: int, pid: int) -> None:
        self.holders[addr] = 1 << pid

    def read(self, addr: int, pid: int) -> tuple[Any, RmrCharge]:
        self._check(addr)
        bit = 1 << pid
        cc = 0 if self.holders[addr] & bit else 1
        self.holders[addr] |= bit
        return self.values[addr], self._charge(READ, pid, addr, cc)

    def write(self, addr: int, pid: int, v: Any) -> RmrCharge:
        self._check(addr)
        self._fits(addr, v)
        self.values[addr] = v
        self._mutated(addr, pid)
        return self._charge(WRITE, pid, addr, 1)

    def cas(self, addr: int, pid: int, old: Any, new: Any) -> tuple[bool, RmrCharge]:
        self._check(addr)
        self._fits(addr, new)
        ok = self.values[addr] == old
        if ok:
            self.values[addr] = new
        # standard CC model: a failed CAS still invalidates other copies
        self._mutated(addr, pid)
        return ok, self._charge(CAS, pid, addr, 1)

    def faa(self, addr: int, pid: int, delta: int) -> tuple[int, RmrCharge]:
        self._check(addr)
        old = self.values[addr]
        new = old + delta
        if new < 0 or encoded_width(new) > self.widths[addr]:
            raise HarnessFault(f"{self.names[addr]}: FAA {old}{delta:+d} overflows")
        self.values[addr] = new
        self._mutated(addr, pid)
        return old, self._charge(FAA, pid, addr, 1)

    def peek(self, addr: int) -> Any:
        """Harness-side read: no charge, no cache effect."""
        self._check(addr)
        return self.values[addr]

    # -- snapshots ----------------------------------------------------------

    def snapshot(self) -> tuple:
        return (tuple(self.values), tuple(self.holders), tuple(self.homes))

    def restore(self, snap: tuple) -> None:
        values, holders, homes = snap
        n = len(values)
        if n > len(self.values):
            raise HarnessFault("cannot restore a snapshot with unknown words")
        del self.values[n:], self.homes[n:], self.widths[n:], self.names[n:]
        del self.private[n:], self.holders[n:]
        self.values[:] = values
        self.holders[:] = holders
        self.homes[:] = homes

    def digest(self, include_cache: bool = True) -> Hashable:
        if include_cache:
            return hash((tuple(self.values), tuple(self.holders), tuple(self.homes)))
        return hash((tuple(self.values), tuple(self.homes)))
