import random

import pytest
from hypothesis import given, settings, strategies as st

from rmesim.memory import CAS, FAA, READ, WRITE, HarnessFault, Memory, encoded_width


class RefCache:
    """Independent reference for the charging rules: per-process sets of cached words."""

    def __init__(self, n, homes):
        self.cached = [set() for _ in range(n)]
        self.homes = homes

    def charge(self, op, pid, addr):
        dsm = 0 if self.homes[addr] == pid else 1
        if op == READ:
            cc = 0 if addr in self.cached[pid] else 1
            self.cached[pid].add(addr)
            return cc, dsm
        for c in self.cached:
            c.discard(addr)
        self.cached[pid].add(addr)
        return 1, dsm


def _apply(mem, op, pid, addr, arg):
    if op == READ:
        return mem.read(addr, pid)[1]
    if op == WRITE:
        return mem.write(addr, pid, arg)
    if op == CAS:
        return mem.cas(addr, pid, mem.peek(addr) if arg % 2 else -1, arg)[1]
    return mem.faa(addr, pid, 1)[1]


def test_charges_match_reference_on_random_programs():
    rng = random.Random(5)
    for _ in range(50):
        n = rng.randint(1, 4)
        mem = Memory(n, W=16)
        homes = [rng.choice([-1] + list(range(n))) for _ in range(6)]
        addrs = [mem.alloc(f"w{i}", 0, home=h) for i, h in enumerate(homes)]
        ref = RefCache(n, homes)
        for _ in range(200):
            op = rng.choice([READ, WRITE, CAS, FAA])
            pid, a = rng.randrange(n), rng.choice(addrs)
            ch = _apply(mem, op, pid, a, rng.randrange(100))
            assert (ch.cost_cc, ch.cost_dsm) == ref.charge(op, pid, a)


def test_spin_on_cached_word_is_free_until_written():
    mem = Memory(2)
    a = mem.alloc("flag", False, home=0)
    assert mem.read(a, 1)[1].cost_cc == 1
    for _ in range(5):
        assert mem.read(a, 1)[1].cost_cc == 0
    mem.write(a, 0, True)
    assert mem.read(a, 1)[1].cost_cc == 1


def test_failed_cas_still_invalidates():
    mem = Memory(2)
    a = mem.alloc("x", 0)
    mem.read(a, 1)
    ok, ch = mem.cas(a, 0, 5, 6)
    assert not ok and ch.cost_cc == 1
    assert mem.read(a, 1)[1].cost_cc == 1


def test_dsm_local_vs_remote_and_rehome():
    mem = Memory(3)
    a = mem.alloc("x", 0, home=2)
    assert mem.read(a, 2)[1].cost_dsm == 0
    assert mem.read(a, 0)[1].cost_dsm == 1
    mem.rehome(a, 0)
    assert mem.write(a, 0, 1).cost_dsm == 0


def test_width_overflow_is_a_harness_fault():
    mem = Memory(1, W=4, width_factor=1)
    a = mem.alloc("x", 0)
    mem.write(a, 0, 15)
    with pytest.raises(HarnessFault):
        mem.write(a, 0, 16)
    with pytest.raises(HarnessFault):
        mem.faa(a, 0, 1)


def test_unallocated_address_is_a_harness_fault():
    mem = Memory(1)
    with pytest.raises(HarnessFault):
        mem.read(3, 0)


def test_encoded_width_of_packed_status():
    assert encoded_width((1, 5, None)) == 1 + 3 + 1
    assert encoded_width(None) == 1 and encoded_width(True) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([READ, WRITE, CAS, FAA]), st.integers(0, 2), st.integers(0, 3),
                          st.integers(0, 50)), max_size=40))
def test_snapshot_restore_roundtrip(ops):
    mem = Memory(3, W=16)
    addrs = [mem.alloc(f"w{i}", 0, home=i - 1) for i in range(4)]
    snap, d = mem.snapshot(), mem.digest()
    for op, pid, ai, arg in ops:
        _apply(mem, op, pid, addrs[ai], arg)
    mem.restore(snap)
    assert mem.digest() == d
    assert mem.snapshot() == snap


def test_digest_without_cache_ignores_cached_copies():
    mem = Memory(2)
    a = mem.alloc("x", 0)
    d = mem.digest(include_cache=False)
    full = mem.digest()
    mem.read(a, 1)
    assert mem.digest(include_cache=False) == d
    assert mem.digest() != full
