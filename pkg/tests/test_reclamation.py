import pytest

from rmesim.checker import LockConfig, RandomConfig, build, random_run
from rmesim.kernel import CS, IDLE
from rmesim.reclamation import SlotPool


def _pool(m):
    return next(lk for lk in m.locks.values() if isinstance(lk, SlotPool))


def _run_passage(m, pid):
    while True:
        m.step(pid)
        if m.procs[pid].phase == IDLE:
            return


def test_pool_starts_full_and_stays_full_when_solo():
    m = build(LockConfig("wport", 2, 2), arrivals=20)
    pool = _pool(m)
    assert len(pool.free_slots(0)) == 2 * 2 + 1
    for _ in range(20):
        _run_passage(m, 0)
        # a retired slot is held back until D later retirements have passed
        assert len(pool.free_slots(0)) >= 2 * 2 + 1 - 2
        assert m.nv.get(pool.key(0)) is None


def test_each_passage_takes_a_fresh_slot_from_free():
    m = build(LockConfig("wport", 1, 2), arrivals=3)
    pool = _pool(m)
    seen = []
    for _ in range(3):
        while m.procs[0].phase != CS:
            m.step(0)
        seen.append(m.memory.peek(m.top.GO[0]))
        _run_passage(m, 0)
    assert len(set(seen)) == 3
    assert all(pool.pool_of(a) == 0 for a in seen)


def test_announced_slot_is_not_reused_while_referenced():
    m = build(LockConfig("wport", 2, 2), arrivals=30)
    pool = _pool(m)
    while m.procs[0].phase != CS:
        m.step(0)
    held = m.memory.peek(m.top.GO[0])
    # an announcement of port 0's slot by port 1 keeps it out of FREE across many retirements
    m.memory.write(pool.REF[1], 1, held)
    _run_passage(m, 0)
    for _ in range(12):
        _run_passage(m, 0)
        assert held not in pool.free_slots(0)
    m.memory.write(pool.REF[1], 1, None)
    for _ in range(12):
        _run_passage(m, 0)
    assert held in pool.free_slots(0)


@pytest.mark.parametrize("D", [2, 3])
def test_random_runs_keep_free_nonempty_and_slots_unreferenced(D):
    rep, _ = random_run(RandomConfig(lock=LockConfig("wport", D, D), steps=40_000, seed=11 + D,
                                     p_crash=0.02, p_abort=0.02))
    assert rep.verdicts["reclamation"], rep.violations
    assert rep.ok, rep.violations


def test_crash_at_every_point_of_a_solo_passage_recovers():
    # crash once at each own step of a solo passage, then finish fairly
    probe = build(LockConfig("wport", 1, 2), arrivals=1)
    n = 0
    while not probe.finished():
        probe.step(0)
        n += 1
    for at in range(1, n):
        m = build(LockConfig("wport", 1, 2), arrivals=1)
        for _ in range(at):
            m.step(0)
        if m.procs[0].phase == IDLE:
            continue
        m.crash(0)
        while not m.finished():
            m.step(0)
        assert m.top.clean() == [], at
