import pytest

from rmesim.adaptive import FAST, SLOW
from rmesim.checker import ExploreConfig, LockConfig, RandomConfig, build, explore, random_run
from rmesim.kernel import CS, IDLE


def test_solo_process_takes_fast_port_zero():
    m = build(LockConfig("adaptive", 4, 2, B=2), arrivals=1)
    a = m.top
    while m.procs[3].phase != CS:
        m.step(3)
    assert m.memory.peek(a.K_OWNERS[0]) == 3
    assert m.memory.peek(a.PATH[3]) == FAST
    while m.procs[3].phase != IDLE:
        m.step(3)
    assert a.clean() == []


def test_processes_beyond_b_take_the_slow_path():
    m = build(LockConfig("adaptive", 3, 2, B=1), arrivals=1)
    a = m.top
    while m.procs[0].phase != CS:
        m.step(0)
    for _ in range(200):
        if m.memory.peek(a.PATH[1]) is not None:
            break
        m.step(1)
    assert m.memory.peek(a.PATH[1]) == SLOW


def test_exhaustive_solo_with_crashes_and_abort():
    rep = explore(ExploreConfig(lock=LockConfig("adaptive", 1, 2, B=1), crashes=2, aborts=1, superpassages=2))
    assert rep.ok and rep.exhaustive, rep.violations


def test_exhaustive_two_processes_crash_free():
    rep = explore(ExploreConfig(lock=LockConfig("adaptive", 2, 2, B=1, allocator="oracle"), superpassages=1))
    assert rep.ok and rep.exhaustive, rep.violations


@pytest.mark.parametrize("B", [1, 2, 4])
def test_random_runs_with_faults(B):
    rep, _ = random_run(RandomConfig(lock=LockConfig("adaptive", 6, 2, B=B), steps=40_000, seed=B,
                                     p_crash=0.01, p_abort=0.01))
    assert rep.ok, rep.violations
    assert rep.verdicts["point_contention"]
