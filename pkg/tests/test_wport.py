import pytest
from hypothesis import given, strategies as st

from rmesim.checker import ExploreConfig, LockConfig, RandomConfig, build, explore, random_run
from rmesim.kernel import CS, IDLE, ConfigError, Machine
from rmesim.wport import WPortLock, next_port


def brute_next(owner, active, W):
    order = [(owner + d) % W for d in range(1, W)] + [owner]
    hits = [i for i in order if active & (1 << i)]
    return hits[0] if hits else None


def test_next_port_all_inputs_w4():
    for owner in range(4):
        for active in range(16):
            assert next_port(owner, active, 4) == brute_next(owner, active, 4)


@given(st.integers(2, 16).flatmap(lambda W: st.tuples(st.just(W), st.integers(0, W - 1),
                                                      st.integers(0, 2 ** W - 1))))
def test_next_port_matches_scan(args):
    W, owner, active = args
    assert next_port(owner, active, W) == brute_next(owner, active, W)


def test_bounded_bypass_of_round_robin():
    # a fixed waiter is chosen within W hand-offs even if everyone else stays active
    W = 6
    for waiter in range(W):
        owner, hops = (waiter + 1) % W, 0
        while owner != waiter:
            owner = next_port(owner, 2 ** W - 1, W)
            hops += 1
        assert hops <= W


def test_d_larger_than_w_is_rejected():
    m = Machine(2, W=4)
    with pytest.raises(ConfigError):
        WPortLock(m, "wp", 5)
    with pytest.raises(ConfigError):
        LockConfig("wport", 2, 9, W=8).validate()


def test_solo_passage_leaves_lock_clean():
    m = build(LockConfig("wport", 1, 2), arrivals=3)
    while not m.finished():
        m.step(0)
    assert m.top.clean() == []
    assert m.top.lock_status().taken == 0


def test_handoff_between_two_processes():
    m = build(LockConfig("wport", 2, 2), arrivals=1)
    while m.procs[0].phase != CS:
        m.step(0)
    for _ in range(40):
        m.step(1)
    assert m.procs[1].phase != CS
    while m.procs[0].phase != IDLE:
        m.step(0)
    for _ in range(60):
        if m.procs[1].phase == CS:
            break
        m.step(1)
    assert m.procs[1].phase == CS


@pytest.mark.parametrize("alloc", ["reclaiming", "oracle"])
def test_exhaustive_crash_free_two_ports(alloc):
    rep = explore(ExploreConfig(lock=LockConfig("wport", 2, 2, allocator=alloc), superpassages=1))
    assert rep.ok and rep.exhaustive


def test_exhaustive_one_crash_one_superpassage():
    rep = explore(ExploreConfig(lock=LockConfig("wport", 2, 2), crashes=1, superpassages=1))
    assert rep.ok and rep.exhaustive, rep.violations


@pytest.mark.parametrize("D", [2, 3, 4])
def test_random_runs_with_faults(D):
    rep, _ = random_run(RandomConfig(lock=LockConfig("wport", D, D), steps=30_000, seed=D,
                                     p_crash=0.01, p_abort=0.01))
    assert rep.ok, rep.violations
    assert rep.metrics.superpassages > 50


class NoSpin(WPortLock):
    """Planted bug: Try returns as soon as the port is announced."""

    def try_(self, cx, pc, args, r):
        if pc == 6:
            return 7
        return super().try_(cx, pc, args, r)


def test_planted_bug_is_caught_by_exploration():
    from rmesim import checker

    def bad_build(cfg, arrivals=1, record=False):
        m = Machine(cfg.N, cfg.W, arrivals, record)
        m.set_top(NoSpin(m, "wp", cfg.ports()))
        return m

    orig = checker.build
    checker.build = bad_build
    try:
        rep = explore(ExploreConfig(lock=LockConfig("wport", 2, 2), superpassages=1))
    finally:
        checker.build = orig
    assert not rep.verdicts["mutual_exclusion"]
    assert rep.counterexample
