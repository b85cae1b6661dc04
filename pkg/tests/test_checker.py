import pytest

from rmesim import checker
from rmesim.checker import (Caps, ExploreConfig, LockConfig, RandomConfig, build, check_properties,
                            enabled, explore, fair_completion, random_run, run_decisions)
from rmesim.kernel import CS, IDLE, ConfigError, Machine, TRY
from rmesim.wport import WPortLock


@pytest.mark.parametrize("kw", [dict(lock="nope"), dict(lock="wport", N=3, D=2), dict(lock="wport", N=2, D=9),
                                dict(lock="tree", N=4, D=1), dict(lock="adaptive", N=4, B=0),
                                dict(allocator="magic")])
def test_invalid_configs_raise(kw):
    with pytest.raises(ConfigError):
        LockConfig(**kw).validate()


def _states(por, dedup, lock, crashes=0, aborts=0, sp=1):
    rep = explore(ExploreConfig(lock=lock, crashes=crashes, aborts=aborts, superpassages=sp,
                                por=por, dedup=dedup, stop_on_violation=False))
    return rep


def test_dedup_does_not_change_verdicts_or_step_maxima():
    lock = LockConfig("wport", 1, 2)
    a = _states(False, False, lock, crashes=1, aborts=1)
    b = _states(True, True, lock, crashes=1, aborts=1)
    assert a.ok and b.ok and a.exhaustive and b.exhaustive
    assert a.states > b.states
    for f in ("max_abort_steps", "max_exit_steps", "max_reentry_steps", "max_passage_cc"):
        assert getattr(a.metrics, f) == getattr(b.metrics, f), f


def test_reductions_preserve_quiescent_and_cs_states(monkeypatch):
    from rmesim import kernel
    orig = kernel.Machine.digest

    def run(por):
        seen = set()

        def dg(self, include_cache=False, counters=True):
            if all(p.phase in (IDLE, CS) for p in self.procs):
                seen.add((self.memory.digest(False), tuple(sorted(self.nv.items(), key=repr)),
                          tuple((p.phase, p.arrivals_left, p.aborted) for p in self.procs)))
            return orig(self, include_cache, counters)

        monkeypatch.setattr(kernel.Machine, "digest", dg)
        rep = _states(por, True, LockConfig("wport", 2, 2, allocator="oracle"), crashes=1)
        monkeypatch.setattr(kernel.Machine, "digest", orig)
        return rep, seen

    ra, sa = run(True)
    rb, sb = run(False)
    assert ra.ok and rb.ok and ra.exhaustive and rb.exhaustive
    assert sa == sb
    assert ra.metrics.max_exit_steps == rb.metrics.max_exit_steps


def test_private_op_is_not_interleaved():
    m = build(LockConfig("wport", 2, 2), arrivals=1)
    m.step(1)
    m.step(0)
    while not m.memory.private[m.procs[0].poised[1]]:
        m.step(0)
    acts = enabled(m, 0, 0, por=True, last=0)
    assert acts == [("step", 0)]
    assert ("step", 1) in enabled(m, 0, 0, por=False)


class LyingRecover(WPortLock):
    """Planted bug: Recover always reports TRY."""

    def recover(self, cx, pc, args, r):
        from rmesim.kernel import Ret
        cx.read(self.STATUS[args[0]])
        return Ret(TRY)


def test_planted_ill_behaved_recover_is_caught(monkeypatch):
    def bad_build(cfg, arrivals=1, record=False):
        m = Machine(cfg.N, cfg.W, arrivals, record)
        m.set_top(LyingRecover(m, "wp", cfg.ports()))
        return m

    monkeypatch.setattr(checker, "build", bad_build)
    rep = explore(ExploreConfig(lock=LockConfig("wport", 1, 2), crashes=1))
    assert not rep.ok
    assert not rep.verdicts["well_behaved"] or not rep.verdicts["well_formed"]
    monkeypatch.undo()
    again, _ = run_decisions(LockConfig("wport", 1, 2), rep.counterexample, 1)
    assert again.ok      # the correct lock passes the same schedule


def test_counterexample_replays_to_same_violation(monkeypatch):
    def bad_build(cfg, arrivals=1, record=False):
        m = Machine(cfg.N, cfg.W, arrivals, record)
        m.set_top(LyingRecover(m, "wp", cfg.ports()))
        return m

    monkeypatch.setattr(checker, "build", bad_build)
    rep = explore(ExploreConfig(lock=LockConfig("wport", 1, 2), crashes=1))
    again, _ = run_decisions(LockConfig("wport", 1, 2), rep.counterexample, 1)
    assert {k for k, v in again.verdicts.items() if not v} == {k for k, v in rep.verdicts.items() if not v}


def test_caps_are_enforced():
    rep = explore(ExploreConfig(lock=LockConfig("wport", 1, 2), crashes=1, aborts=1,
                                caps=Caps(abort_steps=1, passage_rmr=3)))
    assert not rep.ok
    assert not rep.verdicts["bounded_abort"] or not rep.verdicts["rmr_caps"]


def test_random_trace_rechecks_consistently():
    rc = RandomConfig(lock=LockConfig("tree", 4, 2), steps=3000, seed=3, p_crash=0.01, p_abort=0.01,
                      superpassages=3, record=True)
    rep, trace = random_run(rc)
    assert rep.ok
    verdicts = check_properties(rc.lock, trace, 3)
    assert all(verdicts.values()), verdicts


def test_random_runs_are_deterministic_per_seed():
    rc = RandomConfig(lock=LockConfig("wport", 3, 3), steps=5000, seed=9, record=True)
    _, t1 = random_run(rc)
    _, t2 = random_run(rc)
    assert t1 == t2


def test_fair_completion_finishes_in_flight_superpassages():
    m = build(LockConfig("wport", 3, 3), arrivals=1)
    for pid in (0, 1, 2, 0, 1, 2, 0):
        m.step(pid)
    m.crash(1)
    ok, used = fair_completion(m, None)
    assert ok and used > 0
    assert all(p.phase == IDLE for p in m.procs)


def test_report_json_roundtrip():
    import json
    rep = explore(ExploreConfig(lock=LockConfig("wport", 1, 2)))
    d = json.loads(json.dumps(rep.to_json(), default=str))
    assert d["ok"] and d["exhaustive"] and d["mode"] == "EXHAUSTIVE"


def test_step_counters_include_the_finishing_step():
    m = build(LockConfig("wport", 1, 2), arrivals=1)
    mon = checker.Monitor(m)
    while m.procs[0].phase != CS:
        mon.after(m.step(0))
    mon.after(m.crash(0))
    reentry = 0
    while m.procs[0].phase != CS:
        mon.after(m.step(0))
        reentry += 1
    exits = 0
    while m.procs[0].phase != IDLE:
        mon.after(m.step(0))
        exits += 1
    assert mon.metrics.max_reentry_steps == reentry >= 1
    assert mon.metrics.max_exit_steps == exits
