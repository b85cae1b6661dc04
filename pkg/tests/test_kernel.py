import json

import pytest

from rmesim.checker import LockConfig, build
from rmesim.kernel import (CRASH, CS, EXIT, IDLE, INVOKE, RECOVER, RETURN, SP_END, TRY, SchedulerError,
                           check_wellformed, decisions_of, read_trace, write_trace)


def ev(step, pid, kind, **kw):
    return {"step_no": step, "pid": pid, "kind": kind, **kw}


def call(step, pid, proc, port=0, lock="L"):
    return ev(step, pid, INVOKE, lock=lock, proc=proc, port=port, caller=None)


def ret(step, pid, proc, value, port=0, lock="L"):
    return ev(step, pid, RETURN, lock=lock, proc=proc, port=port, value=value, caller=None)


GOOD = [call(0, 0, "recover"), ret(1, 0, "recover", TRY), call(1, 0, "try"), ret(2, 0, "try", True),
        call(3, 0, "exit"), ret(4, 0, "exit", None), ev(4, 0, SP_END, aborted=False)]


def test_wellformed_accepts_plain_passage():
    assert check_wellformed(GOOD).ok


def test_try_without_recover_is_flagged():
    v = check_wellformed([call(0, 0, "try")])
    assert not v.ok and "Recover" in v.violation


def test_exit_outside_cs_is_flagged():
    v = check_wellformed([call(0, 0, "recover"), ret(1, 0, "recover", TRY), call(1, 0, "exit")])
    assert not v.ok and "outside CS" in v.violation


def test_try_after_crash_needs_recover():
    evs = [call(0, 0, "recover"), ret(1, 0, "recover", TRY), call(1, 0, "try"),
           ev(2, 0, CRASH, phase=TRY), call(3, 0, "try")]
    v = check_wellformed(evs)
    assert not v.ok and v.event["step_no"] == 3


def test_port_change_within_superpassage_is_flagged():
    evs = [call(0, 0, "recover", port=0), ret(1, 0, "recover", TRY), call(1, 0, "try", port=0),
           call(2, 0, "recover", port=1)]
    v = check_wellformed(evs)
    assert not v.ok and "port changed" in v.violation


def test_two_holders_of_one_port_are_flagged():
    evs = [call(0, 0, "recover"), ret(1, 0, "recover", TRY), call(1, 0, "try"),
           call(2, 1, "recover"), ret(3, 1, "recover", TRY), call(3, 1, "try")]
    assert not check_wellformed(evs).ok


def test_open_superpassage_at_end_is_flagged():
    evs = GOOD[:4] + [ev(5, 0, SP_END, aborted=False)]
    assert not check_wellformed(evs).ok


def _solo(lock="wport", N=2, D=2):
    m = build(LockConfig(lock, N, D), arrivals=1, record=True)
    while m.procs[0].phase != CS:
        m.step(0)
    return m


def test_solo_passage_and_crash_in_cs_recovers_to_cs():
    m = _solo()
    m.crash(0)
    assert m.procs[0].phase == RECOVER and m.procs[0].crashed_in_cs
    while m.procs[0].phase == RECOVER:
        m.step(0)
    assert m.procs[0].phase == CS
    while m.procs[0].phase != IDLE:
        m.step(0)
    assert m.quiescent() and m.top.clean() == []


def test_crash_in_exit_resumes_exit():
    m = _solo()
    m.step(0)
    assert m.procs[0].phase == EXIT
    m.step(0)
    m.crash(0)
    while m.procs[0].phase == RECOVER:
        m.step(0)
    assert m.procs[0].phase == EXIT


def test_scheduler_errors():
    m = build(LockConfig("wport", 2, 2), arrivals=1)
    with pytest.raises(SchedulerError):
        m.crash(0)
    with pytest.raises(SchedulerError):
        m.signal_abort(1)


def test_snapshot_restore_reproduces_digest():
    m = build(LockConfig("wport", 2, 2), arrivals=2)
    for pid in (0, 1, 0, 0, 1):
        m.step(pid)
    snap, d = m.snapshot(), m.digest()
    for pid in (0, 1, 1, 0):
        m.step(pid)
    m.restore(snap)
    assert m.digest() == d


def test_trace_roundtrip_and_decisions(tmp_path):
    m = _solo()
    m.crash(0)
    m.step(0)
    path = tmp_path / "t.trace"
    write_trace(path, {"x": 1}, m.trace, {"ok": True})
    cfg, events, end = read_trace(path)
    assert cfg == {"x": 1} and len(events) == len(m.trace)
    assert decisions_of(events)[-2:] == [("crash", 0), ("step", 0)]
    assert end["steps"] == len(decisions_of(m.trace))


@pytest.mark.parametrize("mangle", ["empty", "noheader", "truncated", "garbage", "count"])
def test_bad_traces_are_rejected(tmp_path, mangle):
    m = _solo()
    path = tmp_path / "t.trace"
    write_trace(path, {}, m.trace)
    lines = path.read_text().splitlines()
    if mangle == "empty":
        lines = []
    elif mangle == "noheader":
        lines = lines[1:]
    elif mangle == "truncated":
        lines = lines[:-3]
    elif mangle == "garbage":
        lines[2] = lines[2][:10]
    else:
        end = json.loads(lines[-1])
        end["steps"] += 1
        lines[-1] = json.dumps(end)
    path.write_text("\n".join(lines))
    with pytest.raises(ValueError):
        read_trace(path)
