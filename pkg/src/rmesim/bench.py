"""RMR sweeps behind the complexity bounds and the ``bench`` command.

Every sweep is a deterministic function of its arguments and seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .checker import LockConfig, Metrics, Monitor, RandomConfig, build, fair_completion, random_run
from .kernel import IDLE, TRY


@dataclass
class Row:
    sweep: str
    lock: str
    N: int
    D: int
    B: int
    K: int | None
    F: int | None
    count: int
    max_cc: int
    max_dsm: int
    mean_cc: float
    mean_dsm: float


COLUMNS = list(Row.__dataclass_fields__)


def _mean(total: int, n: int) -> float:
    return round(total / n, 3) if n else 0.0


def passage_sweep(lock: LockConfig, steps: int, seed: int, crashes: bool = True) -> Metrics:
    """Crash-free passage RMRs from one random run (crashes and aborts elsewhere in the run)."""
    p = 0.002 if crashes else 0.0
    rep, _ = random_run(RandomConfig(lock=lock, steps=steps, seed=seed, p_crash=p, p_abort=p))
    if not rep.ok:
        raise AssertionError(f"property violation in sweep run: {rep.violations}")
    return rep.metrics


def passage_row(lock: LockConfig, steps: int, seed: int) -> Row:
    met = passage_sweep(lock, steps, seed)
    return Row("passage", lock.lock, lock.N, lock.ports(), lock.B, None, None, met.clean_passages,
               met.max_passage_cc, met.max_passage_dsm,
               _mean(met.sum_passage_cc, met.clean_passages), _mean(met.sum_passage_dsm, met.clean_passages))


def crash_sweep(lock: LockConfig, F: int, runs: int, seed: int) -> tuple[int, int, int]:
    """Largest super-passage RMRs of a process crashed exactly ``F`` times.

    Each run starts one super-passage per process under a random schedule;
    process 0 is crashed at ``F`` random points of its super-passage.
    Returns (super-passages with F crashes, max cc, max dsm).
    """
    rng = random.Random(seed)
    count = cc = dsm = 0
    for _ in range(runs):
        m = build(lock, arrivals=1)
        mon = Monitor(m)
        left = F
        while True:
            live = [p.pid for p in m.procs if p.phase != IDLE or p.arrivals_left > 0]
            if not live:
                break
            t = m.procs[0]
            if left and t.phase != IDLE and rng.random() < 0.08:
                evs = m.crash(0)
                left -= 1
            else:
                pid = rng.choice(live)
                evs = m.step(pid)
            vs = mon.after(evs)
            if vs:
                raise AssertionError(f"property violation in crash sweep: {vs[0]}")
        for sp in m.ledger.superpassages:
            if sp.pid == 0 and sp.crashes == F:
                count += 1
                cc, dsm = max(cc, sp.cc), max(dsm, sp.dsm)
    return count, cc, dsm


def crash_rows(lock: LockConfig, Fs, runs: int, seed: int) -> list[Row]:
    rows = []
    for F in Fs:
        n, cc, dsm = crash_sweep(lock, F, runs, seed + F)
        rows.append(Row("superpassage", lock.lock, lock.N, lock.ports(), lock.B, None, F, n, cc, dsm, 0.0, 0.0))
    return rows


def contention_sweep(lock: LockConfig, K: int, steps: int, seed: int) -> Metrics:
    """Crash-free passages while at most ``K`` processes are in super-passages at once."""
    rep, _ = random_run(RandomConfig(lock=lock, steps=steps, seed=seed, p_crash=0.0, p_abort=0.002,
                                     contention=K))
    if not rep.ok:
        raise AssertionError(f"property violation in contention sweep: {rep.violations}")
    return rep.metrics


def adaptivity_rows(lock: LockConfig, Ks, steps: int, seed: int) -> list[Row]:
    rows = []
    for K in Ks:
        met = contention_sweep(lock, K, steps, seed + K)
        cc = max((v[0] for k, v in met.passage_by_k.items() if k <= K), default=0)
        dsm = max((v[1] for k, v in met.passage_by_k.items() if k <= K), default=0)
        rows.append(Row("adaptivity", lock.lock, lock.N, lock.ports(), lock.B, K, None, met.clean_passages,
                        cc, dsm, _mean(met.sum_passage_cc, met.clean_passages),
                        _mean(met.sum_passage_dsm, met.clean_passages)))
    return rows


def liveness_steps(lock: LockConfig, runs: int, seed: int, prefix: int = 400) -> int:
    """Largest number of fair round-robin steps needed to finish every in-flight
    super-passage, from states reached by random faulty prefixes."""
    rng = random.Random(seed)
    worst = 0
    for _ in range(runs):
        m = build(lock, arrivals=2)
        for _ in range(rng.randrange(prefix)):
            live = [p.pid for p in m.procs if p.phase != IDLE or p.arrivals_left > 0]
            if not live:
                break
            pid = rng.choice(live)
            p = m.procs[pid]
            x = rng.random()
            if p.phase != IDLE and x < 0.02:
                m.crash(pid)
            elif p.phase == TRY and not p.aborted and x < 0.04:
                m.signal_abort(pid)
            else:
                m.step(pid)
        ok, used = fair_completion(m, None)
        if not ok:
            raise AssertionError("fair completion did not finish")
        worst = max(worst, used)
    return worst


__all__ = ["Row", "COLUMNS", "passage_row", "crash_rows", "adaptivity_rows", "crash_sweep",
           "contention_sweep", "passage_sweep", "liveness_steps"]
