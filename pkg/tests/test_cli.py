import csv
import json

import pytest

from rmesim.cli import main


@pytest.fixture(autouse=True)
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("RMESIM_OUT", str(tmp_path / "out"))
    return tmp_path / "out"


def _cfg(tmp_path, **kw):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(kw))
    return str(p)


def test_check_small_exhaustive_passes(tmp_path, outdir):
    code = main(["check", _cfg(tmp_path, lock="wport", N=2, D=2, superpassages=1)])
    assert code == 0
    rep = json.loads((outdir / "report.json").read_text())
    assert rep["ok"] and rep["exhaustive"]


def test_flags_override_file(tmp_path, outdir):
    code = main(["check", _cfg(tmp_path, lock="wport", N=2, D=9), "--D", "2", "--superpassages", "1"])
    assert code == 0


def test_d_above_w_is_a_config_error(tmp_path):
    assert main(["check", _cfg(tmp_path, lock="wport", N=2, D=9, W=8)]) == 2


@pytest.mark.parametrize("bad", ['{"lock": "spin"}', '{"N": 0}', '{"colour": 1}', "not json"])
def test_invalid_config_files_exit_2(tmp_path, bad):
    p = tmp_path / "bad.json"
    p.write_text(bad)
    assert main(["check", str(p)]) == 2


def test_unknown_flag_exits_2():
    assert main(["check", "--bogus"]) == 2


def test_faulty_starvation_fails_with_trace_and_replays(tmp_path, outdir, capsys):
    code = main(["check", _cfg(tmp_path, lock="faulty-wport", N=4, D=4, scheduler="starvation", rounds=100)])
    assert code == 1
    out = capsys.readouterr().out
    assert "counterexample trace" in out
    trace = outdir / "counterexample.trace"
    assert trace.exists()
    assert main(["replay", str(trace)]) == 1


def test_correct_lock_under_starvation_script_passes(tmp_path, outdir):
    code = main(["check", _cfg(tmp_path, lock="wport", N=4, D=4, scheduler="starvation", rounds=100)])
    assert code == 0
    assert main(["replay", str(outdir / "counterexample.trace")]) == 0


def test_random_check_and_replay_of_pass_trace(tmp_path, outdir):
    code = main(["check", _cfg(tmp_path, lock="tree", N=4, D=2, scheduler="random", steps=2000,
                               superpassages=None, crashes=None, aborts=None)])
    assert code == 0


def test_replay_of_truncated_or_missing_trace_exits_2(tmp_path, outdir):
    main(["check", _cfg(tmp_path, lock="faulty-wport", N=4, D=4, scheduler="starvation", rounds=20)])
    text = (outdir / "counterexample.trace").read_text()
    cut = tmp_path / "cut.trace"
    cut.write_text("\n".join(text.splitlines()[:-5]))
    assert main(["replay", str(cut)]) == 2
    assert main(["replay", str(tmp_path / "none.trace")]) == 2


def test_replay_render(tmp_path, outdir, capsys):
    main(["check", _cfg(tmp_path, lock="wport", N=4, D=4, scheduler="starvation", rounds=5)])
    capsys.readouterr()
    assert main(["replay", str(outdir / "counterexample.trace"), "--render"]) == 0
    out = capsys.readouterr().out
    assert "MEMOP" in out and "SECTION_ENTER" in out


def test_bench_csv_is_deterministic(tmp_path, outdir):
    cfg = _cfg(tmp_path, lock="wport", N=2, D=2, steps=3000, runs=5, Fs=[0, 1], Ks=[1, 2])
    assert main(["bench", cfg]) == 0
    first = (outdir / "bench.csv").read_text()
    assert main(["bench", cfg]) == 0
    assert (outdir / "bench.csv").read_text() == first
    rows = list(csv.DictReader(first.splitlines()))
    assert {r["sweep"] for r in rows} == {"passage", "superpassage", "adaptivity"}


def test_bench_single_model_drops_other_columns(tmp_path, outdir):
    cfg = _cfg(tmp_path, lock="wport", N=2, D=2, steps=2000, sweep=["passage"], rmr_model="cc")
    assert main(["bench", cfg]) == 0
    header = (outdir / "bench.csv").read_text().splitlines()[0]
    assert "max_cc" in header and "dsm" not in header


def test_demo_starvation_runs(capsys):
    assert main(["demo-starvation", "--rounds", "30", "--show", "3"]) == 0
    assert "never entered" in capsys.readouterr().out
