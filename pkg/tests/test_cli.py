import os
import subprocess
import sys
from pathlib import Path

import pytest

from meal import pnm
from meal.cli import main, thread_setting


def _cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


MINIMAL = """
strategy = random
seeds = 0, 1
data.images = 6
data.height = 16
data.width = 16
data.classes = 3
al.query_size = 4
al.steps = 2
al.init_patches = 8
train.epochs = 2
train.learning_rate = 0.1
"""


def test_synth_counts_and_bytes(tmp_path, capsys):
    assert main(["synth", "--seed", "7", "--images", "4", "--out", str(tmp_path / "d")]) == 0
    d = tmp_path / "d"
    assert len(list((d / "images").glob("*.ppm"))) == 4
    assert len(list((d / "labels").glob("*.pgm"))) == 4
    assert len(list(d.glob("manifest*"))) == 1
    assert "4 images" in capsys.readouterr().out
    first = {p.name: p.read_bytes() for p in d.rglob("*") if p.is_file()}
    assert main(["synth", "--seed", "7", "--images", "4", "--out", str(tmp_path / "e")]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "e").rglob("*") if p.is_file()}
    assert first == second
    assert pnm.read(d / "labels" / "img_00000.pgm").shape == (48, 64)


def test_synth_rejects_single_class(tmp_path, capsys):
    assert main(["synth", "--classes", "1", "--out", str(tmp_path / "d")]) == 1
    assert "error" in capsys.readouterr().err


def test_synth_io_failure_is_runtime_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--images", "1", "--out", str(blocker / "sub")]) == 2


def test_run_writes_csv_and_progress(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("MEAL_THREADS", raising=False)
    out = tmp_path / "r.csv"
    assert main(["run", "--config", _cfg(tmp_path, MINIMAL), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "run_id,strategy,seed,step,labeled_patches,miou,wall_ms"
    assert len(lines) == 1 + 2 * 3
    err = capsys.readouterr().err
    assert err.count("step") == 6


def test_run_config_errors_exit_1(tmp_path, capsys):
    bad = _cfg(tmp_path, "strategy = meal\nal.informative_size = 16\nal.query_size = 32\n")
    assert main(["run", "--config", bad, "--out", str(tmp_path / "x.csv")]) == 1
    assert "al.informative_size" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg"), "--out", "x.csv"]) == 1
    assert not (tmp_path / "x.csv").exists()


def test_unknown_flag_exits_1():
    with pytest.raises(SystemExit) as info:
        main(["run", "--bogus"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1


def test_report(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("MEAL_THREADS", raising=False)
    csv_path = tmp_path / "r.csv"
    main(["run", "--config", _cfg(tmp_path, MINIMAL.replace("random", "random, entropy")), "--out", str(csv_path)])
    before = csv_path.read_bytes()
    out = tmp_path / "summary.txt"
    assert main(["report", "--in", str(csv_path), "--out", str(out)]) == 0
    assert csv_path.read_bytes() == before
    table = out.read_text()
    assert table.count("strategy:") == 2
    curves = (tmp_path / "summary.curves.csv").read_text().splitlines()
    assert curves[0].startswith("strategy,step")
    assert len(curves) == 1 + 2 * 3


def test_report_single_run_has_zero_std(tmp_path):
    csv_path = tmp_path / "r.csv"
    csv_path.write_text("run_id,strategy,seed,step,labeled_patches,miou,wall_ms\nr,meal,0,0,32,0.5,0\n")
    main(["report", "--in", str(csv_path), "--out", str(tmp_path / "s.txt")])
    row = (tmp_path / "s.curves.csv").read_text().splitlines()[1]
    assert row.endswith(",0.000000")


def test_report_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("run_id,strategy,seed,step,labeled_patches,miou,wall_ms\n")
    assert main(["report", "--in", str(empty), "--out", str(tmp_path / "s.txt")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n")
    assert main(["report", "--in", str(bad), "--out", str(tmp_path / "s.txt")]) == 2


def test_thread_setting():
    assert thread_setting({}) == 0
    assert thread_setting({"MEAL_THREADS": "0"}) == 0
    assert thread_setting({"MEAL_THREADS": "3"}) == 3
    from meal.cli import UsageError

    with pytest.raises(UsageError):
        thread_setting({"MEAL_THREADS": "-1"})


def test_module_entry_point(tmp_path):
    env = dict(os.environ, MEAL_THREADS="0")
    proc = subprocess.run(
        [sys.executable, "-m", "meal", "synth", "--images", "1", "--out", str(tmp_path / "d")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
