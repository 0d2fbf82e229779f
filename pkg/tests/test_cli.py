"""Command-line verbs: self checks, exit codes, metadata, tables, snapshots."""

import numpy as np
import pytest

from wavebie import cli
from wavebie.cli import EXIT_CONFIG, EXIT_NUMERICAL, main
from wavebie.td_driver import ConfigError, load_preset, preset_names, serialize_config

TEST0_COARSE = """
label = test0
scene = circle_one
radius = 0.5
kind = manufactured
wavespeeds = 1, 0.5
omega = 1
t_final = 5
t_lag = 0.5
direction = 1, 0
max_degree = 6
scheme = bdf2
n_steps = 16
quadrature = coarse
"""

CIRCLE2_COARSE = """
label = circle2
scene = circle_two
radius = 0.5
kind = plane_wave
wavespeeds = 1, 0.5, 0.25
omega = 2
t_final = 10
t_lag = 0.5
direction = 0.7071067811865476, -0.7071067811865476
max_degree = 6
scheme = bdf2
n_steps = 12
snapshot_times = 0, 1.25, 2.5, 3.75, 5, 6.25, 7.5, 8.75, 10
quadrature = coarse
n_grid = 10
"""


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    for name in ("quadrature", "bessel", "cq-scalar", "calderon"):
        assert f"{name:<12} ok" in out
    assert "all 4 checks passed" in out


def test_selftest_names_failing_check(monkeypatch, capsys):
    def boom():
        raise AssertionError("forced defect 1e0")

    monkeypatch.setattr(cli, "_CHECKS", (("boom", boom), ("fine", lambda: "ok")))
    assert main(["selftest"]) == EXIT_NUMERICAL
    out = capsys.readouterr().out
    assert "boom" in out and "FAIL" in out
    assert "failed checks: boom" in out


def test_unknown_preset_lists_names(capsys):
    assert main(["run", "--preset", "nope"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "unknown preset" in err
    for name in preset_names():
        assert name in err


def test_missing_preset_is_config_error(capsys):
    assert main(["run"]) == EXIT_CONFIG
    assert "--preset or --config" in capsys.readouterr().err


def test_frequency_preset_rejected_by_time_verbs():
    assert main(["sweep", "--preset", "freq_a", "--N", "4,8"]) == EXIT_CONFIG
    assert main(["run", "--preset", "freq_a"]) == EXIT_CONFIG


def test_time_preset_rejected_by_freq_conv():
    assert main(["freq-conv", "--preset", "test0", "--L", "4,8"]) == EXIT_CONFIG


def test_bad_step_lists(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(CIRCLE2_COARSE)
    assert main(["sweep", "--config", str(cfg), "--N", "x,y"]) == EXIT_CONFIG
    # reference must be a multiple of every coarser run
    assert main(["sweep", "--config", str(cfg), "--N", "8,12"]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        cli._int_list("")


def test_preset_tables_reproduced_verbatim_in_serialization():
    from importlib import resources

    for name in preset_names():
        emitted = serialize_config(load_preset(name)).splitlines()
        raw = (resources.files("wavebie") / "presets" / f"{name}.cfg").read_text()
        for line in raw.splitlines():
            body = line.split("#", 1)[0].strip()
            if body:
                assert body in emitted, (name, body)


def test_run_writes_meta_and_snapshots(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(CIRCLE2_COARSE)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    meta = (out / "run_meta.txt").read_text().splitlines()
    for line in CIRCLE2_COARSE.strip().splitlines():
        assert line in meta
    snaps = sorted(out.glob("circle2_snap*.txt"))
    assert len(snaps) == 9
    header = snaps[4].read_text().splitlines()[0].split()
    assert header[0] == "10" and header[1] == "10"
    assert abs(float(header[6]) - 5.0) < 0.5
    body = np.loadtxt(snaps[4], skiprows=1)
    assert body.shape == (10, 10)
    assert np.isfinite(body).any()


def test_run_scheme_and_step_overrides(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TEST0_COARSE)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--scheme", "radau2",
                 "--N", "8", "--L", "5", "--out", str(out)]) == 0
    meta = (out / "run_meta.txt").read_text()
    assert "scheme = radau2" in meta
    assert "n_steps = 8" in meta
    assert "max_degree = 5" in meta


def test_sweep_closed_form_table(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TEST0_COARSE)
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--N", "8,16",
                 "--out", str(out)]) == 0
    table = (out / "errors_test0_bdf2.csv").read_text().splitlines()
    assert table[0].startswith("N,dt,dirichlet0,neumann0,dirichlet1,neumann1")
    assert len(table) == 3  # closed-form reference keeps every row
    row8 = [float(v) for v in table[1].split(",")]
    row16 = [float(v) for v in table[2].split(",")]
    assert row8[0] == 8 and row16[0] == 16
    # interior trace errors shrink under refinement
    assert row16[4] < row8[4]
    assert np.isnan(row8[2])  # exterior trace reference is exactly zero
    meta = (out / "run_meta.txt").read_text()
    assert "label = test0" in meta


def test_sweep_self_reference_drops_finest_row(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(CIRCLE2_COARSE.replace("snapshot_times = 0, 1.25, 2.5, 3.75,"
                                          " 5, 6.25, 7.5, 8.75, 10", ""))
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--N", "8,16",
                 "--out", str(out)]) == 0
    table = (out / "errors_circle2_bdf2.csv").read_text().splitlines()
    assert len(table) == 2  # one row: the finest run is the reference
    row = [float(v) for v in table[1].split(",")]
    assert row[0] == 8
    assert np.isfinite(row[2:]).all()


def test_freq_conv_writes_table_and_orders(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["freq-conv", "--preset", "freq_a", "--L", "4,6,8,12",
                 "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "order" in printed
    table = (out / "freq_a_errors.csv").read_text().splitlines()
    assert table[0] == ("L,dirichlet0,neumann0,dirichlet1,neumann1,"
                        "dirichlet2,neumann2,field0,field1,field2")
    assert len(table) == 4
    errs4 = [float(v) for v in table[1].split(",")[1:]]
    errs6 = [float(v) for v in table[2].split(",")[1:]]
    assert all(b < a for a, b in zip(errs4, errs6))
    assert "label = freq_a" in (out / "run_meta.txt").read_text()


def test_freq_conv_needs_two_degrees():
    assert main(["freq-conv", "--preset", "freq_a", "--L", "8"]) == EXIT_CONFIG
