import os
import subprocess
import sys

import numpy as np
import pytest

from tunneltime import cli
from tunneltime.errors import ConfigurationError
from tunneltime.larmor import larmor_times_global
from tunneltime.scattering import PotentialProfile

SMALL_GPE = """
[gpe]
v0 = {v0}
atom_number = 300
y_min = -100
y_max = 100
n_points = 1024
initial_offset = -40
omega_eff_hz = 200
[lens]
ramp_ms = 4
ramp_segments = 8
[output]
dir = {out}
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_stationary_scan_rows_and_peak(tmp_path):
    cfg = write(tmp_path, f"[barrier]\nheight = 4.71\nsigma = 1.3\nslices = 2048\n"
                          f"[scan]\nv_min = 3.2\nv_max = 6.0\nv_step = 0.02\n[output]\ndir = {tmp_path}\n")
    assert cli.run("stationary-scan", cfg) == 0
    meta, header, data = cli.read_csv(tmp_path / "times_vs_v.csv")
    assert header == ["v_mm_s", "T", "tau_y_ms", "tau_z_ms", "phi_rad"]
    assert data.shape == (141, 5)
    assert abs(data[np.argmax(data[:, 2]), 0] - 4.71) <= 0.02 + 1e-9
    assert meta["command"] == "stationary-scan"


def test_stationary_scan_two_barriers(tmp_path):
    cfg = write(tmp_path, f"[barrier]\nheights = 4.71, 4.13\n[scan]\nvelocities = 3.6, 3.9\n"
                          f"[output]\ndir = {tmp_path}\n")
    assert cli.run("stationary-scan", cfg) == 0
    hi = cli.read_csv(tmp_path / "times_vs_v_barrier0.csv")[2]
    lo = cli.read_csv(tmp_path / "times_vs_v_barrier1.csv")[2]
    assert np.all(hi[:, 2] < lo[:, 2])


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    cfg = write(tmp_path, "[scan]\nvelocities = 4.0\n")
    assert cli.run("stationary-scan", cfg) == 0
    assert (tmp_path / "env_out" / "times_vs_v.csv").exists()


@pytest.mark.parametrize("text,code", [
    ("[scan]\nvelocities = \n", 2),
    ("[scan]\nvelocity = 4.0\n", 2),
    ("[scan]\nvelocities = 4.0\n[plot]\ncolor = red\n", 2),
    ("[scan]\nvelocities = fast\n", 2),
    ("[scan]\nv_min = 4\nv_max = 5\nv_step = 0\n", 2),
    ("[scan]\nvelocities = 4.0\n[barrier]\nsigma = -1\n", 2),
])
def test_config_errors_exit_2(tmp_path, text, code, capsys):
    cfg = write(tmp_path, text + f"[output]\ndir = {tmp_path}\n")
    assert cli.run("stationary-scan", cfg) == code
    assert "configuration error" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path):
    with pytest.raises(ConfigurationError, match=r"cfg.ini:3: unknown key 'hieght'"):
        cli.parse_config("[barrier]\nsigma = 1.3\nhieght = 4\n", "stationary-scan", "cfg.ini")


def test_missing_config_is_io_error(tmp_path):
    assert cli.run("stationary-scan", str(tmp_path / "nope.ini")) == 4


def test_numerical_error_exit_3(tmp_path):
    # a 2-slice-per-decay-length barrier overflows the sweep
    cfg = write(tmp_path, f"[barrier]\nheight = 400\nslices = 8\n[scan]\nvelocities = 0.01\n"
                          f"[output]\ndir = {tmp_path}\n")
    assert cli.run("stationary-scan", cfg) == 3


def test_ensemble_delta_distribution_matches_stationary(tmp_path):
    cfg = write(tmp_path, f"[scan]\nvelocities = 3.9, 4.3, 5.0\n[distribution]\nrms = 0\n"
                          f"[output]\ndir = {tmp_path}\n")
    assert cli.run("ensemble", cfg) == 0
    _, header, data = cli.read_csv(tmp_path / "ensemble.csv")
    assert header == ["v0", "T", "tunneled_frac", "tau_y_ms", "tau_z_ms"]
    b = PotentialProfile.gaussian(4.71, 1.3)
    for row in data:
        t = larmor_times_global(b, row[0])
        assert row[3] == pytest.approx(t.tau_y, rel=1e-3)
        assert row[4] == pytest.approx(t.tau_z, rel=1e-3)


def test_ensemble_independent_of_workers(tmp_path):
    outs = []
    for w in (1, 3):
        d = tmp_path / f"w{w}"
        cfg = write(tmp_path, f"[scan]\nv_min = 3.8\nv_max = 4.8\nv_step = 0.25\n[distribution]\nrms = 0.31\n"
                              f"nodes = 48\n[run]\nworkers = {w}\n[output]\ndir = {d}\n", f"w{w}.ini")
        assert cli.run("ensemble", cfg) == 0
        outs.append((d / "ensemble.csv").read_text())
    assert outs[0] == outs[1]
    data = cli.read_csv(tmp_path / "w1" / "ensemble.csv")[2]
    assert data[0, 2] >= 0.9
    assert data[0, 3] < data[-1, 3]


def test_knife_edge_synthetic_and_roundtrip(tmp_path):
    cfg = write(tmp_path, f"[knife_edge]\nv0 = 4.26\nrms = 0.35\nnoise = 0.01\n[run]\nseed = 3\n"
                          f"[calibration]\nintensities = 0.8, 1.0, 1.2\n[output]\ndir = {tmp_path / 'a'}\n")
    assert cli.run("knife-edge", cfg) == 0
    fit_a = (tmp_path / "a" / "knife_edge_fit.csv").read_text()
    _, _, report = cli.read_csv(tmp_path / "a" / "knife_edge_fit.csv")
    values = {r[0]: r[1] for r in report}
    assert values["rms_width_mm_s"] == pytest.approx(0.35, rel=0.05)
    assert values["calibration_slope"] == pytest.approx(22.18, rel=0.02)
    cfg2 = write(tmp_path, f"[knife_edge]\ninput = {tmp_path / 'a' / 'knife_edge_scan.csv'}\n"
                           f"[output]\ndir = {tmp_path / 'b'}\n", "b.ini")
    assert cli.run("knife-edge", cfg2) == 0
    rows_a = [l for l in fit_a.splitlines() if not l.startswith("#")][:6]
    rows_b = [l for l in (tmp_path / "b" / "knife_edge_fit.csv").read_text().splitlines()
              if not l.startswith("#")]
    assert rows_a == rows_b  # same fit; the re-ingest run has no height calibration


def test_knife_edge_malformed_input(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("scan_var,transmission,shots\n4.0,0.9,1\n4.1,x,1\n")
    cfg = write(tmp_path, f"[knife_edge]\ninput = {bad}\n[output]\ndir = {tmp_path}\n")
    assert cli.run("knife-edge", cfg) == 2
    assert "line 3" in capsys.readouterr().err
    bad.write_text("4.0,0.9,1\n")
    assert cli.run("knife-edge", cfg) == 2


def test_gpe_run_is_deterministic(tmp_path):
    texts = []
    for name in ("a", "b"):
        cfg = write(tmp_path, SMALL_GPE.format(v0=4.9, out=tmp_path / name), f"{name}.ini")
        assert cli.run("gpe-run", cfg) == 0
        texts.append((tmp_path / name / "gpe_run.csv").read_text())
    assert texts[0] == texts[1]
    _, header, data = cli.read_csv(tmp_path / "a" / "gpe_run.csv")
    assert header == cli.GPE_HEADER and data.shape == (1, 9)


def test_gpe_scan_and_snapshot(tmp_path):
    cfg = write(tmp_path, SMALL_GPE.format(v0=4.9, out=tmp_path) + "[scan]\nvelocities = 4.6, 5.2\n")
    assert cli.run("gpe-scan", cfg) == 0
    data = cli.read_csv(tmp_path / "gpe_scan.csv")[2]
    assert data.shape == (2, 9) and data[0, 1] < data[1, 1]
    cfg = write(tmp_path, SMALL_GPE.format(v0=4.9, out=tmp_path) + "[snapshot]\ntimes = 1.0, 2.5\n", "s.ini")
    assert cli.run("snapshot", cfg) == 0
    snaps = sorted((tmp_path / "snapshots").iterdir())
    assert [p.name for p in snaps] == ["snapshot_00001.000ms.csv", "snapshot_00002.500ms.csv"]


def test_gpe_scan_error_names_run(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_GPE.format(v0=4.9, out=tmp_path) + "[scan]\nvelocities = 4.6, 0.05\n")
    assert cli.run("gpe-scan", cfg) in (2, 3)
    assert "run 1" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, f"[scan]\nvelocities = 4.0\n[output]\ndir = {tmp_path}\n")
    r = subprocess.run([sys.executable, "-m", "tunneltime", "stationary-scan", cfg],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "times_vs_v.csv" in r.stdout
