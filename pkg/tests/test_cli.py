import filecmp
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qld import io as qio
from qld.cli import main

SCEN = Path(__file__).resolve().parent.parent / "scenarios"


def run(cmd, name, out, *extra):
    return main([cmd, str(SCEN / name), "--out", str(out), *extra])


def test_simulate_conservative(tmp_path):
    assert run("simulate", "wave_iic.yaml", tmp_path) == 0
    names = sorted(os.listdir(tmp_path))
    assert names == ["diagnostics.csv", "report.csv", "snap_000000.vtk", "snap_000100.vtk", "snap_000200.vtk"]
    _, cols = qio.read_csv(tmp_path / "diagnostics.csv")
    H = cols["H"]
    assert len(H) == 201
    assert np.abs(H - H[0]).max() <= 1e-6 * H[0]
    _, rep = qio.read_csv(tmp_path / "report.csv")
    assert rep["check"] == ["energy_drift"]


def test_simulate_dissipative_monotone(tmp_path):
    assert run("simulate", "iq_decay.yaml", tmp_path) == 0
    _, cols = qio.read_csv(tmp_path / "diagnostics.csv")
    assert np.all(np.diff(cols["H"]) <= 1e-10 * cols["H"][:-1])
    assert cols["dissipation_min"].min() >= 0


def test_max_steps_override(tmp_path):
    assert run("simulate", "wave_iic.yaml", tmp_path, "--max-steps", "7") == 0
    _, cols = qio.read_csv(tmp_path / "diagnostics.csv")
    assert len(cols["t"]) == 8


def test_minimize_writes_equilibrium(tmp_path):
    assert run("minimize", "minimize_affine.yaml", tmp_path) == 0
    assert sorted(os.listdir(tmp_path)) == ["equilibrium.vtk", "report.csv"]
    hdr = qio.read_vtk_header(tmp_path / "equilibrium.vtk")
    assert hdr["DIMENSIONS"] == [13, 13, 1]


def test_verify_writes_no_snapshots(tmp_path, capsys):
    assert run("verify", "verify_stvenant.yaml", tmp_path) == 0
    assert os.listdir(tmp_path) == ["report.csv"]
    out = capsys.readouterr().out
    assert out.count("PASS") == len(out.strip().splitlines())


def test_interface_run(tmp_path):
    assert run("interface", "circle.yaml", tmp_path) == 0
    _, cols = qio.read_csv(tmp_path / "interface.csv")
    t = np.unique(cols["t"])
    assert len(t) >= 2
    last = cols["t"] == t[-1]
    R = np.hypot(cols["X1"][last], cols["X2"][last]).mean()
    assert R < 0.5
    assert np.all(cols["U"] <= 0)


def test_failing_check_gives_exit_one(tmp_path):
    text = (SCEN / "minimize_affine.yaml").read_text().replace("tol: 1.0e-10", "tol: 1.0e-30")
    text = text.replace("minimize: {", "minimize: {max_iter: 3, ")
    p = tmp_path / "s.yaml"
    p.write_text(text)
    assert main(["minimize", str(p), "--out", str(tmp_path / "o")]) == 1


def test_schema_error_exit_two(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: {cells: [8]}\nmaterial: {kind: IQ_quadratic, alpha: 1.0}\n")
    assert main(["simulate", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "UnitInconsistency" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("cmd,name", [("simulate", "wave_iic.yaml"), ("simulate", "iq_decay.yaml"),
                                      ("minimize", "minimize_affine.yaml"), ("interface", "circle.yaml")])
def test_repeat_runs_byte_identical(tmp_path, cmd, name):
    assert run(cmd, name, tmp_path / "a", "--max-steps", "40") == run(cmd, name, tmp_path / "b", "--max-steps", "40")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list and cmp.left_list
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", cmp.common_files, shallow=False)
    assert not mismatch and not errors


def test_seed_changes_random_initial_state(tmp_path):
    text = (SCEN / "wave_iic.yaml").read_text().replace("traveling_wave", "random_smooth")
    p = tmp_path / "s.yaml"
    p.write_text(text)
    for seed in ("1", "2"):
        assert main(["simulate", str(p), "--out", str(tmp_path / seed), "--seed", seed, "--max-steps", "1"]) == 0
    assert not filecmp.cmp(tmp_path / "1" / "snap_000000.vtk", tmp_path / "2" / "snap_000000.vtk", shallow=False)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qld.cli", "verify", str(SCEN / "verify_stvenant.yaml"),
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and "derivatives_bulk" in r.stdout
