import subprocess
import sys

import numpy as np
import pytest

from rfflow import cli
from rfflow.config import RunConfig

MODEL = ["--mu", "0.5", "--nu", "0.3", "--psi", "1.8", "--phi", "1.4", "--r", "1", "--s", "0.2",
         "--lambda", "0.01", "--grid-points", "120", "--grid-points-2d", "40"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_coeffs_rounded(capsys):
    code, out, _ = run(["coeffs", "--activation", "relu-centered", "--digits", "4"], capsys)
    assert code == 0 and out.strip() == "mu=0.5 nu=0.3014"


def test_coeffs_full_precision(capsys):
    code, out, _ = run(["coeffs", "--activation", "hermite2:0.25,0.5"], capsys)
    mu, nu = (float(tok.split("=")[1]) for tok in out.split())
    assert code == 0 and mu == pytest.approx(0.25, abs=1e-14) and nu == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("argv", [
    ["curve", "--mu", "0", "--nu", "0"],
    ["curve", "--activation", "softplus"],
    ["curve", "--mu", "0.5", "--nu", "0.3", "--times", "-1"],
    ["curve", "--mu", "0.5", "--nu", "0.3", "--psi", "-2"],
    ["limit", "--mu", "0.5", "--nu", "0.3", "--lambda", "0"],
])
def test_validation_exit_code(argv, capsys, tmp_path):
    code, _, err = run(argv + ["--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_VALIDATION and err.startswith("error")


def test_missing_config_file(capsys, tmp_path):
    code, _, _ = run(["curve", "--config", str(tmp_path / "missing.ini")], capsys)
    assert code == cli.EXIT_VALIDATION


def test_curve_at_time_zero(capsys, tmp_path):
    code, out, _ = run(["curve", *MODEL, "--times", "0", "--out", str(tmp_path)], capsys)
    assert code == 0
    data = np.loadtxt(tmp_path / "rfflow_curve.csv", delimiter=",", skiprows=1, ndmin=2)
    assert data.shape == (1, 6)
    t, train, test, g = data[0, :4]
    assert t == 0 and g == 0
    assert test == pytest.approx(1 + 0.04 + 0.25 + 0.09, abs=1e-3)


def test_solve(capsys):
    code, out, _ = run(["solve", *MODEL, "--x", "1+0.1j", "--y", "2+0.1j"], capsys)
    names = [line.split("=")[0] for line in out.splitlines()]
    assert code == 0
    assert names == ["g1", "h4", "t1", "g3", "q1", "q2", "q4", "q5", "K", "L0", "V", "H0", "W"]


def test_limit(capsys):
    code, out, _ = run(["limit", *MODEL], capsys)
    assert code == 0 and out.startswith("test_inf=")


def test_density(capsys, tmp_path):
    code, out, _ = run(["density", *MODEL, "--selector", "K", "--out", str(tmp_path)], capsys)
    assert code == 0 and (tmp_path / "rfflow_density_K.csv").exists()
    assert out.startswith("atom0=")


def _sweep_ini(tmp_path, count, times):
    rc = RunConfig(mu=0.5, nu=0.3, psi=1.8, phi=1.4, r=1.0, lam=0.01, grid_points=120, grid_points_2d=40,
                   sweep_parameter="phi", sweep_start=1.4, sweep_stop=2.0, sweep_count=count, times=times,
                   directory=str(tmp_path), prefix="hm")
    path = tmp_path / "run.ini"
    path.write_text(rc.to_ini())
    return path


def test_heatmap_single_cell(capsys, tmp_path):
    code, out, _ = run(["heatmap", "--config", str(_sweep_ini(tmp_path, 1, "1.0"))], capsys)
    assert code == 0
    for name in ("heatmap_test.csv", "heatmap_train.csv", "heatmap_phi.txt", "heatmap_t.txt", "heatmap.gp"):
        assert (tmp_path / f"hm_{name}").exists()
    assert np.loadtxt(tmp_path / "hm_heatmap_test.csv", delimiter=",").shape == ()


def test_heatmap_mesh_limit(capsys, tmp_path):
    code, _, _ = run(["heatmap", "--config", str(_sweep_ini(tmp_path, 50, "logspace(0.1, 10, 100)"))], capsys)
    assert code == cli.EXIT_VALIDATION


def test_heatmap_aborts_on_failures(capsys, tmp_path, monkeypatch):
    def broken(job):
        return np.full(len(job[3]), np.nan), np.full(len(job[3]), np.nan), "forced"

    monkeypatch.setattr(cli, "_heatmap_row", broken)
    code, _, err = run(["heatmap", "--config", str(_sweep_ini(tmp_path, 2, "1.0, 2.0"))], capsys)
    assert code == cli.EXIT_MESH and "aborted" in err


def test_dump_config_roundtrip(capsys):
    code, out, _ = run(["curve", *MODEL, "--dump-config"], capsys)
    assert code == 0
    rc = RunConfig.from_ini(out)
    assert (rc.mu, rc.nu, rc.lam, rc.grid_points) == (0.5, 0.3, 0.01, 120)


def test_simulate(capsys, tmp_path):
    code, _, _ = run(["simulate", *MODEL, "--times", "0, 1", "--d", "20", "--seeds", "2",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    runs = (tmp_path / "rfflow_runs.csv").read_text().splitlines()
    assert runs[0] == "t,train,test,seed" and len(runs) == 5
    assert (tmp_path / "rfflow_aggregate.csv").exists()


def test_simulate_memory_budget(capsys, tmp_path):
    code, _, _ = run(["simulate", *MODEL, "--d", "100000", "--seeds", "1", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_SIMULATION


def test_verify_pencil(capsys, tmp_path):
    code, _, _ = run(["verify-pencil", *MODEL, "--d", "100", "--seeds", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = (tmp_path / "rfflow_pencil.csv").read_text().splitlines()
    assert len(lines) == 8


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rfflow.cli", "coeffs", "--activation", "identity"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.startswith("mu=")


def test_coarse_grid_reports_extraction_failure(capsys, tmp_path):
    argv = ["curve", *MODEL, "--times", "0", "--out", str(tmp_path)]
    argv[argv.index("--grid-points") + 1] = "60"
    code, _, err = run(argv, capsys)
    assert code == cli.EXIT_EXTRACTION and "'psi': 1.8" in err
