import json
import subprocess
import sys

import numpy as np
import pytest

from mfgmarket import cli
from mfgmarket.geometry import Grid


def config(tmp_path, name="scenario.json", **overrides):
    raw = {
        "params": {"epsilon": 1.0, "r": 0.5, "sigma": 0.5},
        "grid": {"nx": 40, "nt": 80},
        "bc": "neumann",
        "m0": {"kind": "bump", "center": 0.5, "width": 0.2},
        "uT": {"kind": "ramp", "slope": 0.25},
        "output": str(tmp_path / "out"),
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def test_solve_writes_all_outputs(tmp_path):
    assert cli.main(["solve", str(config(tmp_path))]) == 0
    out = tmp_path / "out"
    for name in ("u.csv", "m.csv", "q.csv", "path.csv", "report.json"):
        assert (out / name).exists(), name
    u = np.loadtxt(out / "u.csv", delimiter=",", skiprows=1)
    assert u.shape == (81, 42)
    np.testing.assert_allclose(u[:, 0], Grid(40, 80).t, atol=1e-15)
    header = (out / "u.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t" and float(header[-1]) == 1.0
    assert (out / "path.csv").read_text().startswith("t,f,p_bar\n")
    report = json.loads((out / "report.json").read_text())
    for key in ("iterations", "residual_history", "mass_error_max", "u_min", "grad_bound_ratio"):
        assert key in report
    assert all(report["invariant_flags"].values())


def test_decoupled_report_has_one_iteration(tmp_path):
    assert cli.main(["solve", str(config(tmp_path, params={"epsilon": 0.0}))]) == 0
    assert json.loads((tmp_path / "out" / "report.json").read_text())["iterations"] == 1


def test_constant_terminal_matches_ode(tmp_path):
    assert cli.main(["solve", str(config(tmp_path, uT={"kind": "constant", "value": 0.5}))]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["ode_oracle_error"] <= report["ode_oracle_tol"]
    # independent closed form against the written lattice
    u = np.loadtxt(tmp_path / "out" / "u.csv", delimiter=",", skiprows=1)
    t, b, r = u[:, 0], 2 / 3, 0.5
    tau = 1 - t
    exact = 0.5 * np.exp(-r * tau) + b**2 / (4 * r) * (1 - np.exp(-r * tau))
    assert np.max(np.abs(u[:, 1:] - exact[:, None])) == pytest.approx(report["ode_oracle_error"], rel=1e-12)


def test_error_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", str(bad)]) == 2
    assert "config" in capsys.readouterr().err
    assert cli.main(["validate", str(config(tmp_path, grid={"nx": 1, "nt": 10}))]) == 2
    table = tmp_path / "dip.csv"
    table.write_text("x,value\n0,0.3\n0.5,-0.05\n1,0.3\n")
    assert cli.main(["validate", str(config(tmp_path, uT={"kind": "table", "path": str(table)}))]) == 2
    assert cli.main(["sweep", str(config(tmp_path)), "--sigmas", ""]) == 2
    assert cli.main(["sweep", str(config(tmp_path)), "--sigmas", "0.25,0.5"]) == 2
    assert cli.main(["solve", str(config(tmp_path, params={"epsilon": 1.0, "r": 0.5}, bc="periodic"))]) == 2
    assert cli.main(["solve", str(tmp_path / "missing.json")]) == 2


def test_no_convergence_exit_code_keeps_outputs(tmp_path):
    path = config(tmp_path, params={"epsilon": 2.0}, solver={"max_iter": 1})
    assert cli.main(["solve", str(path)]) == 3
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["converged"] is False and report["iterations"] == 1


def test_invariant_failure_exit_code(tmp_path, monkeypatch):
    original = cli.solve_report

    def broken(sol, scn):
        rep = original(sol, scn)
        rep["invariant_flags"]["mass-conservation"] = False
        return rep

    monkeypatch.setattr(cli, "solve_report", broken)
    assert cli.main(["solve", str(config(tmp_path))]) == 4


def test_csv_outputs_are_bit_stable(tmp_path):
    path = config(tmp_path)
    cli.main(["solve", str(path), "--output-dir", str(tmp_path / "a")])
    cli.main(["solve", str(path), "--output-dir", str(tmp_path / "b")])
    for name in ("u.csv", "m.csv", "q.csv", "path.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trips_exactly(tmp_path):
    scn = cli.load_config(config(tmp_path))
    sol = cli.solve_mfg(scn.params, scn.m0, scn.u_T, scn.grid)
    cli.write_lattice(tmp_path / "u.csv", sol.u, scn.grid)
    back = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)[:, 1:]
    np.testing.assert_array_equal(back, sol.u)


def test_validate_passes_and_mirrors_report(tmp_path):
    path = config(tmp_path)
    assert cli.main(["solve", str(path)]) == 0
    assert cli.main(["validate", str(path)]) == 0
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())
    validate = json.loads((out / "validate.json").read_text())
    assert validate["passed"] is True
    for key in ("iterations", "residual_history", "mass_error_max", "u_min", "grad_bound_ratio"):
        assert validate[key] == report[key], key
    for key in ("energy_gap_term1", "energy_gap_term2", "first_order_residual", "j_equilibrium", "j_gap_min"):
        assert key in validate
    for name in ("uniqueness", "optimality", "gap-identity", "first-order"):
        assert validate["checks"][name]["pass"], name


def test_validate_inviscid_runs_subsolution_check(tmp_path):
    path = config(tmp_path, params={"sigma": 0.0})
    assert cli.main(["validate", str(path)]) == 0
    checks = json.loads((tmp_path / "out" / "validate.json").read_text())["checks"]
    assert checks["subsolution"]["pass"]


def test_sweep_table_layout(tmp_path):
    assert cli.main(["sweep", str(config(tmp_path)), "--sigmas", "0.5,0.25"]) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0].split(",") == list(cli.SWEEP_COLUMNS)
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 2
    assert rows[0][2] != "" and rows[1][2] == ""
    assert float(rows[0][0]) == 0.5 and float(rows[1][0]) == 0.25
    for i in range(2):
        assert (tmp_path / "out" / f"sigma_{i:02d}" / "path.csv").exists()


def test_sweep_halving_sequence_converges(tmp_path):
    sigmas = ",".join(str(0.5 / 2**i) for i in range(7)) + ",0"
    assert cli.main(["sweep", str(config(tmp_path)), "--sigmas", sigmas]) == 0
    d1 = np.genfromtxt(tmp_path / "out" / "sweep.csv", delimiter=",", names=True)["d1_to_next"]
    tail = d1[-5:-1]
    assert np.all(np.diff(tail) < 0)


def test_output_root_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    path = config(tmp_path, output="relative/run")
    assert cli.main(["solve", str(path)]) == 0
    assert (tmp_path / "root" / "relative" / "run" / "u.csv").exists()


def test_module_entry_point(tmp_path):
    path = config(tmp_path, params={"epsilon": 0.0})
    done = subprocess.run([sys.executable, "-m", "mfgmarket", "solve", str(path)], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert (tmp_path / "out" / "report.json").exists()
