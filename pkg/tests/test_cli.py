import subprocess
import sys

import pytest

from sircontrol import scenarios as sc
from sircontrol.cli import main

SCENARIO = """\
name = quad
sigma0 = 3
gamma = 0.1
x0 = 0.9
y0 = 0.1
T = 100
cost = quadratic
c2 = 0.01
solver = sweep
grid_nx = 40
grid_ny = 40
grid_y_hi = 0.4
"""


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "quad.cfg"
    path.write_text(SCENARIO)
    return path


def test_simulate(tmp_path, scenario, capsys):
    out = tmp_path / "o"
    assert main(["simulate", "--scenario", str(scenario), "--out", str(out), "--sigma", "1.5"]) == 0
    text = capsys.readouterr().out
    kv = sc.parse_key_values(text)
    assert kv["scenario"] == "quad"
    assert kv["simulate.running_cost"] == pytest.approx(0.01 * 0.25 * 100, rel=1e-12)
    data = sc.read_csv(out / "quad_simulate.csv")
    assert data["sigma"][0] == 1.5


def test_solve_and_grid_override(tmp_path, scenario, capsys):
    out = tmp_path / "o"
    rc = main(["solve", "--scenario", str(scenario), "--solver", "hjb", "--grid", "30,32", "--out", str(out)])
    assert rc == 0
    assert (out / "quad_hjb.csv").is_file() and (out / "quad_baseline.csv").is_file()
    head = (out / "quad_hjb_value.grid").read_text().splitlines()[:2]
    assert head == ["30", "32"]
    kv = sc.parse_key_values(capsys.readouterr().out)
    assert kv["hjb.status"] == "ok"


def test_compare(tmp_path, scenario, capsys):
    assert main(["compare", "--scenario", str(scenario), "--out", str(tmp_path)]) == 0
    kv = sc.parse_key_values(capsys.readouterr().out)
    assert kv["sweep.status"] == kv["hjb.status"] == "ok"
    assert "analytic.status" not in kv


def test_sweep_param(tmp_path, capsys):
    rc = main(["sweep-param", "--preset", "diff_time_opt", "--out", str(tmp_path),
               "--param", "T", "--values", "30,60"])
    assert rc == 0
    table = capsys.readouterr().out
    assert "analytic" in table and "baseline" in table
    assert (tmp_path / "diff_time_opt_sweep_T.csv").is_file()


def test_presets(capsys):
    assert main(["presets"]) == 0
    assert capsys.readouterr().out.split() == sc.preset_names()


def test_exit_invalid(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SCENARIO.replace("sigma0 = 3", "sigma0 = -1"))
    assert main(["solve", "--scenario", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["solve", "--preset", "covid_baseline", "--solver", "analytic"]) == 1
    assert main(["solve", "--preset", "example1", "--grid", "3x3"]) == 1
    assert main(["bogus"]) == 1


def test_exit_solver_failure(tmp_path, scenario, capsys):
    scenario.write_text(SCENARIO + "sweep_max_iter = 1\n")
    assert main(["solve", "--scenario", str(scenario)]) == 2
    kv = sc.parse_key_values(capsys.readouterr().out)
    assert kv["sweep.status"] == "not_converged"


def test_exit_io(tmp_path, scenario, capsys):
    assert main(["solve", "--scenario", str(tmp_path / "absent.cfg")]) == 3
    assert main(["solve", "--preset", "no_such_preset"]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--scenario", str(scenario), "--out", str(blocker)]) == 3
    assert "I/O error" in capsys.readouterr().err


def test_module_entry_point(scenario):
    proc = subprocess.run(
        [sys.executable, "-m", "sircontrol.cli", "simulate", "--scenario", str(scenario)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "[key=value]" in proc.stdout
