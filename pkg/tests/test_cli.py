import json
import subprocess
import sys
from pathlib import Path

import pytest

from piesyn.cli import EXIT_INADMISSIBLE, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE, main, run
from piesyn.sdp import parse_sdpa

MODELS = Path(__file__).resolve().parents[1] / "models"

UNSTABLE_ODE = """
name = "unstable"
[signals]
nx = 1
nu = 1
[pde]
n = [0]
[ode]
A = [[1.0]]
Bxu = [[1.0]]
[sim]
init_ode = [1.0]
tf = 3.0
dt = 0.001
ns = 8
"""

NEUMANN_BOTH = """
[signals]
nz = 1
nr = 1
[pde]
n = [0, 0, 1]
A = [["0", "0", "1"]]
Cr = [["1", "0", "0"]]
[ode]
Dzr = [[1.0]]
[bc]
B = [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
"""


@pytest.fixture
def unstable(tmp_path):
    p = tmp_path / "unstable.toml"
    p.write_text(UNSTABLE_ODE)
    return p


def test_convert_report(capsys):
    code = main(["convert", str(MODELS / "transport.toml")])
    assert code == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["pie"]["state_dims"] == [0, 1]
    assert "T = P{0, 1, 0}" in "\n".join(rep["operators"]["T"])
    assert rep["exit_code"] == 0


def test_convert_text_and_dump(tmp_path, capsys):
    dump = tmp_path / "ops.json"
    code = main(["convert", str(MODELS / "rd_dirichlet.toml"), "--text", "--dump-ops", str(dump)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("T: R^0 x L2^1 -> R^0 x L2^1")
    ops = json.loads(dump.read_text())
    assert set(ops["ops"]) >= {"T", "A", "B1", "C1"}


def test_feedthrough_gain():
    code, rep = run(["gain", str(MODELS / "feedthrough.toml")])
    assert code == EXIT_OK
    assert rep["result"]["gamma"] == pytest.approx(1.0, abs=1e-6)
    assert rep["solver"]["status"] in ("optimal", "near-optimal")


def test_stability_verdicts(unstable):
    code, rep = run(["stability", str(MODELS / "rd_dirichlet.toml"), "-p", "lambda=5"])
    assert code == EXIT_OK and rep["result"]["stable"]
    assert rep["model"]["params"]["lambda"] == 5.0
    code, rep = run(["stability", str(unstable)])
    assert code == EXIT_INFEASIBLE
    assert not rep["result"]["stable"]


def test_parse_errors(tmp_path):
    assert run(["stability", str(tmp_path / "missing.toml")])[0] == EXIT_PARSE
    bad = tmp_path / "bad.toml"
    bad.write_text("[pde\n")
    assert run(["convert", str(bad)])[0] == EXIT_PARSE
    code, rep = run(["stability", str(MODELS / "rd_dirichlet.toml"), "-p", "mu=1"])
    assert code == EXIT_PARSE and "mu" in rep["error"]
    assert run(["stability", str(MODELS / "rd_dirichlet.toml"), "--sweep", "mu:1:2:0.1"])[0] == EXIT_PARSE
    assert run(["stability", str(MODELS / "rd_dirichlet.toml"), "-p", "lambda"])[0] == EXIT_PARSE
    assert run(["frobnicate"])[0] == EXIT_PARSE


def test_inadmissible_model(tmp_path):
    p = tmp_path / "neumann2.toml"
    p.write_text(NEUMANN_BOTH)
    code, rep = run(["convert", str(p)])
    assert code == EXIT_INADMISSIBLE
    assert "inadmissible" in rep["error"]


def test_program_not_applicable():
    # no control input
    assert run(["synth", str(MODELS / "rd_dirichlet.toml")])[0] == EXIT_INADMISSIBLE


def test_numerical_exit_code():
    code, rep = run(["stability", str(MODELS / "rd_dirichlet.toml"), "--max-iter", "2"])
    assert code == EXIT_NUMERICAL
    assert rep["solver"]["status"] == "max-iter"


def test_reports_are_deterministic(tmp_path):
    outs = []
    out = tmp_path / "r.json"
    for _ in range(2):
        main(["gain", str(MODELS / "scalar_kyp.toml"), "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_bisection_sweep():
    code, rep = run(["stability", str(MODELS / "rd_dirichlet.toml"), "--sweep", "lambda:8:11:0.5"])
    assert code == EXIT_OK
    sw = rep["sweep"]
    assert sw["bracket"][0] <= 9.87 <= sw["bracket"][1]
    assert sw["bracket"][1] - sw["bracket"][0] <= 0.5
    assert all("status" in p for p in sw["points"])


def test_bad_sweep_spec():
    assert run(["stability", str(MODELS / "rd_dirichlet.toml"), "--sweep", "lambda:1"])[0] == EXIT_PARSE


def test_grid_points():
    code, rep = run(["stability", str(MODELS / "rd_dirichlet.toml"), "--grid", "lambda:5,12"])
    assert code == EXIT_OK
    assert [p["feasible"] for p in rep["grid"]["points"]] == [True, False]


def test_export_sdpa(tmp_path):
    f = tmp_path / "kyp.dat-s"
    code, rep = run(["export-sdpa", str(MODELS / "scalar_kyp.toml"), "--program", "gain", "-o", str(f)])
    assert code == EXIT_OK
    p = parse_sdpa(f.read_text())
    assert p.blocks == rep["program"]["sdp"]["blocks"]


def test_synth_then_simulate(tmp_path, unstable):
    gains = tmp_path / "g.json"
    code, rep = run(["synth", str(unstable), "--gains-out", str(gains)])
    assert code == EXIT_OK
    doc = json.loads(gains.read_text())
    assert doc["gains"]["K0"][0][0] < -1.0
    code, rep = run(["simulate", str(unstable), "--gains", str(gains)])
    assert code == EXIT_OK
    sn = rep["result"]["state_norm"]
    assert sn["peak"] == sn["initial"]
    assert sn["final"] < 0.5 * sn["initial"]
    # open loop grows
    code, rep = run(["simulate", str(unstable)])
    assert rep["result"]["state_norm"]["final"] > 10.0


def test_simulate_csv(tmp_path):
    csv = tmp_path / "run.csv"
    code, rep = run(["simulate", str(MODELS / "rd_dirichlet.toml"), "--tf", "0.01", "--csv", str(csv)])
    assert code == EXIT_OK
    assert csv.read_text().startswith("t,z0")


def test_missing_gains_file(tmp_path, unstable):
    assert run(["simulate", str(unstable), "--gains", str(tmp_path / "none.json")])[0] == EXIT_PARSE


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "piesyn", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "piesyn" in r.stdout
