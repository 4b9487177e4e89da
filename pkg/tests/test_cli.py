import json
import subprocess
import sys

import pytest

from cbi_cls.cli import main


@pytest.fixture
def files(tmp_path):
    det = tmp_path / "det.json"
    det.write_text(json.dumps({"c": 0, "beta": 1, "b": 0}))
    cir = tmp_path / "cir.json"
    cir.write_text(json.dumps({"c": 0.5, "beta": 1, "b": 0}))
    steep = tmp_path / "steep.json"
    steep.write_text(json.dumps({"c": 0, "beta": 1, "b": -8, "nu": [{"z": 1, "rate": 1}]}))
    return tmp_path, det, cir, steep


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_and_estimate(files, capsys):
    tmp, det, _, _ = files
    out = tmp / "x.csv"
    code, stdout, _ = run(["simulate", "--params", str(det), "--n", "3", "--seed", "1", "--out", str(out)], capsys)
    assert code == 0 and json.loads(stdout)["seed"] == 1
    assert out.read_text() == "k,x\n0,0.0\n1,1.0\n2,2.0\n3,3.0\n"
    code, stdout, _ = run(["estimate", "--in", str(out), "--params", str(det)], capsys)
    res = json.loads(stdout)
    assert code == 0
    assert res["rho_hat"] == 1.0 and res["betabar_hat"] == 1.0 and res["hn_holds"] is True
    assert res["regime"] == "pure-immigration" and res["scaled_errors"] == [0.0, 0.0]


def test_estimate_fixture(tmp_path, capsys):
    f = tmp_path / "s.csv"
    f.write_text("k,x\n0,0\n1,1\n2,3\n")
    code, stdout, _ = run(["estimate", "--in", str(f)], capsys)
    res = json.loads(stdout)
    assert code == 0 and res["rho_hat"] == 2.0 and res["betabar_hat"] == 1.0
    f.write_text("k,x\n0,0\n1,0\n2,0\n")
    res = json.loads(run(["estimate", "--in", str(f)], capsys)[1])
    assert res == {"rho_hat": None, "betabar_hat": None, "hn_holds": False,
                   "b_tilde_hat": None, "beta_tilde_hat": None}


def test_seed_drawn_and_echoed(files, capsys):
    tmp, _, cir, _ = files
    code, stdout, _ = run(["simulate", "--params", str(cir), "--n", "5", "--out", str(tmp / "y.csv")], capsys)
    seed = json.loads(stdout)["seed"]
    assert code == 0 and 0 <= seed < 2**64
    first = (tmp / "y.csv").read_text()
    run(["simulate", "--params", str(cir), "--n", "5", "--seed", str(seed), "--out", str(tmp / "z.csv")], capsys)
    assert (tmp / "z.csv").read_text() == first


def test_usage_errors_exit_1_without_output(files, capsys):
    tmp, det, _, _ = files
    out = tmp / "never.csv"
    code, _, err = run(["simulate", "--params", str(det), "--n", "3", "--bogus", "--out", str(out)], capsys)
    assert code == 1 and "schema" in err and not out.exists()
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"c": -1, "beta": 0, "b": 0}))
    code, _, err = run(["simulate", "--params", str(bad), "--n", "3", "--out", str(out)], capsys)
    assert code == 1 and not out.exists()
    assert run(["simulate", "--params", str(tmp / "missing.json"), "--n", "3", "--out", str(out)], capsys)[0] == 1
    assert run(["simulate", "--params", str(det), "--n", "3", "--seed", "-4", "--out", str(out)], capsys)[0] == 1
    assert run(["moments", "--params", str(det), "--t", "1", "--q", "12"], capsys)[0] == 1
    assert list(tmp.glob("*.tmp")) == []


def test_numeric_failure_exit_2(files, capsys):
    _, _, _, steep = files
    code, stdout, err = run(["moments", "--params", str(steep), "--t", "1", "--q", "6", "--step", "0.5"], capsys)
    assert code == 2 and stdout == "" and "numeric" in err


def test_moments(files, capsys):
    _, _, cir, _ = files
    code, stdout, _ = run(["moments", "--params", str(cir), "--t", "1", "--q", "2"], capsys)
    res = json.loads(stdout)
    assert code == 0 and res["q"] == 2 and res["values"][1] == pytest.approx(0.5, rel=1e-8)  # V0 = beta C / 2


def test_limit_and_experiment(files, capsys):
    tmp, _, cir, _ = files
    out = tmp / "lim.csv"
    code, stdout, _ = run(["limit", "--params", str(cir), "--reps", "10", "--grid", "50", "--seed", "2",
                           "--out", str(out)], capsys)
    lines = out.read_text().splitlines()
    assert code == 0 and lines[0] == "rep,e1,e2" and len(lines) == 11
    cfg = tmp / "exp.json"
    cfg.write_text(json.dumps({"params": json.loads(cir.read_text()), "n_values": [10], "replicates": 100,
                               "grid_points": 20, "seed": 5}))
    report = tmp / "rep.json"
    code, stdout, _ = run(["experiment", "--config", str(cfg), "--out", str(report)], capsys)
    assert code == 0 and json.loads(stdout)["seed"] == 5
    assert json.loads(report.read_text())["per_n"][0]["n"] == 10
    assert (tmp / "rep.errors.csv").exists()
    cfg.write_text(json.dumps({"params": json.loads(cir.read_text()), "n_values": [10], "replicates": 5}))
    assert run(["experiment", "--config", str(cfg)], capsys)[0] == 1


def test_console_script_entry(files):
    tmp, det, _, _ = files
    proc = subprocess.run([sys.executable, "-m", "cbi_cls.cli", "moments", "--params", str(det),
                           "--t", "2", "--q", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["values"] == [0.0, 0.0]
