import json

import pytest

from acmtdc.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, EXIT_SIMULATION, main
from acmtdc.simulator import bundled_scenario_path

from builders import bundled_dict


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def wind_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("wind") / "wind.csv"
    assert run("gen-wind", "--out", p, "--steps", 500, "--seed", 3) == EXIT_OK
    return p


def test_gen_wind_is_byte_identical(tmp_path, wind_csv):
    p = tmp_path / "again.csv"
    assert run("gen-wind", "--out", p, "--steps", 500, "--seed", 3) == EXIT_OK
    assert p.read_bytes() == wind_csv.read_bytes()
    q = tmp_path / "other.csv"
    run("gen-wind", "--out", q, "--steps", 500, "--seed", 4)
    assert q.read_bytes() != p.read_bytes()


def test_seed_from_environment(tmp_path, monkeypatch, wind_csv):
    monkeypatch.setenv("ACMTDC_SEED", "3")
    p = tmp_path / "env.csv"
    assert run("gen-wind", "--out", p, "--steps", 500) == EXIT_OK
    assert p.read_bytes() == wind_csv.read_bytes()


def test_forecast_is_deterministic(tmp_path, wind_csv, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("forecast", "--wind", wind_csv, "--out", a, "--trees", 3, "--seed", 1) == EXIT_OK
    assert run("forecast", "--wind", wind_csv, "--out", b, "--trees", 3, "--seed", 1) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a_backtest.csv").read_bytes() == (tmp_path / "b_backtest.csv").read_bytes()
    assert "RMSE" in capsys.readouterr().out


def test_opf_zero_wind(tmp_path, capsys):
    out = tmp_path / "sol.json"
    assert run("opf", "--wind-mw", "OWF1=0,OWF2=0", "--out", out) == EXIT_OK
    assert "status Optimal" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    assert doc["status"] == "Optimal"
    assert (tmp_path / "sol_setpoints.json").exists()


def test_opf_from_forecast_model(tmp_path, wind_csv):
    model = tmp_path / "m.json"
    run("forecast", "--wind", wind_csv, "--out", model, "--trees", 2)
    out = tmp_path / "sol.json"
    assert run("opf", "--model", model, "--wind-csv", wind_csv, "--horizon", 2, "--out", out) == EXIT_OK
    assert len(json.loads(out.read_text())["steps"]) == 2


def test_opf_infeasible_exit_code(tmp_path, capsys):
    d = bundled_dict()
    for b in d["ac_buses"]:
        b["load_p_mw"] = 10 * b.get("load_p_mw", 0.0)
    case = tmp_path / "heavy.json"
    case.write_text(json.dumps(d))
    assert run("opf", "--case", case, "--out", tmp_path / "s.json") == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["opf", "--case", "/nonexistent/case.json", "--out", "x.json"],
    ["simulate", "--scenario", "/nonexistent/sc.json"],
    ["simulate", "--scenario", "s2", "--strategy", "Bogus"],
    ["opf", "--wind-mw", "OWF1=abc", "--out", "x.json"],
    ["forecast", "--wind", "/nonexistent.csv", "--out", "m.json"],
])
def test_input_errors(tmp_path, monkeypatch, argv, capsys):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_simulate_compare(tmp_path, capsys):
    out = tmp_path / "res"
    code = run("simulate", "--scenario", "s3", "--horizon", 1.5, "--compare", "--out-dir", out)
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "frequency nadir ranking" in text
    for name in ("ActivePower", "DcVoltage", "AdaptiveVoltageDroop", "ProposedDroop"):
        assert name in text
    assert (out / "s3_traces.csv").exists()
    metrics = json.loads((out / "s3_metrics.json").read_text())
    assert set(metrics["metrics"]) == {"ActivePower", "DcVoltage", "AdaptiveVoltageDroop", "ProposedDroop"}
    assert run("report", out) == EXIT_OK
    assert "s3" in capsys.readouterr().out


def test_simulate_failure_exit_code(tmp_path, capsys):
    sc = json.loads(bundled_scenario_path("s2").read_text())
    sc["events"][0].update(time_s=0.1, dp_mw=1e6)
    sc["sim"]["horizon_s"] = 0.5
    path = tmp_path / "boom.json"
    path.write_text(json.dumps(sc))
    assert run("simulate", "--scenario", path, "--strategy", "ActivePower", "--out-dir", tmp_path) \
        == EXIT_SIMULATION
    assert (tmp_path / "s2_truncated.csv").exists()
    assert "simulation failed" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as info:
        run("launch")
    assert info.value.code == 2
