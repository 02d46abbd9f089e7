import inspect
import json

import numpy as np
import pandas as pd
import pytest

import main
from levy2b.report import dumps, export_csv, inputs_digest, jsonable

singleton = """
grid.x_min = -6.0
grid.x_max = 6.0
grid.nx = 61
grid.T = 1.0

controls.a = [1.0]
controls.jumps = [[[1.0, 0.5]]]

terminal.g = "x^2"

run.seed = 3
run.region = [-2.0, 2.0]
run.x_probe = [0.0]
"""


def write_config(tmp_path, text, name="problem.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def run_main(tmp_path, suite, config, *extra):
    out = tmp_path / "report.json"
    code = main.main([suite, "--config", str(config), "--out", str(out), *extra])
    return code, out


def strip_meta(report):
    return {k: v for k, v in report.items() if k != "meta"}


def test_discover_suites():
    names = set(main.discover_suites())
    assert {"solve-pide", "solve-prob", "compare", "simulate", "fenchel", "check-viscosity",
            "dpp-check", "minimality"} <= names


def test_suites_take_only_the_config():
    for suite_class in main.discover_suites().values():
        assert list(inspect.signature(suite_class.__init__).parameters) == ["self", "config"]
        assert not hasattr(suite_class, "output_key")
    assert list(inspect.signature(main.run_suite).parameters) == ["suite_class", "config"]


def test_bad_config_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, singleton.replace("grid.nx = 61", "grid.nx = 2"))
    code, out = run_main(tmp_path, "minimality", config)
    assert code == main.EXIT_CONFIG
    assert not out.exists()
    assert "nx ≥ 3" in capsys.readouterr().out


def test_singleton_minimality_passes(tmp_path):
    config = write_config(tmp_path, singleton)
    code, out = run_main(tmp_path, "minimality", config)
    assert code == main.EXIT_PASS
    report = json.loads(out.read_text(encoding="utf-8"))
    entry = report["suites"]["minimality"]
    assert report["passed"]
    assert entry["verdicts"]["singleton_zero"]["pass"]
    assert entry["verdicts"]["k_rate_minimum"]["pass"]
    assert entry["inputs_digest"] == inputs_digest(config.read_bytes(), "minimality", 3)


def test_failed_verdict_exits_1_and_writes_csv(tmp_path):
    config = write_config(tmp_path, singleton + 'run.closed_form = "x^2 + 3"\n')
    tables = tmp_path / "tables"
    code, out = run_main(tmp_path, "solve-pide", config, "--csv", str(tables))
    assert code == main.EXIT_FAIL
    report = json.loads(out.read_text(encoding="utf-8"))
    verdicts = report["suites"]["solve-pide"]["verdicts"]
    assert not verdicts["closed_form"]["pass"]
    assert verdicts["terminal_exact"]["pass"]
    frame = pd.read_csv(tables / "solve-pide_pide_field.csv")
    assert list(frame.columns) == ["t", "x", "y"]


def test_per_control_field_tables_carry_z(tmp_path):
    config = write_config(tmp_path, singleton)
    tables = tmp_path / "tables"
    run_main(tmp_path, "solve-prob", config, "--csv", str(tables))
    frame = pd.read_csv(tables / "solve-prob_control_0_field.csv")
    assert list(frame.columns) == ["t", "x", "y", "z"]
    last = frame["t"].max()
    assert frame.loc[frame["t"] == last, "z"].isna().all()
    assert frame.loc[frame["t"] < last, "z"].notna().all()
    start = frame[(frame["t"] == 0.0) & (frame["x"].abs() <= 2.0)]
    assert not start.empty
    assert np.allclose(start["z"], 2.0 * start["x"], atol=1e-2)


def test_usage_names_the_script(capsys):
    with pytest.raises(SystemExit) as info:
        main.main(["--help"])
    assert info.value.code == 0
    assert capsys.readouterr().out.startswith("usage: main.py ")


def test_report_is_deterministic_outside_meta(tmp_path):
    config = write_config(tmp_path, singleton)
    first_out = tmp_path / "first.json"
    second_out = tmp_path / "second.json"
    for out in (first_out, second_out):
        assert main.main(["dpp-check", "--config", str(config), "--out", str(out), "--seed", "11"]) == 0
    first = json.loads(first_out.read_text(encoding="utf-8"))
    second = json.loads(second_out.read_text(encoding="utf-8"))
    assert strip_meta(first) == strip_meta(second)
    assert first["suites"]["dpp-check"]["inputs_digest"] == inputs_digest(config.read_bytes(), "dpp-check", 11)


def test_inputs_digest():
    base = inputs_digest(b"grid.nx = 61", "compare", 0)
    assert len(base) == 64
    assert base == inputs_digest(b"grid.nx = 61", "compare", 0)
    assert base != inputs_digest(b"grid.nx = 61", "compare", 1)
    assert base != inputs_digest(b"grid.nx = 61", "simulate", 0)
    assert base != inputs_digest(b"grid.nx = 62", "compare", 0)


def test_jsonable():
    value = {"a": np.float64(1.5), "b": np.arange(3), "c": (np.int64(2), np.bool_(True)),
             "d": float("nan"), "e": -np.inf, 1: "one"}
    assert jsonable(value) == {"a": 1.5, "b": [0, 1, 2], "c": [2, True], "d": None, "e": "-inf", "1": "one"}
    assert json.loads(dumps({"z": 1, "a": [np.float32(0.5)]})) == {"a": [0.5], "z": 1}


def test_export_csv(tmp_path):
    tables = {"second": pd.DataFrame({"x": [1.0]}), "first": pd.DataFrame({"t": [0.0, 0.5], "y": [1, 2]})}
    written = export_csv(tables, tmp_path / "csv")
    assert [p.name for p in written] == ["first.csv", "second.csv"]
    assert written[0].read_bytes() == b"t,y\r\n0.0,1\r\n0.5,2\r\n"
