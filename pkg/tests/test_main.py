import json

import pytest

import main
from core.estimators_stats import CSV_HEADER


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


SMALL = ["--rows", "2", "--cols", "3", "--seed", "3"]


def test_oracle_prints_json(capsys):
    assert main.main(["oracle", *SMALL, "--J-A", "0.5", "--J-B", "0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["states"] == 64
    assert out["instance"]["rows"] == 2


def test_missing_seed_is_a_config_error():
    assert main.main(["oracle", "--rows", "2", "--cols", "2"]) == main.EXIT_CONFIG


def test_enumeration_budget_is_a_numeric_error():
    assert main.main(["oracle", "--rows", "6", "--cols", "6", "--seed", "1"]) == main.EXIT_NUMERIC


def test_bad_distribution_argument_exits():
    with pytest.raises(SystemExit):
        main.main(["oracle", *SMALL, "--H", "abc"])


def test_estimate_writes_outputs(tmp_path, capsys):
    code = main.main(["estimate", *SMALL, "--H", "0.1:0.3", "--L", "100", "--chains", "2", "--output", "out"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["dual-is2"]["samples"] == 200
    assert (tmp_path / "out" / "summary.json").exists()
    assert (tmp_path / "out" / "dual-is2" / "chain_1.csv").exists()
    assert (tmp_path / "out" / "runs.db").exists()


def test_print_trace(capsys):
    code = main.main(["estimate", *SMALL, "--domain", "primal", "--sampler", "uniform", "--L", "50", "--print-trace"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 51
    assert lines[-1].startswith("50,")


def test_compare(tmp_path, capsys):
    code = main.main(
        ["compare", *SMALL, "--L", "100", "--burn-in", "10", "--algorithms", "dual:uniform,primal:gibbs", "--output", "cmp"]
    )
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out["samplers"]) == {"dual-uniform", "primal-gibbs"}
    assert (tmp_path / "cmp" / "compare.csv").exists()


def test_dual_inspect(capsys):
    assert main.main(["dual", "inspect", *SMALL, "--H", "0.2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_bond_vars"] == 7
    assert out["n_field_vars"] == 6


def test_partition_validate(capsys):
    assert main.main(["partition", "validate", *SMALL, "--H", "0.2", "--partition", "checker"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ok"] is True
    assert out["preset"] == "checker"


def test_custom_partition_without_variables_is_a_config_error():
    code = main.main(["partition", "validate", *SMALL, "--partition", "custom"])
    assert code == main.EXIT_CONFIG
