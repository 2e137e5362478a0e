import csv
import json
import math

import pytest

from modules.cli_runner import compare, dual_inspect, oracle, partition_validate, run, _unique_labels
from modules.experiment_config import RunSpec, build_config, load_config
from modules.primal_mc import enumerate_Z
from modules.run_ledger import RunLedger

SMALL = {
    "rows": 2,
    "cols": 3,
    "seed": 3,
    "L": 200,
    "chains": 2,
    "burn_in": 10,
    "H": [0.1, 0.3],
    "algorithms": ["dual:is2", "primal:gibbs"],
}


def _cfg(output, **extra):
    return build_config({**SMALL, "output": str(output), **extra})


def test_run_writes_outputs(tmp_path):
    result = run(_cfg(tmp_path), record=False)
    for label in ("dual-is2", "primal-gibbs"):
        for i in range(2):
            assert (tmp_path / label / f"chain_{i}.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["samplers"]) == {"dual-is2", "primal-gibbs"}
    merged = summary["samplers"]["dual-is2"]["merged"]
    assert merged["chains"] == 2
    assert merged["samples"] == 400
    assert summary["exact"]["states"] == 64
    assert "output" not in summary["config"]
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert "total_s" in timing and "runtime_s" in timing["dual-is2"]
    assert "runtime_s" not in summary["samplers"]["dual-is2"]["chains"][0]
    assert not (tmp_path / "runs.db").exists()
    assert len(result["traces"]["primal-gibbs"]) == 2


def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(_cfg(a), record=False)
    run(_cfg(b, threads=2), record=False)
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    for label in ("dual-is2", "primal-gibbs"):
        for i in range(2):
            name = f"{label}/chain_{i}.csv"
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_dual_estimate_is_close_to_exact(tmp_path):
    cfg = _cfg(tmp_path, L=5000, algorithms=["dual:is2"])
    summary = run(cfg, record=False)["summary"]
    merged = summary["samplers"]["dual-is2"]["merged"]
    assert abs(merged["log_Z"] - summary["exact"]["log_Z"]) < 5 * merged["std_err"] + 1e-9


def test_record_appends_to_ledger(tmp_path):
    run(_cfg(tmp_path), record=True)
    ledger = RunLedger(str(tmp_path / "runs.db"))
    try:
        runs = ledger.get_recent_runs(10)
        assert {r["sampler"] for r in runs} == {"dual-is2", "primal-gibbs"}
        assert all(r["preset"] == "custom" and r["samples"] == 400 for r in runs)
    finally:
        ledger.close()


def test_compare_writes_side_by_side(tmp_path):
    report = compare(_cfg(tmp_path), record=False)
    assert set(report["samplers"]) == {"dual-is2", "primal-gibbs"}
    for entry in report["samplers"].values():
        assert entry["abs_error"] >= 0
    with open(tmp_path / "compare.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["sample", "dual-is2_free_energy_per_site", "primal-gibbs_free_energy_per_site"]
    assert rows[-1][0] == "200"
    stored = json.loads((tmp_path / "compare.json").read_text())
    assert stored["exact"]["log_Z"] == pytest.approx(report["exact"]["log_Z"])


@pytest.mark.slow
def test_compare_hot_favors_primal_gibbs(tmp_path):
    report = compare(load_config(overrides={"preset": "compare-hot", "output": str(tmp_path)}), record=False)
    assert report["exact"]["free_energy_per_site"] == pytest.approx(0.76006, abs=1e-5)
    primal, dual = report["samplers"]["primal-gibbs"], report["samplers"]["dual-uniform"]
    assert primal["abs_error"] < 0.01
    assert primal["abs_error"] < dual["abs_error"]


@pytest.mark.slow
def test_compare_cold_reports_exact_reference(tmp_path):
    report = compare(load_config(overrides={"preset": "compare-cold", "output": str(tmp_path)}), record=False)
    assert report["exact"]["free_energy_per_site"] == pytest.approx(1.53048, abs=1e-5)
    assert set(report["samplers"]) == {"primal-sw", "dual-gibbs"}
    assert all("abs_error" in entry for entry in report["samplers"].values())
    assert report["samplers"]["dual-gibbs"]["abs_error"] < 0.01


def test_repeated_samplers_get_distinct_labels():
    runs = [RunSpec("dual", "is2"), RunSpec("dual", "is2"), RunSpec("primal", "sw")]
    assert _unique_labels(runs) == ["dual-is2", "dual-is2-2", "primal-sw"]


def test_oracle_matches_enumeration(tmp_path):
    cfg = _cfg(tmp_path)
    spec, params = cfg.instance()
    out = oracle(cfg)
    assert out["log_Z"] == pytest.approx(enumerate_Z(spec, params).log_Z)
    assert out["instance"]["n_sites"] == 6
    assert math.isfinite(out["free_energy_per_site"])


def test_dual_inspect(tmp_path):
    out = dual_inspect(_cfg(tmp_path))
    assert out["E"] == 13
    assert out["n_field_vars"] == 6


def test_partition_validate(tmp_path):
    report = partition_validate(_cfg(tmp_path, partition="alg1"))
    assert report["ok"]
    assert report["preset"] == "alg1"
    assert report["residual_conditions"] == ["sum(y) even"]
    assert report["promoted_bonds"] == []
    report = partition_validate(_cfg(tmp_path))
    assert report["preset"] == "alg2"
    assert report["residual_conditions"] == []
