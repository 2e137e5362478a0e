import pytest

from modules.run_ledger import RunLedger, RunRecord


def _record(run_id, sampler="dual-is2", preset="ising5-cold-dual", fe=0.5, runtime=1.0, std_err=0.01):
    return RunRecord(
        run_id=run_id,
        preset=preset,
        sampler=sampler,
        rows=5,
        cols=5,
        family="ising",
        seed=13,
        chains=2,
        samples=200,
        log_Z=25 * fe,
        free_energy_per_site=fe,
        std_err=std_err,
        runtime_s=runtime,
        summary={"sampler": sampler, "log_Z": 25 * fe},
    )


@pytest.fixture
def ledger(tmp_path):
    ledger = RunLedger(str(tmp_path / "nested" / "runs.db"))
    yield ledger
    ledger.close()


def test_creates_directory(tmp_path, ledger):
    assert (tmp_path / "nested" / "runs.db").exists()


def test_stats_aggregate_per_sampler(ledger):
    ledger.record(_record("a", fe=0.4, runtime=1.0))
    ledger.record(_record("b", fe=0.6, runtime=3.0))
    ledger.record(_record("c", sampler="primal-gibbs", fe=0.55, std_err=None))
    stats = ledger.get_stats()
    assert [(s["preset"], s["sampler"]) for s in stats] == [
        ("ising5-cold-dual", "dual-is2"),
        ("ising5-cold-dual", "primal-gibbs"),
    ]
    s = stats[0]
    assert s["runs"] == 2
    assert s["mean_fe"] == pytest.approx(0.5)
    assert (s["min_fe"], s["max_fe"]) == (0.4, 0.6)
    assert s["avg_runtime_s"] == pytest.approx(2.0)


def test_stats_filters(ledger):
    ledger.record(_record("a"))
    ledger.record(_record("b", preset="ising30-field"))
    ledger.record(_record("c", sampler="dual-gibbs"))
    assert [s["sampler"] for s in ledger.get_stats(sampler="dual-gibbs")] == ["dual-gibbs"]
    assert [s["preset"] for s in ledger.get_stats(preset="ising30-field")] == ["ising30-field"]
    assert ledger.get_stats(sampler="dual-is2", preset="ising30-field")[0]["runs"] == 1


def test_recent_runs_newest_first(ledger):
    for i in range(4):
        ledger.record(_record(f"run-{i}"))
    recent = ledger.get_recent_runs(limit=2)
    assert [r["run_id"] for r in recent] == ["run-3", "run-2"]
    assert '"log_Z": 12.5' in recent[0]["summary_json"]
    assert recent[0]["std_err"] == 0.01


def test_closed_ledger_refuses_writes(tmp_path):
    ledger = RunLedger(str(tmp_path / "runs.db"))
    ledger.close()
    with pytest.raises(RuntimeError):
        ledger.record(_record("a"))
