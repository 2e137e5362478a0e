import os

import pytest

from core.gf_solver import Preset
from core.lattice_model import Boundary, DistKind, Family
from modules.experiment_config import (
    ConfigError,
    RunSpec,
    available_presets,
    build_config,
    load_config,
    parse_distribution,
    read_yaml,
)

BASE = {"rows": 3, "cols": 3, "seed": 1}


def _write(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_unknown_key_reports_line(tmp_path):
    path = _write(tmp_path, "rows: 3\ncols: 3\nseed: 1\nbogus: 2\n")
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 4
    assert "bogus" in str(exc.value)
    assert f"{path}:4:" in str(exc.value)


def test_bad_value_reports_line(tmp_path):
    path = _write(tmp_path, "rows: 3\ncols: 3\nseed: 1\nboundary: twisted\n")
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 4


def test_read_yaml_lines(tmp_path):
    data, lines = read_yaml(_write(tmp_path, "# comment\nrows: 2\ncols: 5\n"))
    assert data == {"rows": 2, "cols": 5}
    assert lines == {"rows": 2, "cols": 3}


def test_parse_distribution():
    assert parse_distribution(0.5).kind is DistKind.CONSTANT
    d = parse_distribution([0.1, 1.0])
    assert d.kind is DistKind.UNIFORM and (d.lo, d.hi) == (0.1, 1.0)
    d = parse_distribution({"explicit": [0.1, 0.2]})
    assert d.kind is DistKind.EXPLICIT and d.values == (0.1, 0.2)
    for bad in ([1.0, 0.5], [1, 2, 3], "abc", {"explicit": "x"}):
        with pytest.raises(ValueError):
            parse_distribution(bad)


def test_defaults():
    cfg = build_config(BASE)
    assert cfg.boundary is Boundary.FREE
    assert cfg.family is Family.ISING
    assert cfg.q == 2
    assert cfg.runs() == [RunSpec("dual", "is2")]
    assert cfg.partition_for(cfg.runs()[0]) is Preset.ALG2


def test_required_keys():
    with pytest.raises(ConfigError, match="seed"):
        build_config({"rows": 3, "cols": 3})
    with pytest.raises(ConfigError, match="rows"):
        build_config({"cols": 3, "seed": 1})


def test_family_checks():
    with pytest.raises(ConfigError):
        build_config({**BASE, "q": 3})
    with pytest.raises(ConfigError):
        build_config({**BASE, "family": "potts"})
    with pytest.raises(ConfigError):
        build_config({**BASE, "family": "potts", "q": 3, "algorithm": "is2"})
    with pytest.raises(ConfigError):
        build_config({**BASE, "algorithm": "potts"})
    with pytest.raises(ConfigError):
        build_config({**BASE, "family": "potts", "q": 3, "domain": "primal", "sampler": "sw"})
    cfg = build_config({**BASE, "family": "potts", "q": 4, "algorithm": "potts"})
    assert cfg.q == 4


def test_custom_partition_needs_variables():
    with pytest.raises(ConfigError):
        build_config({**BASE, "partition": "custom"})
    cfg = build_config({**BASE, "partition": "custom", "custom_a": [0, 2]})
    assert cfg.custom_a == (0, 2)


def test_algorithms_list_and_string():
    cfg = build_config({**BASE, "algorithms": ["primal:sw", "dual:gibbs"]})
    assert [r.label for r in cfg.runs()] == ["primal-sw", "dual-gibbs"]
    cfg = build_config({**BASE, "algorithms": "dual:is1,dual:uniform"})
    assert [r.label for r in cfg.runs()] == ["dual-is1", "dual-uniform"]
    assert cfg.partition_for(cfg.runs()[0]) is Preset.ALG1
    with pytest.raises(ConfigError):
        build_config({**BASE, "algorithms": ["gibbs"]})


def test_primal_domain():
    cfg = build_config({**BASE, "domain": "primal", "sampler": "uniform"})
    assert cfg.runs() == [RunSpec("primal", "uniform")]


def test_every_preset_loads():
    names = available_presets()
    assert {"ising30-field", "ising30-field-strong", "ising30-cold", "ising30-mixed", "potts4-field",
            "ising5-hot-primal", "ising5-hot-dual", "ising5-cold-primal", "ising5-cold-dual"} <= set(names)
    for name in names:
        cfg = load_config(overrides={"preset": name})
        assert cfg.preset == name


def test_cold_dual_preset():
    cfg = load_config(overrides={"preset": "ising5-cold-dual"})
    assert (cfg.rows, cfg.cols, cfg.boundary) == (5, 5, Boundary.PERIODIC)
    assert cfg.J_A.value == 0.75
    assert [r.label for r in cfg.runs()] == ["dual-gibbs", "dual-uniform"]


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        load_config(overrides={"preset": "nope"})


def test_precedence(tmp_path, monkeypatch):
    path = _write(tmp_path, "preset: ising5-cold-dual\nseed: 5\nL: 50\noutput: from-file\n")
    cfg = load_config(path)
    assert (cfg.seed, cfg.L, cfg.rows, cfg.output) == (5, 50, 5, "from-file")

    monkeypatch.setenv("DUALIS_SEED", "42")
    monkeypatch.setenv("DUALIS_OUTPUT", "from-env")
    cfg = load_config(path)
    assert (cfg.seed, cfg.output) == (42, "from-env")

    cfg = load_config(path, overrides={"seed": 7, "output": "from-cli", "rows": None})
    assert (cfg.seed, cfg.output, cfg.rows) == (7, "from-cli", 5)


def test_threads_env_wins_over_cli(monkeypatch):
    monkeypatch.setenv("DUALIS_THREADS", "3")
    cfg = load_config(overrides={**BASE, "threads": 8})
    assert cfg.threads == 3


def test_env_file(tmp_path):
    env = _write(tmp_path, "DUALIS_SEED=99\n", name="test.env")
    cfg = load_config(overrides={"rows": 2, "cols": 2}, env_file=env)
    assert cfg.seed == 99
    os.environ.pop("DUALIS_SEED", None)


def test_seeds_are_stable():
    cfg = build_config({**BASE, "chains": 3})
    _, a = cfg.seeds()
    _, b = cfg.seeds()
    assert len(a) == 3
    assert [s.generate_state(1)[0] for s in a] == [s.generate_state(1)[0] for s in b]
    s1, p1 = cfg.instance()
    s2, p2 = cfg.instance()
    assert (p1.couplings == p2.couplings).all()


def test_to_dict_is_plain():
    cfg = build_config({**BASE, "J_A": [0.1, 1.0], "algorithms": ["dual:gibbs"]})
    d = cfg.to_dict()
    assert d["J_A"] == "U[0.1, 1]"
    assert d["algorithms"] == ["dual-gibbs"]
    assert d["boundary"] == "free"
