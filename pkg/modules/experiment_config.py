"""
Experiment configuration.

Configs are flat YAML mappings of documented keys. A `preset:` key pulls in a
file from presets/; keys next to it override the preset, command-line flags
override both. DUALIS_SEED / DUALIS_OUTPUT / DUALIS_THREADS come from the
environment (or a .env file).
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv

from core.gf_solver import Preset
from core.lattice_model import (
    Boundary,
    Family,
    LatticeSpec,
    ModelParams,
    ParamDistribution,
    build_instance,
    build_lattice,
    comb_tree_mask,
    serpentine_tree_mask,
)

LOG = logging.getLogger("experiment_config")

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"

DOMAINS = ("dual", "primal")
DUAL_ALGORITHMS = ("is1", "is2", "potts", "uniform", "gibbs", "ais")
PRIMAL_SAMPLERS = ("uniform", "gibbs", "sw")
Q1_NORMALIZERS = ("restricted", "unrestricted")

KNOWN_KEYS = (
    "rows", "cols", "boundary", "family", "q", "J_A", "J_B", "H", "seed",
    "algorithm", "algorithms", "domain", "sampler", "L", "chains", "walkers", "burn_in",
    "ladder", "sweeps_per_level", "max_level_variance", "preset", "partition",
    "excluded_site", "custom_a", "tanh", "q1_normalizer", "output", "threads",
)

Origin = Tuple[Optional[str], Optional[int]]


class ConfigError(ValueError):
    """Invalid configuration; `line` points into the file that set the key."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        elif source:
            where = f"{source}: "
        else:
            where = ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class RunSpec:
    """One sampler to run: a domain and an algorithm name within it."""

    domain: str
    algorithm: str

    @property
    def label(self) -> str:
        return f"{self.domain}-{self.algorithm}"


@dataclass(frozen=True)
class ExperimentConfig:
    rows: int
    cols: int
    seed: int
    boundary: Boundary = Boundary.FREE
    family: Family = Family.ISING
    q: int = 2
    J_A: ParamDistribution = ParamDistribution.constant(1.0)
    J_B: ParamDistribution = ParamDistribution.constant(1.0)
    H: ParamDistribution = ParamDistribution.constant(0.0)
    domain: str = "dual"
    algorithm: str = "is2"
    sampler: str = "gibbs"
    algorithms: Tuple[RunSpec, ...] = ()
    L: int = 10_000
    chains: int = 1
    walkers: int = 1
    burn_in: int = 1000
    ladder: Optional[str] = None
    sweeps_per_level: int = 10
    max_level_variance: Optional[float] = None
    preset: Optional[str] = None
    partition: Optional[str] = None
    excluded_site: Optional[int] = None
    custom_a: Optional[Tuple[int, ...]] = None
    tanh: bool = False
    q1_normalizer: str = "restricted"
    output: str = "runs"
    threads: int = 1

    def runs(self) -> List[RunSpec]:
        if self.algorithms:
            return list(self.algorithms)
        if self.domain == "primal":
            return [RunSpec("primal", self.sampler)]
        return [RunSpec("dual", self.algorithm)]

    def partition_for(self, run: RunSpec) -> Preset:
        if self.partition is not None:
            return Preset(self.partition)
        return Preset.ALG1 if run.algorithm == "is1" else Preset.ALG2

    def lattice(self) -> LatticeSpec:
        return build_lattice(self.rows, self.cols, self.boundary)

    def b_mask(self, spec: LatticeSpec) -> np.ndarray:
        """Bonds whose couplings are drawn from J_B."""
        if self.partition == Preset.CHECKER.value:
            return serpentine_tree_mask(spec)
        return comb_tree_mask(spec)

    def seeds(self) -> Tuple[np.random.SeedSequence, List[np.random.SeedSequence]]:
        """(instance seed, one seed per chain); every sampler reuses the same chain seeds."""
        instance_ss, chains_ss = np.random.SeedSequence(self.seed).spawn(2)
        return instance_ss, chains_ss.spawn(self.chains)

    def instance(self) -> Tuple[LatticeSpec, ModelParams]:
        spec = self.lattice()
        instance_ss, _ = self.seeds()
        params = build_instance(
            spec, self.family, self.J_A, self.J_B, self.H, instance_ss, b_mask=self.b_mask(spec), q=self.q
        )
        return spec, params

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["boundary"] = self.boundary.value
        out["family"] = self.family.value
        for key in ("J_A", "J_B", "H"):
            out[key] = getattr(self, key).describe()
        out["algorithms"] = [r.label for r in self.algorithms]
        out["custom_a"] = list(self.custom_a) if self.custom_a is not None else None
        return out


# ---------------------------------------------------------------------------
# YAML reading
# ---------------------------------------------------------------------------

def read_yaml(path: Path | str) -> Tuple[Dict[str, Any], Dict[str, int]]:
    """Load a flat mapping and the line number of every key."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", source=str(path)) from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', None) or e}", line=line, source=str(path)) from None
    if data is None:
        return {}, {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of keys", line=1, source=str(path))
    lines: Dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, _ in node.value:
            lines[str(key_node.value)] = key_node.start_mark.line + 1
    for key in data:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key '{key}'", line=lines.get(str(key)), source=str(path))
    return data, lines


def preset_path(name: str) -> Path:
    return PRESET_DIR / f"{name}.yaml"


def available_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------

def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_distribution(value: Any) -> ParamDistribution:
    """number -> constant, [lo, hi] -> uniform, {explicit: [...]} -> explicit."""
    if _is_number(value):
        return ParamDistribution.constant(value)
    if isinstance(value, (list, tuple)):
        if len(value) != 2 or not all(_is_number(v) for v in value):
            raise ValueError(f"expected [lo, hi], got {value!r}")
        lo, hi = float(value[0]), float(value[1])
        if lo > hi:
            raise ValueError(f"range [{lo}, {hi}] has lo > hi")
        return ParamDistribution.uniform(lo, hi)
    if isinstance(value, dict) and set(value) == {"explicit"}:
        vals = value["explicit"]
        if not isinstance(vals, (list, tuple)) or not all(_is_number(v) for v in vals):
            raise ValueError("explicit needs a list of numbers")
        return ParamDistribution.explicit(vals)
    raise ValueError(f"expected a number, [lo, hi] or {{explicit: [...]}}, got {value!r}")


def _int(value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            value = int(value)
        else:
            raise ValueError(f"expected an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"must be >= {minimum}, got {value}")
    return int(value)


def _choice(value: Any, options: Tuple[str, ...]) -> str:
    text = str(value).strip().lower()
    if text not in options:
        raise ValueError(f"expected one of {', '.join(options)}; got {value!r}")
    return text


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "yes", "1", "on"):
        return True
    if text in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _run_spec(entry: Any) -> RunSpec:
    text = str(entry).strip().lower()
    domain, sep, algorithm = text.partition(":")
    if not sep:
        raise ValueError(f"algorithms entries look like 'dual:gibbs' or 'primal:sw', got {entry!r}")
    if domain == "dual":
        return RunSpec("dual", _choice(algorithm, DUAL_ALGORITHMS))
    if domain == "primal":
        return RunSpec("primal", _choice(algorithm, PRIMAL_SAMPLERS))
    raise ValueError(f"unknown domain '{domain}' in {entry!r}")


def _ladder(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(float(v)) for v in value)
    return str(value)


_PARSERS = {
    "rows": lambda v: _int(v, 1),
    "cols": lambda v: _int(v, 1),
    "seed": lambda v: _int(v, 0),
    "boundary": lambda v: Boundary(_choice(v, tuple(b.value for b in Boundary))),
    "family": lambda v: Family(_choice(v, tuple(f.value for f in Family))),
    "q": lambda v: _int(v, 2),
    "J_A": parse_distribution,
    "J_B": parse_distribution,
    "H": parse_distribution,
    "domain": lambda v: _choice(v, DOMAINS),
    "algorithm": lambda v: _choice(v, DUAL_ALGORITHMS),
    "sampler": lambda v: _choice(v, PRIMAL_SAMPLERS),
    "algorithms": lambda v: tuple(_run_spec(e) for e in (v if isinstance(v, (list, tuple)) else str(v).split(","))),
    "L": lambda v: _int(v, 1),
    "chains": lambda v: _int(v, 1),
    "walkers": lambda v: _int(v, 1),
    "burn_in": lambda v: _int(v, 0),
    "ladder": _ladder,
    "sweeps_per_level": lambda v: _int(v, 0),
    "max_level_variance": float,
    "preset": str,
    "partition": lambda v: _choice(v, tuple(p.value for p in Preset)),
    "excluded_site": lambda v: _int(v, 0),
    "custom_a": lambda v: tuple(_int(e, 0) for e in v),
    "tanh": _bool,
    "q1_normalizer": lambda v: _choice(v, Q1_NORMALIZERS),
    "output": str,
    "threads": lambda v: _int(v, 1),
}


def build_config(raw: Mapping[str, Any], origins: Optional[Mapping[str, Origin]] = None) -> ExperimentConfig:
    """Validate a merged key/value mapping into an ExperimentConfig."""
    origins = origins or {}

    def fail(key: Optional[str], message: str) -> ConfigError:
        source, line = origins.get(key, (None, None)) if key else (None, None)
        return ConfigError(message, line=line, source=source)

    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if key not in _PARSERS:
            raise fail(key, f"unknown key '{key}'")
        if value is None:
            continue
        try:
            values[key] = _PARSERS[key](value)
        except (ValueError, TypeError) as e:
            raise fail(key, f"{key}: {e}") from None

    for key in ("rows", "cols", "seed"):
        if key not in values:
            raise fail(None, f"missing required key '{key}'" + (" (no wall-clock seeding)" if key == "seed" else ""))

    family = values.get("family", Family.ISING)
    if family is Family.ISING:
        if values.get("q", 2) != 2:
            raise fail("q", "ising family has q = 2")
        values["q"] = 2
    elif "q" not in values:
        raise fail("family", "potts family needs q")

    runs = values.get("algorithms") or (
        (RunSpec("primal", values.get("sampler", "gibbs")),)
        if values.get("domain", "dual") == "primal"
        else (RunSpec("dual", values.get("algorithm", "is2")),)
    )
    for run in runs:
        if run.domain != "dual":
            if run.algorithm == "sw" and family is not Family.ISING:
                raise fail("algorithms" if "algorithms" in values else "sampler", "Swendsen-Wang needs the ising family")
            continue
        key = "algorithms" if "algorithms" in values else "algorithm"
        if family is Family.POTTS and run.algorithm in ("is1", "is2"):
            raise fail(key, f"{run.algorithm} is an Ising sampler; use 'potts' for the potts family")
        if family is Family.ISING and run.algorithm == "potts":
            raise fail(key, "the potts sampler needs family: potts")
    if values.get("partition") == Preset.CUSTOM.value and "custom_a" not in values:
        raise fail("partition", "partition: custom needs custom_a (list of A variable indices)")

    cfg = ExperimentConfig(**values)
    LOG.debug(f"[experiment_config] {cfg.rows}x{cfg.cols} {cfg.boundary.value} {cfg.family.value} runs={[r.label for r in cfg.runs()]}")
    return cfg


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _apply_env_overrides(cfg: Dict[str, Any], origins: Dict[str, Origin]) -> None:
    """Apply environment variable overrides to config."""
    if os.environ.get("DUALIS_SEED"):
        cfg["seed"] = os.environ["DUALIS_SEED"]
        origins["seed"] = ("DUALIS_SEED", None)
    if os.environ.get("DUALIS_OUTPUT"):
        cfg["output"] = os.environ["DUALIS_OUTPUT"]
        origins["output"] = ("DUALIS_OUTPUT", None)


def load_config(
    path: Optional[Path | str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    env_file: Optional[Path | str] = None,
) -> ExperimentConfig:
    """Merge preset, config file, environment and command-line values."""
    if env_file is not None:
        load_dotenv(env_file, override=False)
    else:
        load_dotenv(override=False)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged: Dict[str, Any] = {}
    origins: Dict[str, Origin] = {}

    file_raw: Dict[str, Any] = {}
    file_lines: Dict[str, int] = {}
    if path is not None:
        file_raw, file_lines = read_yaml(path)

    preset = overrides.get("preset") or file_raw.get("preset")
    if preset:
        p = preset_path(str(preset))
        if not p.exists():
            source, line = ("command line", None) if "preset" in overrides else (str(path), file_lines.get("preset"))
            raise ConfigError(
                f"unknown preset '{preset}' (available: {', '.join(available_presets())})", line=line, source=source
            )
        p_raw, p_lines = read_yaml(p)
        merged.update(p_raw)
        origins.update({k: (str(p), p_lines.get(k)) for k in p_raw})
        merged["preset"] = str(preset)

    merged.update(file_raw)
    origins.update({k: (str(path), file_lines.get(k)) for k in file_raw})
    _apply_env_overrides(merged, origins)
    merged.update(overrides)
    origins.update({k: ("command line", None) for k in overrides})
    # DUALIS_THREADS wins over --threads
    if os.environ.get("DUALIS_THREADS"):
        merged["threads"] = os.environ["DUALIS_THREADS"]
        origins["threads"] = ("DUALIS_THREADS", None)

    return build_config(merged, origins)
