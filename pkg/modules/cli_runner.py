"""
Batch experiment driver behind the command line.

run() draws one model instance from the config, runs every requested sampler
on it with `chains` independent seeded chains, and writes

    <output>/<sampler>/chain_<i>.csv   one running-estimate trace per chain
    <output>/summary.json              merged estimates and per-chain summaries
    <output>/timing.json               wall-clock runtimes
    <output>/runs.db                   run ledger (appended)

summary.json and the traces depend only on the config, so repeated runs with
the same seed are byte-identical; timings live in timing.json and the ledger.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from core.dual_graph import DualGraph, dualize, inspect, tanh_tables
from core.estimators_stats import EstimateTrace, merge_traces
from core.gf_solver import PartitionScheme, build_linear_map, build_preset, validate_partition
from core.lattice_model import EnumerationBudgetError, LatticeSpec, ModelParams
from modules.ais import AnnealingLadder, ais_estimate
from modules.dual_samplers import dual_gibbs_estimate, is_estimate, uniform_dual_estimate
from modules.experiment_config import ExperimentConfig, RunSpec
from modules.primal_mc import ENUMERATION_BUDGET, enumerate_Z, method1_uniform_estimate, method2_reciprocal_estimate
from modules.run_ledger import RunLedger, RunRecord

LOG = logging.getLogger("cli_runner")

# Exact reference included in summaries when q^N stays within the enumeration budget.
SUMMARY_EXACT_BUDGET = ENUMERATION_BUDGET

ChainFn = Callable[[np.random.SeedSequence], EstimateTrace]


def json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def json_safe(value: Any) -> Any:
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        json.dump(json_safe(payload), f, indent=2, sort_keys=True, default=json_default, allow_nan=False)
        f.write("\n")
    return path


# ---------------------------------------------------------------------------
# Sampler dispatch
# ---------------------------------------------------------------------------

def build_dual(cfg: ExperimentConfig, spec: LatticeSpec, params: ModelParams, run: RunSpec) -> DualGraph:
    dual = dualize(spec, params)
    if cfg.tanh and run.algorithm != "ais":
        dual = tanh_tables(dual)
    return dual


def build_scheme(cfg: ExperimentConfig, dual: DualGraph, run: RunSpec) -> PartitionScheme:
    return build_preset(dual, cfg.partition_for(run), excluded_site=cfg.excluded_site, custom_a=cfg.custom_a)


def chain_runner(cfg: ExperimentConfig, spec: LatticeSpec, params: ModelParams, run: RunSpec) -> ChainFn:
    """Resolve everything shared between chains once; return the per-chain call."""
    if run.domain == "primal":
        if run.algorithm == "uniform":
            return lambda seed: method1_uniform_estimate(spec, params, cfg.L, seed)
        return lambda seed: method2_reciprocal_estimate(
            spec, params, run.algorithm, cfg.L, burn_in=cfg.burn_in, seed=seed, walkers=cfg.walkers
        )

    dual = build_dual(cfg, spec, params, run)
    scheme = build_scheme(cfg, dual, run)
    if run.algorithm == "ais":
        if cfg.ladder:
            ladder = AnnealingLadder.parse(cfg.ladder, cfg.sweeps_per_level)
        else:
            b_bonds = [v for v in scheme.b_vars if v < dual.n_bond_vars]
            ladder = AnnealingLadder.geometric(params.couplings[b_bonds], cfg.sweeps_per_level)
        return lambda seed: ais_estimate(
            spec, params, scheme, ladder, cfg.L, seed, max_level_variance=cfg.max_level_variance
        )

    lmap = build_linear_map(dual, scheme)
    if run.algorithm in ("is1", "is2", "potts"):
        return lambda seed: is_estimate(
            dual, scheme, run.algorithm, cfg.L, seed, lmap=lmap, q1_normalizer=cfg.q1_normalizer
        )
    if run.algorithm == "uniform":
        return lambda seed: uniform_dual_estimate(dual, scheme, cfg.L, seed, lmap=lmap)
    return lambda seed: dual_gibbs_estimate(
        dual, scheme, cfg.L, cfg.burn_in, seed, lmap=lmap, walkers=cfg.walkers
    )


def run_chains(fn: ChainFn, seeds: List[np.random.SeedSequence], threads: int) -> List[EstimateTrace]:
    """Run chains in parallel; results come back in chain order."""
    if threads <= 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def exact_reference(spec: LatticeSpec, params: ModelParams) -> Optional[Dict[str, Any]]:
    if params.q ** spec.n_sites > SUMMARY_EXACT_BUDGET:
        return None
    try:
        return enumerate_Z(spec, params, budget=SUMMARY_EXACT_BUDGET).to_dict()
    except EnumerationBudgetError:
        return None


# ---------------------------------------------------------------------------
# run / compare
# ---------------------------------------------------------------------------

def _instance_meta(spec: LatticeSpec, params: ModelParams) -> Dict[str, Any]:
    return {
        "rows": spec.rows,
        "cols": spec.cols,
        "boundary": spec.boundary.value,
        "family": params.family.value,
        "q": params.q,
        "n_sites": spec.n_sites,
        "n_bonds": spec.n_bonds,
        "J_mean": float(np.mean(params.couplings)) if spec.n_bonds else 0.0,
        "H_mean": float(np.mean(params.fields)),
    }


def _unique_labels(runs: List[RunSpec]) -> List[str]:
    """Sampler labels, with -2, -3, ... appended to repeats."""
    seen: Dict[str, int] = {}
    labels = []
    for r in runs:
        seen[r.label] = seen.get(r.label, 0) + 1
        labels.append(r.label if seen[r.label] == 1 else f"{r.label}-{seen[r.label]}")
    return labels


def run(cfg: ExperimentConfig, record: bool = True) -> Dict[str, Any]:
    """Run every configured sampler on one instance and write the outputs."""
    started = time.time()
    spec, params = cfg.instance()
    _, chain_seeds = cfg.seeds()
    out_dir = Path(cfg.output)
    runs = cfg.runs()
    LOG.info(
        f"[cli_runner] {spec.rows}x{spec.cols} {spec.boundary.value} {params.family.value} seed={cfg.seed} "
        f"samplers={[r.label for r in runs]} chains={cfg.chains} threads={cfg.threads} -> {out_dir}"
    )

    samplers: Dict[str, Any] = {}
    timing: Dict[str, Any] = {}
    all_traces: Dict[str, List[EstimateTrace]] = {}
    for r, label in zip(runs, _unique_labels(runs)):
        t0 = time.time()
        fn = chain_runner(cfg, spec, params, r)
        traces = run_chains(fn, chain_seeds, cfg.threads)
        elapsed = round(time.time() - t0, 3)
        chain_summaries = []
        for i, trace in enumerate(traces):
            trace.metadata.pop("runtime_s", None)
            trace.write_csv(out_dir / label / f"chain_{i}.csv")
            chain_summaries.append(trace.summary())
        merged = merge_traces(traces)
        samplers[label] = {"merged": merged, "chains": chain_summaries}
        timing[label] = {"runtime_s": elapsed}
        all_traces[label] = traces
        se = merged["std_err"]
        LOG.info(
            f"[cli_runner] ✅ {label}: (1/N) log Z = {merged['free_energy_per_site']:.6f}"
            + (f" (SE {se:.3g})" if se is not None else "")
            + f" in {elapsed:.1f}s"
        )

    summary = {
        "config": cfg.to_dict(),
        "instance": _instance_meta(spec, params),
        "exact": exact_reference(spec, params),
        "samplers": samplers,
    }
    summary["config"].pop("output", None)
    summary["config"].pop("threads", None)
    write_json(out_dir / "summary.json", summary)
    timing["total_s"] = round(time.time() - started, 3)
    write_json(out_dir / "timing.json", timing)

    if record:
        _record(cfg, spec, params, samplers, timing, out_dir)
    return {"summary": summary, "traces": all_traces, "timing": timing}


def _record(
    cfg: ExperimentConfig,
    spec: LatticeSpec,
    params: ModelParams,
    samplers: Dict[str, Any],
    timing: Dict[str, Any],
    out_dir: Path,
) -> None:
    ledger = RunLedger(str(out_dir / "runs.db"))
    try:
        run_id = f"{int(time.time())}-{cfg.seed}"
        for label, block in samplers.items():
            merged = block["merged"]
            ledger.record(
                RunRecord(
                    run_id=run_id,
                    preset=cfg.preset or "custom",
                    sampler=label,
                    rows=spec.rows,
                    cols=spec.cols,
                    family=params.family.value,
                    seed=cfg.seed,
                    chains=merged["chains"],
                    samples=merged["samples"],
                    log_Z=merged["log_Z"],
                    free_energy_per_site=merged["free_energy_per_site"],
                    std_err=merged["std_err"],
                    runtime_s=timing[label]["runtime_s"],
                    summary=json_safe(merged),
                )
            )
    finally:
        ledger.close()


def _side_by_side(traces: Dict[str, List[EstimateTrace]]) -> Tuple[List[str], List[List[Any]]]:
    labels = list(traces)
    by_sample: Dict[int, Dict[str, float]] = {}
    for label in labels:
        for sample, _, _, fe in traces[label][0].rows:
            by_sample.setdefault(sample, {})[label] = fe
    header = ["sample"] + [f"{label}_free_energy_per_site" for label in labels]
    rows = [[s] + [repr(by_sample[s].get(label, math.nan)) for label in labels] for s in sorted(by_sample)]
    return header, rows


def compare(cfg: ExperimentConfig, record: bool = True) -> Dict[str, Any]:
    """Run the configured samplers side by side on the same instance."""
    if len(cfg.runs()) < 2:
        LOG.warning("[cli_runner] ⚠️ compare with a single sampler; set 'algorithms' to compare several")
    result = run(cfg, record=record)
    header, rows = _side_by_side(result["traces"])
    path = Path(cfg.output) / "compare.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

    exact = result["summary"]["exact"]
    report: Dict[str, Any] = {"exact": exact, "samplers": {}}
    for label, block in result["summary"]["samplers"].items():
        merged = block["merged"]
        entry = {"free_energy_per_site": merged["free_energy_per_site"], "std_err": merged["std_err"]}
        if exact is not None:
            entry["abs_error"] = abs(merged["free_energy_per_site"] - exact["free_energy_per_site"])
        report["samplers"][label] = entry
    write_json(Path(cfg.output) / "compare.json", report)
    LOG.info(f"[cli_runner] compare written to {path}")
    return report


# ---------------------------------------------------------------------------
# Inspection helpers
# ---------------------------------------------------------------------------

def oracle(cfg: ExperimentConfig) -> Dict[str, Any]:
    spec, params = cfg.instance()
    result = enumerate_Z(spec, params)
    return {"instance": _instance_meta(spec, params), **result.to_dict()}


def dual_inspect(cfg: ExperimentConfig) -> Dict[str, Any]:
    spec, params = cfg.instance()
    return inspect(build_dual(cfg, spec, params, cfg.runs()[0]))


def partition_validate(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Report for the configured partition; build_preset may promote B bonds first."""
    spec, params = cfg.instance()
    r = cfg.runs()[0]
    dual = build_dual(cfg, spec, params, r)
    scheme = build_scheme(cfg, dual, r)
    report = validate_partition(dual, scheme).to_dict()
    report["preset"] = scheme.preset.value
    report["excluded_site"] = scheme.excluded_field_var
    report["promoted_bonds"] = list(scheme.promoted)
    return report
