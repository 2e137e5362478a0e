"""
Annealed importance sampling over strengthened B couplings.

Level v replaces every B-bond coupling J by J**alpha_v (alpha_0 = 1 is the
target model). A chain starts with an importance-sampling draw at the top
level V, then walks down to level 0, multiplying in the ratio of consecutive
dual weights and applying dual Gibbs sweeps invariant for each intermediate
level.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.dual_graph import DualGraph, dualize, duality_constant
from core.estimators_stats import EstimateTrace, TraceRecorder
from core.gf_solver import PartitionScheme, build_linear_map
from core.lattice_model import Family, LatticeSpec, ModelParams
from modules.dual_samplers import (
    AuxKind,
    GibbsKernel,
    ImportanceSampler,
    SamplerDiagnosticError,
    partition_meta,
    seed_meta,
)

LOG = logging.getLogger("ais")

DEFAULT_TARGET_J = 2.5
DEFAULT_RATIO = 1.25
LEVEL_VARIANCE_WARN = 10.0


class LadderError(ValueError):
    """Invalid annealing ladder."""


@dataclass(frozen=True)
class AnnealingLadder:
    exponents: Tuple[float, ...]
    transitions_per_level: int = 10

    def __post_init__(self) -> None:
        ex = tuple(float(a) for a in self.exponents)
        object.__setattr__(self, "exponents", ex)
        if len(ex) < 2:
            raise LadderError("Ladder needs at least two exponents (V >= 1)")
        if ex[0] != 1.0:
            raise LadderError(f"Ladder must start at alpha_0 = 1, got {ex[0]}")
        if any(b < a for a, b in zip(ex, ex[1:])):
            raise LadderError(f"Ladder exponents must be nondecreasing: {ex}")
        if self.transitions_per_level < 0:
            raise LadderError("transitions_per_level must be >= 0")

    @property
    def levels(self) -> int:
        return len(self.exponents) - 1

    @classmethod
    def parse(cls, text: str, transitions_per_level: int = 10) -> "AnnealingLadder":
        try:
            ex = tuple(float(t) for t in text.split(",") if t.strip())
        except ValueError:
            raise LadderError(f"Cannot parse ladder '{text}' (expected comma-separated numbers)") from None
        return cls(exponents=ex, transitions_per_level=transitions_per_level)

    @classmethod
    def geometric(
        cls,
        J_B: np.ndarray,
        transitions_per_level: int = 10,
        target: float = DEFAULT_TARGET_J,
        ratio: float = DEFAULT_RATIO,
        levels: Optional[int] = None,
    ) -> "AnnealingLadder":
        """alpha_v = r**v with min(J_B)**alpha_V >= target."""
        J_B = np.asarray(J_B, dtype=np.float64)
        if J_B.size == 0:
            raise LadderError("No B bonds to anneal")
        j_min = float(J_B.min())
        if j_min <= 1.0:
            raise LadderError(
                f"Default ladder needs min J_B > 1 (got {j_min:.4g}); pass an explicit ladder"
            )
        alpha_top = max(1.0, math.log(target) / math.log(j_min))
        if levels is None:
            levels = max(1, math.ceil(math.log(alpha_top) / math.log(ratio))) if alpha_top > 1.0 else 1
        r = alpha_top ** (1.0 / levels)
        return cls(exponents=tuple(r ** v for v in range(levels + 1)), transitions_per_level=transitions_per_level)


def level_params(params: ModelParams, b_bonds: np.ndarray, alpha: float) -> ModelParams:
    J = np.array(params.couplings, dtype=np.float64)
    J[b_bonds] = J[b_bonds] ** alpha
    return params.with_couplings(J)


def ais_estimate(
    spec: LatticeSpec,
    params: ModelParams,
    scheme: PartitionScheme,
    ladder: AnnealingLadder,
    L_chains: int,
    seed,
    batch: int = 1024,
    max_level_variance: Optional[float] = None,
) -> EstimateTrace:
    """AIS estimate of log Z; one trace sample per chain."""
    if L_chains < 1:
        raise ValueError(f"L_chains must be >= 1, got {L_chains}")
    base = dualize(spec, params)
    if base.tanh_form:
        raise LadderError("AIS runs on raw dual tables")
    lmap = build_linear_map(base, scheme)
    b_bonds = np.asarray([v for v in scheme.b_vars if v < base.n_bond_vars], dtype=np.int64)

    duals: List[DualGraph] = [dualize(spec, level_params(params, b_bonds, a)) for a in ladder.exponents]
    log_tables = [d.log_tables() for d in duals]
    top = duals[-1]
    if base.family is Family.POTTS:
        kind = AuxKind.POTTS
    else:
        kind = AuxKind.Q2 if lmap.residual.shape[0] == 0 else AuxKind.Q1
    sampler = ImportanceSampler(top, scheme, kind, lmap)
    kernel = GibbsKernel(base, lmap)
    rng = np.random.default_rng(seed)

    trace = EstimateTrace(
        sampler="ais", seed=seed_meta(seed), L=L_chains, n_sites=spec.n_sites, offset=-duality_constant(base)
    )
    rec = TraceRecorder(trace)
    V = ladder.levels
    inc_sum = np.zeros(V)
    inc_sq = np.zeros(V)
    started = time.time()
    LOG.info(
        f"[ais] V={V} alphas={[round(a, 4) for a in ladder.exponents]} sweeps/level={ladder.transitions_per_level} "
        f"chains={L_chains} kind={kind.value}"
    )
    while not rec.done:
        n = min(batch, rec.remaining())
        X, log_lam = sampler.draw(rng, n)
        log_w = log_lam + sampler.aux.log_Zq
        for v in range(V - 1, -1, -1):
            Xb = X[b_bonds]
            inc = (log_tables[v][b_bonds[:, None], Xb] - log_tables[v + 1][b_bonds[:, None], Xb]).sum(axis=0)
            log_w += inc
            inc_sum[v] += inc.sum()
            inc_sq[v] += (inc * inc).sum()
            if v > 0:
                for _ in range(ladder.transitions_per_level):
                    kernel.sweep(X, log_tables[v], rng)
        rec.push(log_w)

    count = trace.acc.count
    level_var = inc_sq / count - (inc_sum / count) ** 2
    for v in range(V):
        LOG.debug(f"[ais] level {v}: var(log ratio) = {level_var[v]:.4g}")
    worst = float(level_var.max()) if V else 0.0
    if max_level_variance is not None and worst > max_level_variance:
        raise SamplerDiagnosticError(
            f"Per-level weight variance {worst:.3g} exceeds {max_level_variance:.3g}; ladder too short, add levels"
        )
    if worst > LEVEL_VARIANCE_WARN:
        LOG.warning(f"[ais] ⚠️ per-level log-weight variance up to {worst:.3g}; consider more levels")

    trace.metadata.update(partition_meta(base, scheme, lmap))
    trace.metadata.update(
        {
            "ladder": list(ladder.exponents),
            "sweeps_per_level": ladder.transitions_per_level,
            "level_log_weight_variance": level_var.tolist(),
            "top_level_kind": kind.value,
            "runtime_s": round(time.time() - started, 3),
        }
    )
    LOG.info(f"[ais] ✅ (1/N) log Z = {trace.free_energy_per_site:.6f} (SE {trace.std_err:.3g})")
    return trace
