"""
Dual Forney factor graph of an Ising / Potts lattice model.

Dual variables are numbered bond-duals first (bond order), then field-duals
(site order). Every site carries one mod-q sum constraint: the field-dual of
the site with coefficient +1, and each incident bond-dual with coefficient +1
at the lower endpoint and -1 at the higher one.

With the factor tables below,

    log Z_d - log Z = (2 * n_bond_vars + n_field_vars - N) * log q,

which is what duality_constant returns.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from core.lattice_model import EnumerationBudgetError, Family, LatticeSpec, ModelParams, check_params

LOG = logging.getLogger("dual_graph")

ENUMERATION_BUDGET = 2 ** 24
_CHUNK = 2 ** 18


class DualizationError(ValueError):
    """Model cannot be dualized with nonnegative tables."""


class InvalidDualConfig(ValueError):
    """A dual configuration violates at least one site constraint."""


@dataclass(frozen=True)
class DualConfig:
    z: np.ndarray
    y: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.z, dtype=np.int64), np.asarray(self.y, dtype=np.int64)])


@dataclass(frozen=True)
class DualGraph:
    spec: LatticeSpec
    family: Family
    q: int
    n_bond_vars: int
    n_field_vars: int
    incidence: sparse.csr_matrix
    gamma_tables: np.ndarray
    lambda_tables: np.ndarray
    log_scale: float
    fields: np.ndarray
    couplings: np.ndarray
    tanh_form: bool = False

    @property
    def n_sites(self) -> int:
        return self.spec.n_sites

    @property
    def n_vars(self) -> int:
        return self.n_bond_vars + self.n_field_vars

    @property
    def edge_count(self) -> int:
        return self.n_vars

    def field_var(self, site: int) -> int:
        if not self.n_field_vars:
            raise DualizationError("This dual graph has no field variables")
        return self.n_bond_vars + site

    def is_field_var(self, v: int) -> bool:
        return v >= self.n_bond_vars

    def site_constraints(self) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
        """Per site: tuple of (variable, coefficient mod q)."""
        C = self.incidence.tocsr()
        out = []
        for m in range(self.n_sites):
            lo, hi = C.indptr[m], C.indptr[m + 1]
            out.append(tuple((int(v), int(c)) for v, c in zip(C.indices[lo:hi], C.data[lo:hi])))
        return tuple(out)

    def tables(self) -> np.ndarray:
        """Factor table per dual variable, shape (n_vars, q)."""
        if self.n_field_vars:
            return np.vstack([self.gamma_tables, self.lambda_tables])
        return self.gamma_tables

    def log_tables(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.tables())

    def is_valid(self, x: np.ndarray) -> np.ndarray:
        """Constraint check for stacked configs, shape (n_vars,) or (n_vars, n)."""
        x = np.asarray(x, dtype=np.int64)
        if self.n_sites == 0 or self.incidence.shape[1] == 0:
            return np.ones(x.shape[1:], dtype=bool) if x.ndim > 1 else np.bool_(True)
        s = np.asarray(self.incidence @ x) % self.q
        return np.all(s == 0, axis=0)

    def log_weight(self, x: np.ndarray) -> np.ndarray:
        """Log table product (no validity check, no log_scale) of stacked configs."""
        x = np.asarray(x, dtype=np.int64)
        lt = self.log_tables()
        if x.ndim == 1:
            return lt[np.arange(self.n_vars), x].sum()
        return lt[np.arange(self.n_vars)[:, None], x].sum(axis=0)


def _ising_tables(J: np.ndarray, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gamma = np.stack([4.0 * np.cosh(J), 4.0 * np.sinh(J)], axis=1)
    lam = np.stack([2.0 * np.cosh(H), -2.0 * np.sinh(H)], axis=1)
    return gamma, lam


def _potts_tables(J: np.ndarray, H: np.ndarray, q: int) -> Tuple[np.ndarray, np.ndarray]:
    eJ = np.exp(J)
    gamma = np.empty((J.size, q))
    gamma[:, 0] = q * (eJ + q - 1)
    gamma[:, 1:] = (q * (eJ - 1))[:, None]
    eH = np.exp(H)
    lam = np.empty((H.size, q))
    lam[:, 0] = eH + q - 1
    lam[:, 1:] = (eH - 1)[:, None]
    return gamma, lam


def dualize(spec: LatticeSpec, params: ModelParams) -> DualGraph:
    """Build the dual graph.

    Ising fields must share one sign (zeros allowed); positive fields are
    flipped to -H, which leaves Z unchanged under the global spin flip.
    """
    check_params(spec, params)
    J = params.couplings
    if np.any(J < 0):
        raise DualizationError(f"Coupling must be nonnegative for dualization (min J = {J.min():.6g})")
    q = params.q
    if params.family is Family.ISING:
        H = np.array(params.fields, dtype=np.float64)
        if np.any(H > 0) and np.any(H < 0):
            raise DualizationError(
                f"Ising fields of mixed sign have negative dual tables (H in [{H.min():.6g}, {H.max():.6g}]); "
                "use a field distribution of one sign"
            )
        if np.any(H > 0):
            H = -H
        gamma, lam = _ising_tables(J, H)
    else:
        H = params.fields
        if np.any(H < 0):
            raise DualizationError(f"Potts field must be nonnegative (min H = {H.min():.6g})")
        gamma, lam = _potts_tables(J, H, q)

    with_field = params.has_field
    n_bond = spec.n_bonds
    n_field = spec.n_sites if with_field else 0

    rows, cols, data = [], [], []
    for b, (k, l) in enumerate(spec.bonds):
        rows += [k, l]
        cols += [b, b]
        data += [1, q - 1]
    for m in range(n_field):
        rows.append(m)
        cols.append(n_bond + m)
        data.append(1)
    incidence = sparse.csr_matrix(
        (np.asarray(data, dtype=np.int64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(spec.n_sites, n_bond + n_field),
    )
    incidence.sum_duplicates()
    incidence.data %= q
    incidence.eliminate_zeros()

    lam_tables = lam if with_field else np.zeros((0, q))
    for arr in (gamma, lam_tables, J, H):
        arr.setflags(write=False)
    if np.any(gamma < 0) or np.any(lam_tables < 0):
        raise DualizationError("Negative dual table entry; model is not ferromagnetic")

    dual = DualGraph(
        spec=spec,
        family=params.family,
        q=q,
        n_bond_vars=n_bond,
        n_field_vars=n_field,
        incidence=incidence,
        gamma_tables=gamma,
        lambda_tables=lam_tables,
        log_scale=0.0,
        fields=np.asarray(H),
        couplings=np.asarray(J),
    )
    LOG.debug(f"[dual_graph] dualized {spec.rows}x{spec.cols} {params.family.value}: E={dual.edge_count}")
    return dual


def tanh_tables(dual: DualGraph) -> DualGraph:
    """Ising tables normalized to (1, tanh J) and (1, tanh |H|), scale moved to log_scale."""
    if dual.family is not Family.ISING:
        raise DualizationError("tanh form is only defined for Ising duals")
    if dual.tanh_form:
        return dual
    J = dual.couplings
    H = np.abs(dual.fields)
    gamma = np.stack([np.ones_like(J), np.tanh(J)], axis=1)
    scale = float(np.sum(np.log(4.0 * np.cosh(J))))
    if dual.n_field_vars:
        lam = np.stack([np.ones_like(H), np.tanh(H)], axis=1)
        scale += float(np.sum(np.log(2.0 * np.cosh(H))))
    else:
        lam = np.zeros((0, 2))
    gamma.setflags(write=False)
    lam.setflags(write=False)
    return DualGraph(
        spec=dual.spec,
        family=dual.family,
        q=dual.q,
        n_bond_vars=dual.n_bond_vars,
        n_field_vars=dual.n_field_vars,
        incidence=dual.incidence,
        gamma_tables=gamma,
        lambda_tables=lam,
        log_scale=dual.log_scale + scale,
        fields=dual.fields,
        couplings=dual.couplings,
        tanh_form=True,
    )


def eval_dual_weight(dual: DualGraph, config: DualConfig) -> float:
    """Log dual weight of a valid configuration, log_scale included."""
    z = np.asarray(config.z, dtype=np.int64).reshape(-1)
    y = np.asarray(config.y, dtype=np.int64).reshape(-1)
    if z.size != dual.n_bond_vars or y.size != dual.n_field_vars:
        raise ValueError(
            f"DualConfig shape mismatch: z has {z.size} (expected {dual.n_bond_vars}), "
            f"y has {y.size} (expected {dual.n_field_vars})"
        )
    x = np.concatenate([z, y])
    if x.size and (x.min() < 0 or x.max() >= dual.q):
        raise ValueError(f"Dual symbols must lie in 0..{dual.q - 1}")
    if not dual.is_valid(x):
        bad = np.flatnonzero(np.asarray(dual.incidence @ x) % dual.q)
        raise InvalidDualConfig(f"Site constraints violated at sites {bad.tolist()}")
    return float(dual.log_weight(x)) + dual.log_scale


def duality_constant(dual: DualGraph) -> float:
    """log Z_d - log Z for this construction."""
    return (2 * dual.n_bond_vars + dual.n_field_vars - dual.n_sites) * math.log(dual.q)


def enumerate_Zd(dual: DualGraph, budget: int = ENUMERATION_BUDGET) -> float:
    """log Z_d by summing over the kernel of the constraint matrix.

    Falls back to iterating over all q^E assignments when no unit-pivot kernel
    basis exists.
    """
    from core.gf_solver import NonUnitPivotError, kernel_basis

    q = dual.q
    try:
        basis = kernel_basis(dual.incidence.toarray(), q)
    except NonUnitPivotError:
        basis = None

    lt = dual.log_tables()
    if basis is not None:
        dim = basis.shape[1]
        if q ** dim > budget:
            raise EnumerationBudgetError(f"Dual kernel has {q}^{dim} states, budget is {budget}")
        if dim == 0:
            return float(lt[np.arange(dual.n_vars), 0].sum()) + dual.log_scale if dual.n_vars else dual.log_scale
        parts = []
        total = q ** dim
        for start in range(0, total, _CHUNK):
            coords = _mixed_radix(start, min(total, start + _CHUNK), dim, q)
            x = (basis @ coords) % q
            parts.append(logsumexp(lt[np.arange(dual.n_vars)[:, None], x].sum(axis=0)))
        return float(logsumexp(parts)) + dual.log_scale

    E = dual.n_vars
    if q ** E > budget:
        raise EnumerationBudgetError(f"Dual graph has {q}^{E} assignments, budget is {budget}")
    parts = []
    total = q ** E
    for start in range(0, total, _CHUNK):
        x = _mixed_radix(start, min(total, start + _CHUNK), E, q)
        ok = dual.is_valid(x)
        if np.any(ok):
            parts.append(logsumexp(lt[np.arange(E)[:, None], x[:, ok]].sum(axis=0)))
    return float(logsumexp(parts)) + dual.log_scale


def _mixed_radix(start: int, stop: int, digits: int, q: int) -> np.ndarray:
    """Digits of start..stop-1 in base q, shape (digits, stop - start)."""
    idx = np.arange(start, stop, dtype=np.int64)
    out = np.empty((digits, idx.size), dtype=np.int64)
    for d in range(digits):
        out[d] = idx % q
        idx = idx // q
    return out


def inspect(dual: DualGraph) -> Dict[str, Any]:
    """JSON-friendly dump of tables and counts."""
    return {
        "rows": dual.spec.rows,
        "cols": dual.spec.cols,
        "boundary": dual.spec.boundary.value,
        "family": dual.family.value,
        "q": dual.q,
        "n_bond_vars": dual.n_bond_vars,
        "n_field_vars": dual.n_field_vars,
        "E": dual.edge_count,
        "log_scale": dual.log_scale,
        "duality_constant": duality_constant(dual),
        "tanh_form": dual.tanh_form,
        "gamma_tables": dual.gamma_tables.tolist(),
        "lambda_tables": dual.lambda_tables.tolist(),
        "site_constraints": [list(map(list, c)) for c in dual.site_constraints()],
    }
