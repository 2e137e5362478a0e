"""
A/B partitions of the dual variables and the linear map x_B = M x_A over Z_q.

Elimination only ever pivots on units of Z_q. Lattice constraint matrices
have +-1 entries, which keeps every pivot a unit for composite q as well.
For q = 2 rows are packed into Python ints and reduced with XOR.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.dual_graph import DualGraph
from core.lattice_model import comb_tree_mask, serpentine_tree_mask

LOG = logging.getLogger("gf_solver")


class PartitionError(RuntimeError):
    """The A/B split does not determine x_B from x_A."""


class NonUnitPivotError(PartitionError):
    """Elimination met a column whose remaining entries are all non-units mod q."""


class InadmissibleSampleError(RuntimeError):
    """An x_A assignment violates the residual conditions of its partition."""


class Preset(str, Enum):
    ALG1 = "alg1"
    ALG2 = "alg2"
    CHECKER = "checker"
    CUSTOM = "custom"


# ---------------------------------------------------------------------------
# Row reduction
# ---------------------------------------------------------------------------

def _units(q: int) -> Dict[int, int]:
    return {a: pow(a, -1, q) for a in range(1, q) if math.gcd(a, q) == 1}


def _pack(row: np.ndarray) -> int:
    return int.from_bytes(np.packbits(row.astype(np.uint8), bitorder="little").tobytes(), "little")


def _unpack(bits: int, n_cols: int) -> np.ndarray:
    n_bytes = max(1, (n_cols + 7) // 8)
    raw = np.frombuffer(bits.to_bytes(n_bytes, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n_cols].astype(np.int64)


def _reduce_gf2(mat: np.ndarray, col_order: Sequence[int]) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    n_rows, n_cols = mat.shape
    work = [_pack(mat[r]) for r in range(n_rows)]
    used = [False] * n_rows
    pivots: List[Tuple[int, int]] = []
    for col in col_order:
        bit = 1 << col
        pivot = None
        for r in range(n_rows):
            if not used[r] and work[r] & bit:
                pivot = r
                break
        if pivot is None:
            continue
        used[pivot] = True
        prow = work[pivot]
        for r in range(n_rows):
            if r != pivot and work[r] & bit:
                work[r] ^= prow
        pivots.append((pivot, col))
    out = np.zeros((n_rows, n_cols), dtype=np.int64)
    for r in range(n_rows):
        if work[r]:
            out[r] = _unpack(work[r], n_cols)
    return out, pivots


def _reduce_zq(mat: np.ndarray, q: int, col_order: Sequence[int]) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    units = _units(q)
    work = np.array(mat, dtype=np.int64) % q
    n_rows = work.shape[0]
    used = np.zeros(n_rows, dtype=bool)
    pivots: List[Tuple[int, int]] = []
    for col in col_order:
        column = work[:, col]
        cand = np.flatnonzero(~used & (column != 0))
        if cand.size == 0:
            continue
        unit_rows = [int(r) for r in cand if int(column[r]) in units]
        if not unit_rows:
            raise NonUnitPivotError(f"No unit pivot in column {col} mod {q}")
        p = unit_rows[0]
        used[p] = True
        work[p] = (work[p] * units[int(work[p, col])]) % q
        others = np.flatnonzero(work[:, col])
        others = others[others != p]
        if others.size:
            work[others] = (work[others] - np.outer(work[others, col], work[p])) % q
        pivots.append((p, col))
    return work, pivots


def row_reduce(mat: np.ndarray, q: int, col_order: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """Gauss-Jordan elimination mod q, pivoting columns in col_order.

    Within a column the pivot is the lowest-index unused row. Returns the
    reduced matrix and the (row, column) pivots in the order they were taken.
    """
    mat = np.asarray(mat, dtype=np.int64)
    if col_order is None:
        col_order = range(mat.shape[1])
    if mat.size == 0:
        return mat.copy(), []
    if q == 2:
        return _reduce_gf2(mat % 2, col_order)
    return _reduce_zq(mat, q, col_order)


def kernel_basis(mat: np.ndarray, q: int) -> np.ndarray:
    """Columns spanning {x : mat @ x = 0 mod q}, shape (n_cols, dim)."""
    mat = np.asarray(mat, dtype=np.int64)
    n_cols = mat.shape[1]
    reduced, pivots = row_reduce(mat, q)
    pivot_cols = {c: r for r, c in pivots}
    free = [c for c in range(n_cols) if c not in pivot_cols]
    basis = np.zeros((n_cols, len(free)), dtype=np.int64)
    for j, f in enumerate(free):
        basis[f, j] = 1
        for c, r in pivot_cols.items():
            basis[c, j] = (-reduced[r, f]) % q
    return basis


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionScheme:
    preset: Preset
    a_vars: Tuple[int, ...]
    b_vars: Tuple[int, ...]
    excluded_field_var: Optional[int] = None
    promoted: Tuple[int, ...] = ()

    def bond_counts(self, dual: DualGraph) -> Tuple[int, int]:
        """(|bonds in A|, |bonds in B|)."""
        n_a = sum(1 for v in self.a_vars if v < dual.n_bond_vars)
        n_b = sum(1 for v in self.b_vars if v < dual.n_bond_vars)
        return n_a, n_b


@dataclass(frozen=True)
class PartitionReport:
    ok: bool
    rank: int
    deficiency: int
    residual: Tuple[str, ...]
    closures: Tuple[str, ...]
    n_A: int
    n_B: int
    n_bonds_A: int
    n_bonds_B: int
    log_admissible: float
    message: str = ""
    dependent_b_vars: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": self.ok,
            "rank": self.rank,
            "deficiency": self.deficiency,
            "residual_conditions": list(self.residual),
            "closures": list(self.closures),
            "n_A": self.n_A,
            "n_B": self.n_B,
            "bonds_A": self.n_bonds_A,
            "bonds_B": self.n_bonds_B,
            "log_admissible": self.log_admissible,
            "message": self.message,
        }


@dataclass(frozen=True)
class PeelStep:
    target: int
    sources: np.ndarray
    coefs: np.ndarray


@dataclass(frozen=True)
class LinearMap:
    """x_B = M x_A (mod q) for admissible x_A, i.e. residual @ x_A = 0 (mod q).

    Admissible x_A are parametrized by the free A coordinates; the dependent
    ones follow from x_dep = closure @ x_free.
    """

    q: int
    n_vars: int
    a_vars: np.ndarray
    b_vars: np.ndarray
    M: np.ndarray
    residual: np.ndarray
    free_pos: np.ndarray
    dep_pos: np.ndarray
    closure: np.ndarray
    peel: Optional[Tuple[PeelStep, ...]] = None

    @property
    def n_free(self) -> int:
        return int(self.free_pos.size)

    @property
    def log_admissible(self) -> float:
        return self.n_free * math.log(self.q)


def _field_site(dual: DualGraph, v: int) -> int:
    return v - dual.n_bond_vars


def default_excluded_site(dual: DualGraph) -> Optional[int]:
    """Site with the largest |H|; ties go to the highest index."""
    if not dual.n_field_vars:
        return None
    mag = np.abs(np.asarray(dual.fields))
    rev = int(np.argmax(mag[::-1]))
    return dual.n_sites - 1 - rev


def _split_vars(dual: DualGraph, a_bonds: Sequence[int], excluded: Optional[int]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    a = set(int(b) for b in a_bonds)
    a.update(dual.n_bond_vars + m for m in range(dual.n_field_vars))
    if excluded is not None:
        a.discard(dual.field_var(excluded))
    b = [v for v in range(dual.n_vars) if v not in a]
    return tuple(sorted(a)), tuple(b)


def build_preset(
    dual: DualGraph,
    preset,
    excluded_site: Optional[int] = None,
    custom_a: Optional[Sequence[int]] = None,
) -> PartitionScheme:
    """Build a partition scheme and make sure it is determinate.

    Tree presets put a spanning tree of bonds in B. If B is found dependent
    anyway, the dependent B bond with the smallest |J| is moved to A and the
    check repeats.
    """
    preset = Preset(preset)
    spec = dual.spec
    if preset is Preset.CUSTOM:
        if custom_a is None:
            raise PartitionError("Custom partition needs an explicit list of A variables")
        a = tuple(sorted(set(int(v) for v in custom_a)))
        if any(v < 0 or v >= dual.n_vars for v in a):
            raise PartitionError(f"Custom A variables must lie in 0..{dual.n_vars - 1}")
        b = tuple(v for v in range(dual.n_vars) if v not in set(a))
        scheme = PartitionScheme(preset=preset, a_vars=a, b_vars=b)
        report = validate_partition(dual, scheme)
        if not report.ok:
            raise PartitionError(f"Custom partition is not determinate: {report.message}")
        return scheme

    tree = serpentine_tree_mask(spec) if preset is Preset.CHECKER else comb_tree_mask(spec)
    excluded = None
    if preset is Preset.ALG2 and dual.n_field_vars:
        excluded = default_excluded_site(dual) if excluded_site is None else int(excluded_site)
        if not 0 <= excluded < dual.n_sites:
            raise PartitionError(f"Excluded site {excluded} outside 0..{dual.n_sites - 1}")

    a_bonds = [b for b in range(dual.n_bond_vars) if not tree[b]]
    promoted: List[int] = []
    while True:
        a, b = _split_vars(dual, a_bonds, excluded)
        scheme = PartitionScheme(
            preset=preset, a_vars=a, b_vars=b, excluded_field_var=excluded, promoted=tuple(promoted)
        )
        report = validate_partition(dual, scheme)
        if report.ok:
            break
        candidates = [v for v in report.dependent_b_vars if v < dual.n_bond_vars]
        if not candidates:
            raise PartitionError(f"Preset {preset.value} is not determinate: {report.message}")
        weakest = min(candidates, key=lambda v: (abs(float(dual.couplings[v])), v))
        LOG.warning(f"[gf_solver] ⚠️ promoting bond {weakest} (J={float(dual.couplings[weakest]):.4g}) from B to A")
        a_bonds.append(weakest)
        promoted.append(weakest)

    n_ba, n_bb = scheme.bond_counts(dual)
    LOG.info(
        f"[gf_solver] preset {preset.value}: |A|={len(scheme.a_vars)} |B|={len(scheme.b_vars)} "
        f"|bonds A|={n_ba} |bonds B|={n_bb} excluded={excluded}"
    )
    return scheme


def _describe_residual(dual: DualGraph, a_vars: np.ndarray, row: np.ndarray) -> str:
    q = dual.q
    support = np.flatnonzero(row)
    field_pos = [p for p, v in enumerate(a_vars) if dual.is_field_var(int(v))]
    if field_pos and support.tolist() == field_pos and len(set(row[support].tolist())) == 1:
        return "sum(y) even" if q == 2 else f"sum(y) = 0 mod {q}"
    terms = []
    for pos in support:
        v = int(a_vars[pos])
        name = f"y[{_field_site(dual, v)}]" if dual.is_field_var(v) else f"z[{v}]"
        c = int(row[pos])
        terms.append(name if c == 1 else f"{c}*{name}")
    return " + ".join(terms) + f" = 0 mod {q}"


def _pivot_order(dual: DualGraph, b_vars: np.ndarray) -> List[int]:
    """Strong B bonds pivot first, so dependent columns are the weakest bonds."""

    def key(v: int):
        if v < dual.n_bond_vars:
            return (0, -abs(float(dual.couplings[v])), v)
        return (1, 0.0, v)

    return sorted((int(v) for v in b_vars), key=key)


def _analyze(dual: DualGraph, scheme: PartitionScheme):
    q = dual.q
    a_vars = np.asarray(scheme.a_vars, dtype=np.int64)
    b_vars = np.asarray(scheme.b_vars, dtype=np.int64)
    C = dual.incidence.toarray().astype(np.int64) % q
    order = _pivot_order(dual, b_vars)
    reduced, pivots = row_reduce(C, q, order) if C.size else (C, [])
    pivot_of_col = {c: r for r, c in pivots}
    missing = tuple(int(v) for v in b_vars if int(v) not in pivot_of_col)

    M = np.zeros((b_vars.size, a_vars.size), dtype=np.int64)
    for i, v in enumerate(b_vars):
        r = pivot_of_col.get(int(v))
        if r is not None:
            M[i] = (-reduced[r, a_vars]) % q
    pivot_rows = set(pivot_of_col.values())
    res_rows = [reduced[r, a_vars] for r in range(C.shape[0]) if r not in pivot_rows]
    kept = [r for r in res_rows if np.any(r)]
    residual = np.array(kept, dtype=np.int64).reshape(len(kept), a_vars.size)
    return M, residual, missing, len(pivots)


def validate_partition(dual: DualGraph, scheme: PartitionScheme) -> PartitionReport:
    """Eliminate the constraint system on the B columns and report determinacy."""
    n_ba, n_bb = scheme.bond_counts(dual)
    try:
        M, residual, missing, rank = _analyze(dual, scheme)
        res_red, res_piv = row_reduce(residual, dual.q, range(residual.shape[1] - 1, -1, -1)) if residual.size else (residual, [])
    except NonUnitPivotError as e:
        return PartitionReport(
            ok=False, rank=0, deficiency=len(scheme.b_vars), residual=(), closures=(), n_A=len(scheme.a_vars),
            n_B=len(scheme.b_vars), n_bonds_A=n_ba, n_bonds_B=n_bb, log_admissible=math.nan, message=str(e),
        )
    a_vars = np.asarray(scheme.a_vars, dtype=np.int64)
    residual_desc = tuple(_describe_residual(dual, a_vars, res_red[r]) for r, _ in res_piv)
    closures = ()
    if scheme.excluded_field_var is not None:
        closures = (f"y[{scheme.excluded_field_var}] closes sum(y) over the other field-duals",)
    deficiency = len(missing)
    n_free = len(scheme.a_vars) - len(res_piv)
    ok = deficiency == 0
    if ok:
        message = "determinate"
    else:
        message = f"rank deficiency {deficiency} on B columns (dependent B variables: {list(missing)[:10]})"
    return PartitionReport(
        ok=ok,
        rank=rank,
        deficiency=deficiency,
        residual=residual_desc,
        closures=closures,
        n_A=len(scheme.a_vars),
        n_B=len(scheme.b_vars),
        n_bonds_A=n_ba,
        n_bonds_B=n_bb,
        log_admissible=n_free * math.log(dual.q),
        message=message,
        dependent_b_vars=missing,
    )


def _build_peel(dual: DualGraph, a_vars: np.ndarray, b_vars: np.ndarray) -> Optional[Tuple[PeelStep, ...]]:
    q = dual.q
    units = _units(q)
    constraints = dual.site_constraints()
    known = np.zeros(dual.n_vars, dtype=bool)
    known[a_vars] = True
    unknown_count = [sum(1 for v, _ in row if not known[v]) for row in constraints]
    rows_of: List[List[int]] = [[] for _ in range(dual.n_vars)]
    for m, row in enumerate(constraints):
        for v, _ in row:
            rows_of[v].append(m)

    queue = deque(m for m in range(len(constraints)) if unknown_count[m] == 1)
    steps: List[PeelStep] = []
    while queue:
        m = queue.popleft()
        if unknown_count[m] != 1:
            continue
        row = constraints[m]
        target, coef = next((v, c) for v, c in row if not known[v])
        if coef not in units:
            continue
        inv = units[coef]
        srcs = np.array([v for v, _ in row if v != target], dtype=np.int64)
        coefs = np.array([(-inv * c) % q for v, c in row if v != target], dtype=np.int64)
        steps.append(PeelStep(target=int(target), sources=srcs, coefs=coefs))
        known[target] = True
        for m2 in rows_of[target]:
            unknown_count[m2] -= 1
            if unknown_count[m2] == 1:
                queue.append(m2)
    if not np.all(known[b_vars]):
        return None
    return tuple(steps)


def build_linear_map(dual: DualGraph, scheme: PartitionScheme) -> LinearMap:
    q = dual.q
    M, residual, missing, _ = _analyze(dual, scheme)
    if missing:
        raise PartitionError(f"B variables {list(missing)[:10]} are not determined by A")
    a_vars = np.asarray(scheme.a_vars, dtype=np.int64)
    b_vars = np.asarray(scheme.b_vars, dtype=np.int64)
    n_a = a_vars.size
    if residual.size:
        # Dependent coordinates are taken from the highest A positions.
        res_red, res_piv = row_reduce(residual, q, range(n_a - 1, -1, -1))
    else:
        res_red, res_piv = residual, []
    dep_pos = np.array([c for _, c in res_piv], dtype=np.int64)
    free_pos = np.array([p for p in range(n_a) if p not in set(dep_pos.tolist())], dtype=np.int64)
    closure = np.zeros((dep_pos.size, free_pos.size), dtype=np.int64)
    for i, (r, _) in enumerate(res_piv):
        closure[i] = (-res_red[r, free_pos]) % q
    residual_rows = np.array([res_red[r] for r, _ in res_piv], dtype=np.int64).reshape(len(res_piv), n_a)
    peel = _build_peel(dual, a_vars, b_vars)
    if peel is None:
        LOG.info("[gf_solver] no peeling order; solve_B uses the dense map")
    return LinearMap(
        q=q,
        n_vars=dual.n_vars,
        a_vars=a_vars,
        b_vars=b_vars,
        M=M,
        residual=residual_rows,
        free_pos=free_pos,
        dep_pos=dep_pos,
        closure=closure,
        peel=peel,
    )


def is_admissible(lmap: LinearMap, x_A: np.ndarray) -> np.ndarray:
    x_A = np.asarray(x_A, dtype=np.int64)
    if lmap.residual.shape[0] == 0:
        return np.ones(x_A.shape[1:], dtype=bool) if x_A.ndim > 1 else np.bool_(True)
    return np.all((lmap.residual @ x_A) % lmap.q == 0, axis=0)


def complete(lmap: LinearMap, x_A: np.ndarray, check: bool = True) -> np.ndarray:
    """Full stacked configuration(s), shape (n_vars,) or (n_vars, n)."""
    x_A = np.asarray(x_A, dtype=np.int64)
    single = x_A.ndim == 1
    XA = x_A[:, None] if single else x_A
    if XA.shape[0] != lmap.a_vars.size:
        raise ValueError(f"x_A has {XA.shape[0]} rows, expected {lmap.a_vars.size}")
    if check:
        ok = is_admissible(lmap, XA)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise InadmissibleSampleError(f"x_A column {bad} violates the residual conditions")
    q = lmap.q
    X = np.zeros((lmap.n_vars, XA.shape[1]), dtype=np.int64)
    X[lmap.a_vars] = XA
    if lmap.b_vars.size:
        if lmap.peel is not None:
            for step in lmap.peel:
                X[step.target] = (step.coefs @ X[step.sources]) % q
        else:
            X[lmap.b_vars] = (lmap.M @ XA) % q
    return X[:, 0] if single else X


def solve_B(lmap: LinearMap, x_A: np.ndarray) -> np.ndarray:
    """x_B for admissible x_A; raises InadmissibleSampleError otherwise."""
    X = complete(lmap, x_A)
    return X[lmap.b_vars]


def close_admissible(lmap: LinearMap, x_free: np.ndarray) -> np.ndarray:
    """Admissible x_A from its free coordinates, shape (n_free,) or (n_free, n)."""
    x_free = np.asarray(x_free, dtype=np.int64)
    shape = (lmap.a_vars.size,) + x_free.shape[1:]
    x_A = np.zeros(shape, dtype=np.int64)
    x_A[lmap.free_pos] = x_free
    if lmap.dep_pos.size:
        x_A[lmap.dep_pos] = (lmap.closure @ x_free) % lmap.q
    return x_A


def uniform_admissible(lmap: LinearMap, rng: np.random.Generator, size: int) -> np.ndarray:
    x_free = rng.integers(0, lmap.q, size=(lmap.n_free, size), dtype=np.int64)
    return close_admissible(lmap, x_free)


@dataclass(frozen=True)
class Move:
    """Change of the full configuration per unit step of one free coordinate."""

    support: np.ndarray
    coefs: np.ndarray


def move_basis(lmap: LinearMap) -> Tuple[Move, ...]:
    moves = []
    for j in range(lmap.n_free):
        e = np.zeros(lmap.n_free, dtype=np.int64)
        e[j] = 1
        g = complete(lmap, close_admissible(lmap, e), check=False)
        support = np.flatnonzero(g)
        moves.append(Move(support=support, coefs=g[support]))
    return tuple(moves)


def admissible_states(lmap: LinearMap, budget: int = 2 ** 20) -> np.ndarray:
    """Every admissible x_A, shape (|A|, q^n_free)."""
    total = lmap.q ** lmap.n_free
    if total > budget:
        raise PartitionError(f"{total} admissible states exceed budget {budget}")
    idx = np.arange(total, dtype=np.int64)
    free = np.empty((lmap.n_free, total), dtype=np.int64)
    for d in range(lmap.n_free):
        free[d] = idx % lmap.q
        idx //= lmap.q
    return close_admissible(lmap, free)
