"""
Lattice geometry, model parameters and primal energetics.

Spins live on the sites of a rows x cols grid, indexed row-major, with symbols
in {0..q-1} (Ising uses q=2 with the {0,1} alphabet). All weights are handled
in log scale: log f(x) = -energy(x) at beta = 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

LOG = logging.getLogger("lattice_model")

SeedLike = Union[int, np.random.SeedSequence, None]


class LatticeError(ValueError):
    """Invalid geometry, parameters or configuration."""


class ParamDistributionError(ValueError):
    """Invalid parameter distribution."""


class EnumerationBudgetError(RuntimeError):
    """Exhaustive enumeration would exceed the configured state budget."""


class SamplerMismatchError(ValueError):
    """Sampler cannot be used with these model parameters."""


class Boundary(str, Enum):
    FREE = "free"
    PERIODIC = "periodic"


class Family(str, Enum):
    ISING = "ising"
    POTTS = "potts"


# Bond kinds, in canonical order.
HORIZONTAL = "h"
VERTICAL = "v"
WRAP_HORIZONTAL = "wh"
WRAP_VERTICAL = "wv"


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of a 2D grid and its bond list.

    Bonds are (k, l) pairs with k < l, ordered horizontal (row-major), then
    vertical (row-major), then wrap bonds (horizontal wraps by row, vertical
    wraps by column). On a periodic lattice with a side of length 2 the wrap
    bond parallels an interior bond; both are kept as distinct bonds so that
    |bonds| = 2N holds on every torus.
    """

    rows: int
    cols: int
    boundary: Boundary
    bonds: Tuple[Tuple[int, int], ...]
    kinds: Tuple[str, ...]

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def bond_array(self) -> np.ndarray:
        if not self.bonds:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray(self.bonds, dtype=np.int64)

    def site(self, r: int, c: int) -> int:
        return r * self.cols + c

    def coords(self, m: int) -> Tuple[int, int]:
        return divmod(m, self.cols)

    def neighbors(self) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
        """Per site: tuple of (bond index, neighbor site)."""
        nbrs: list[list[Tuple[int, int]]] = [[] for _ in range(self.n_sites)]
        for b, (k, l) in enumerate(self.bonds):
            nbrs[k].append((b, l))
            nbrs[l].append((b, k))
        return tuple(tuple(n) for n in nbrs)


def build_lattice(rows: int, cols: int, boundary: Union[Boundary, str] = Boundary.FREE) -> LatticeSpec:
    """Build a rows x cols lattice with canonical bond ordering."""
    try:
        boundary = Boundary(boundary)
    except ValueError:
        raise LatticeError(f"Unknown boundary '{boundary}' (expected 'free' or 'periodic')") from None
    if rows < 1 or cols < 1:
        raise LatticeError(f"Lattice dimensions must be positive, got {rows}x{cols}")
    if boundary is Boundary.PERIODIC and (rows < 2 or cols < 2):
        raise LatticeError(f"Periodic lattice needs rows >= 2 and cols >= 2, got {rows}x{cols}")

    bonds: list[Tuple[int, int]] = []
    kinds: list[str] = []

    def add(k: int, l: int, kind: str) -> None:
        bonds.append((min(k, l), max(k, l)))
        kinds.append(kind)

    for r in range(rows):
        for c in range(cols - 1):
            add(r * cols + c, r * cols + c + 1, HORIZONTAL)
    for r in range(rows - 1):
        for c in range(cols):
            add(r * cols + c, (r + 1) * cols + c, VERTICAL)
    if boundary is Boundary.PERIODIC:
        for r in range(rows):
            add(r * cols, r * cols + cols - 1, WRAP_HORIZONTAL)
        for c in range(cols):
            add(c, (rows - 1) * cols + c, WRAP_VERTICAL)

    return LatticeSpec(rows=rows, cols=cols, boundary=boundary, bonds=tuple(bonds), kinds=tuple(kinds))


@dataclass(frozen=True)
class ModelParams:
    """Couplings per bond and fields per site.

    J = 0 is accepted as the decoupled limit; negative couplings are rejected.
    """

    family: Family
    couplings: np.ndarray
    fields: np.ndarray
    q: int = 2

    def __post_init__(self) -> None:
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        J = np.array(self.couplings, dtype=np.float64).reshape(-1)
        H = np.array(self.fields, dtype=np.float64).reshape(-1)
        J.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "couplings", J)
        object.__setattr__(self, "fields", H)
        if fam is Family.ISING and self.q != 2:
            raise LatticeError(f"Ising family has q=2, got q={self.q}")
        if self.q < 2:
            raise LatticeError(f"Potts needs q >= 2, got q={self.q}")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(H))):
            raise LatticeError("Couplings and fields must be finite")
        if np.any(J < 0):
            raise LatticeError(f"Antiferromagnetic coupling rejected (min J = {J.min():.6g})")
        if fam is Family.POTTS and np.any(H < 0):
            raise LatticeError(f"Potts fields must be nonnegative (min H = {H.min():.6g})")

    @property
    def has_field(self) -> bool:
        return bool(np.any(self.fields != 0))

    def with_couplings(self, couplings: np.ndarray) -> "ModelParams":
        return ModelParams(family=self.family, couplings=couplings, fields=self.fields, q=self.q)

    def with_fields(self, fields: np.ndarray) -> "ModelParams":
        return ModelParams(family=self.family, couplings=self.couplings, fields=fields, q=self.q)


def ising(spec: LatticeSpec, J, H=0.0) -> ModelParams:
    """Ising parameters; scalars are broadcast over bonds / sites."""
    return ModelParams(
        family=Family.ISING,
        couplings=np.broadcast_to(np.asarray(J, dtype=np.float64), (spec.n_bonds,)),
        fields=np.broadcast_to(np.asarray(H, dtype=np.float64), (spec.n_sites,)),
        q=2,
    )


def potts(spec: LatticeSpec, q: int, J, H=0.0) -> ModelParams:
    """Potts(q) parameters; scalars are broadcast over bonds / sites."""
    return ModelParams(
        family=Family.POTTS,
        couplings=np.broadcast_to(np.asarray(J, dtype=np.float64), (spec.n_bonds,)),
        fields=np.broadcast_to(np.asarray(H, dtype=np.float64), (spec.n_sites,)),
        q=q,
    )


def check_params(spec: LatticeSpec, params: ModelParams) -> None:
    if params.couplings.shape[0] != spec.n_bonds:
        raise LatticeError(f"Expected {spec.n_bonds} couplings, got {params.couplings.shape[0]}")
    if params.fields.shape[0] != spec.n_sites:
        raise LatticeError(f"Expected {spec.n_sites} fields, got {params.fields.shape[0]}")


def _as_configs(spec: LatticeSpec, params: ModelParams, x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.shape[-1:] != (spec.n_sites,):
        raise LatticeError(f"Configuration must have {spec.n_sites} components, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= params.q):
        raise LatticeError(f"Configuration symbols must lie in 0..{params.q - 1}")
    return arr


def bond_energies(spec: LatticeSpec, params: ModelParams, x) -> np.ndarray:
    """Per-bond energy terms, shape (..., n_bonds)."""
    check_params(spec, params)
    x = _as_configs(spec, params, x)
    ba = spec.bond_array
    same = x[..., ba[:, 0]] == x[..., ba[:, 1]]
    if params.family is Family.ISING:
        return -params.couplings * np.where(same, 1.0, -1.0)
    return -params.couplings * same


def site_energies(spec: LatticeSpec, params: ModelParams, x) -> np.ndarray:
    """Per-site energy terms, shape (..., n_sites)."""
    check_params(spec, params)
    x = _as_configs(spec, params, x)
    if params.family is Family.ISING:
        return -params.fields * np.where(x == 1, 1.0, -1.0)
    return -params.fields * (x == 0)


def energy(spec: LatticeSpec, params: ModelParams, x) -> Union[float, np.ndarray]:
    """Energy of one configuration (float) or of a stack of configurations."""
    e = bond_energies(spec, params, x).sum(axis=-1) + site_energies(spec, params, x).sum(axis=-1)
    if np.ndim(e) == 0:
        return float(e)
    return e


def boltzmann_weight(spec: LatticeSpec, params: ModelParams, x) -> Union[float, np.ndarray]:
    """log f(x) = -energy(x)."""
    return -energy(spec, params, x)


class DistKind(str, Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class ParamDistribution:
    kind: DistKind
    value: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    values: Tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def constant(cls, value: float) -> "ParamDistribution":
        return cls(kind=DistKind.CONSTANT, value=float(value))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "ParamDistribution":
        return cls(kind=DistKind.UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "ParamDistribution":
        return cls(kind=DistKind.EXPLICIT, values=tuple(float(v) for v in values))

    def describe(self) -> str:
        if self.kind is DistKind.CONSTANT:
            return f"{self.value:g}"
        if self.kind is DistKind.UNIFORM:
            return f"U[{self.lo:g}, {self.hi:g}]"
        return f"explicit({len(self.values)})"


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def draw_params(dist: ParamDistribution, count: int, rng_seed=None) -> np.ndarray:
    """Draw `count` i.i.d. values from dist; reproducible given the seed."""
    if count < 1:
        raise ParamDistributionError(f"count must be >= 1, got {count}")
    if dist.kind is DistKind.CONSTANT:
        return np.full(count, dist.value, dtype=np.float64)
    if dist.kind is DistKind.UNIFORM:
        if not dist.lo <= dist.hi:
            raise ParamDistributionError(f"Invalid range [{dist.lo}, {dist.hi}]: lo > hi")
        return _rng(rng_seed).uniform(dist.lo, dist.hi, size=count)
    if len(dist.values) != count:
        raise ParamDistributionError(f"Explicit list has {len(dist.values)} values, {count} needed")
    return np.asarray(dist.values, dtype=np.float64)


def comb_tree_mask(spec: LatticeSpec) -> np.ndarray:
    """Spanning tree: every non-wrap horizontal bond plus the column-0 vertical bonds."""
    mask = np.zeros(spec.n_bonds, dtype=bool)
    for b, ((k, l), kind) in enumerate(zip(spec.bonds, spec.kinds)):
        if kind == HORIZONTAL:
            mask[b] = True
        elif kind == VERTICAL and k % spec.cols == 0:
            mask[b] = True
    return mask


def serpentine_tree_mask(spec: LatticeSpec) -> np.ndarray:
    """Spanning tree: rows joined at alternating ends (last column, then first, ...)."""
    mask = np.zeros(spec.n_bonds, dtype=bool)
    for b, ((k, l), kind) in enumerate(zip(spec.bonds, spec.kinds)):
        if kind == HORIZONTAL:
            mask[b] = True
        elif kind == VERTICAL:
            r, c = spec.coords(k)
            link_col = spec.cols - 1 if r % 2 == 0 else 0
            mask[b] = c == link_col
    return mask


def build_instance(
    spec: LatticeSpec,
    family: Union[Family, str],
    J_A: ParamDistribution,
    J_B: ParamDistribution,
    H: ParamDistribution,
    seed: SeedLike,
    b_mask: Optional[np.ndarray] = None,
    q: int = 2,
) -> ModelParams:
    """Draw one model instance.

    Bonds flagged by b_mask take couplings from J_B, the rest from J_A. Each of
    the three draws uses its own sub-stream of the seed, so changing one
    distribution leaves the other draws untouched.
    """
    fam = Family(family)
    if b_mask is None:
        b_mask = comb_tree_mask(spec)
    b_mask = np.asarray(b_mask, dtype=bool)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_a, s_b, s_h = ss.spawn(3)

    J = np.zeros(spec.n_bonds, dtype=np.float64)
    n_b = int(b_mask.sum())
    n_a = spec.n_bonds - n_b
    if n_a:
        J[~b_mask] = draw_params(J_A, n_a, s_a)
    if n_b:
        J[b_mask] = draw_params(J_B, n_b, s_b)
    fields = draw_params(H, spec.n_sites, s_h)

    params = ModelParams(family=fam, couplings=J, fields=fields, q=2 if fam is Family.ISING else q)
    LOG.debug(
        f"[lattice_model] instance {spec.rows}x{spec.cols} {spec.boundary.value} "
        f"J_A~{J_A.describe()} J_B~{J_B.describe()} H~{H.describe()} |B_A|={n_a} |B_B|={n_b}"
    )
    return params
