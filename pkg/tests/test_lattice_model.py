import itertools
import math

import numpy as np
import pytest

from core.lattice_model import (
    Family,
    LatticeError,
    ParamDistribution,
    ParamDistributionError,
    bond_energies,
    boltzmann_weight,
    build_instance,
    build_lattice,
    comb_tree_mask,
    draw_params,
    energy,
    ising,
    potts,
    serpentine_tree_mask,
    site_energies,
)


@pytest.mark.parametrize(
    "rows, cols, boundary, expected",
    [(2, 2, "free", 4), (2, 2, "periodic", 8), (30, 30, "periodic", 1800), (3, 4, "free", 17)],
)
def test_bond_counts(rows, cols, boundary, expected):
    assert build_lattice(rows, cols, boundary).n_bonds == expected


def test_bond_order_is_canonical():
    spec = build_lattice(2, 2, "free")
    assert spec.bonds == ((0, 1), (2, 3), (0, 2), (1, 3))
    spec = build_lattice(2, 3, "periodic")
    assert spec.kinds == ("h",) * 4 + ("v",) * 3 + ("wh",) * 2 + ("wv",) * 3
    assert spec.n_bonds == 2 * spec.n_sites


def test_lattice_errors():
    with pytest.raises(LatticeError):
        build_lattice(0, 3)
    with pytest.raises(LatticeError):
        build_lattice(1, 4, "periodic")
    with pytest.raises(LatticeError):
        build_lattice(2, 2, "twisted")


def test_ising_energy_examples():
    spec = build_lattice(1, 2, "free")
    params = ising(spec, 1.0)
    assert energy(spec, params, [0, 0]) == -1.0
    assert energy(spec, params, [0, 1]) == 1.0
    assert boltzmann_weight(spec, params, [0, 0]) == 1.0


def test_single_site_field():
    spec = build_lattice(1, 1, "free")
    params = ising(spec, 1.0, -0.5)
    assert boltzmann_weight(spec, params, [0]) == pytest.approx(0.5)


def test_potts_energy_examples():
    spec = build_lattice(1, 2, "free")
    params = potts(spec, 3, 2.0, [1.0, 0.0])
    assert energy(spec, params, [0, 0]) == -3.0
    params = potts(spec, 4, 0.75)
    assert boltzmann_weight(spec, params, [1, 1]) == pytest.approx(0.75)


def test_energy_decomposes():
    spec = build_lattice(3, 3, "periodic")
    rng = np.random.default_rng(3)
    params = ising(spec, rng.uniform(0.1, 1.0, spec.n_bonds), rng.uniform(-0.5, 0.5, spec.n_sites))
    x = rng.integers(0, 2, size=(20, spec.n_sites))
    total = bond_energies(spec, params, x).sum(axis=1) + site_energies(spec, params, x).sum(axis=1)
    np.testing.assert_allclose(energy(spec, params, x), total)


def test_configuration_errors():
    spec = build_lattice(1, 2, "free")
    params = ising(spec, 1.0)
    with pytest.raises(LatticeError):
        energy(spec, params, [0, 1, 0])
    with pytest.raises(LatticeError):
        energy(spec, params, [0, 2])


def test_parameter_errors():
    spec = build_lattice(2, 2, "free")
    with pytest.raises(LatticeError):
        ising(spec, -0.1)
    with pytest.raises(LatticeError):
        potts(spec, 3, 1.0, -0.5)
    with pytest.raises(LatticeError):
        potts(spec, 1, 1.0)


def test_global_flip_with_negated_field():
    spec = build_lattice(2, 3, "free")
    rng = np.random.default_rng(11)
    J = rng.uniform(0.1, 1.0, spec.n_bonds)
    H = rng.uniform(-1.0, 1.0, spec.n_sites)
    x = rng.integers(0, 2, size=(10, spec.n_sites))
    e1 = energy(spec, ising(spec, J, H), x)
    e2 = energy(spec, ising(spec, J, -H), 1 - x)
    np.testing.assert_allclose(e1, e2)


def test_potts_two_states_matches_ising():
    spec = build_lattice(2, 2, "free")
    J = np.array([0.3, 0.7, 1.1, 0.2])
    H = np.array([-0.4, 0.0, -0.9, -0.1])
    p_ising = ising(spec, J, H)
    p_potts = potts(spec, 2, 2 * J, -2 * H)
    for x in itertools.product((0, 1), repeat=spec.n_sites):
        lhs = boltzmann_weight(spec, p_ising, x)
        rhs = boltzmann_weight(spec, p_potts, x) - J.sum() + H.sum()
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_draw_params_examples():
    np.testing.assert_array_equal(draw_params(ParamDistribution.constant(0.25), 40), np.full(40, 0.25))
    vals = draw_params(ParamDistribution.uniform(1.15, 1.25), 900, 7)
    assert vals.min() >= 1.15 and vals.max() <= 1.25
    np.testing.assert_array_equal(draw_params(ParamDistribution.explicit([0.1, 0.2]), 2), [0.1, 0.2])


def test_draw_params_reproducible():
    dist = ParamDistribution.uniform(0.1, 1.0)
    np.testing.assert_array_equal(draw_params(dist, 50, 123), draw_params(dist, 50, 123))


def test_draw_params_errors():
    with pytest.raises(ParamDistributionError):
        draw_params(ParamDistribution.uniform(1.0, 0.5), 3, 0)
    with pytest.raises(ParamDistributionError):
        draw_params(ParamDistribution.explicit([0.1]), 2)
    with pytest.raises(ParamDistributionError):
        draw_params(ParamDistribution.constant(1.0), 0)


@pytest.mark.parametrize("mask_fn", [comb_tree_mask, serpentine_tree_mask])
@pytest.mark.parametrize("boundary", ["free", "periodic"])
def test_tree_masks_have_n_minus_one_bonds(mask_fn, boundary):
    spec = build_lattice(4, 5, boundary)
    mask = mask_fn(spec)
    assert mask.sum() == spec.n_sites - 1
    # Union-find: a spanning tree joins every site without a cycle.
    parent = list(range(spec.n_sites))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for b in np.flatnonzero(mask):
        k, l = spec.bonds[b]
        rk, rl = find(k), find(l)
        assert rk != rl
        parent[rk] = rl
    assert len({find(m) for m in range(spec.n_sites)}) == 1


def test_build_instance_is_deterministic():
    spec = build_lattice(4, 4, "periodic")
    args = (ParamDistribution.uniform(0.1, 1.0), ParamDistribution.uniform(1.15, 1.25), ParamDistribution.uniform(0.2, 0.8))
    p1 = build_instance(spec, "ising", *args, seed=5)
    p2 = build_instance(spec, "ising", *args, seed=5)
    np.testing.assert_array_equal(p1.couplings, p2.couplings)
    np.testing.assert_array_equal(p1.fields, p2.fields)
    mask = comb_tree_mask(spec)
    assert np.all((p1.couplings[mask] >= 1.15) & (p1.couplings[mask] <= 1.25))
    assert np.all(p1.couplings[~mask] <= 1.0)


def test_build_instance_substreams_are_independent():
    spec = build_lattice(3, 3, "free")
    H = ParamDistribution.uniform(0.2, 0.8)
    J_B = ParamDistribution.uniform(1.15, 1.25)
    p1 = build_instance(spec, Family.ISING, ParamDistribution.uniform(0.1, 1.0), J_B, H, seed=9)
    p2 = build_instance(spec, Family.ISING, ParamDistribution.constant(0.5), J_B, H, seed=9)
    mask = comb_tree_mask(spec)
    np.testing.assert_array_equal(p1.couplings[mask], p2.couplings[mask])
    np.testing.assert_array_equal(p1.fields, p2.fields)
    assert not math.isclose(float(p1.couplings[~mask][0]), 0.5)
