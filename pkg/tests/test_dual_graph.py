import math

import numpy as np
import pytest

from core.dual_graph import (
    DualConfig,
    DualizationError,
    InvalidDualConfig,
    dualize,
    duality_constant,
    enumerate_Zd,
    eval_dual_weight,
    inspect,
    tanh_tables,
)
from core.gf_solver import kernel_basis
from core.lattice_model import EnumerationBudgetError, build_lattice, ising, potts
from modules.primal_mc import enumerate_Z


def _random_ising(rows, cols, boundary, seed, field=True):
    spec = build_lattice(rows, cols, boundary)
    rng = np.random.default_rng(seed)
    sign = -1.0 if seed % 2 else 1.0
    H = sign * rng.uniform(0.0, 0.8, spec.n_sites) if field else 0.0
    return spec, ising(spec, rng.uniform(0.1, 1.3, spec.n_bonds), H)


def _random_valid(dual, n, seed):
    basis = kernel_basis(dual.incidence.toarray(), dual.q)
    coords = np.random.default_rng(seed).integers(0, dual.q, size=(basis.shape[1], n))
    return (basis @ coords) % dual.q


CASES = [
    ("ising 2x2 free", lambda: _random_ising(2, 2, "free", 0, field=False)),
    ("ising 2x2 free field", lambda: _random_ising(2, 2, "free", 1)),
    ("ising 2x2 periodic field", lambda: _random_ising(2, 2, "periodic", 2)),
    ("ising 2x3 free field", lambda: _random_ising(2, 3, "free", 3)),
    ("ising 2x3 periodic", lambda: _random_ising(2, 3, "periodic", 4, field=False)),
    ("ising 3x3 periodic field", lambda: _random_ising(3, 3, "periodic", 5)),
]


@pytest.mark.parametrize("name, make", CASES, ids=[c[0] for c in CASES])
def test_duality_holds_for_ising(name, make):
    spec, params = make()
    dual = dualize(spec, params)
    log_Zd = enumerate_Zd(dual)
    log_Z = enumerate_Z(spec, params).log_Z
    assert abs(log_Zd - log_Z - duality_constant(dual)) < 1e-8


@pytest.mark.parametrize("boundary, H", [("free", 0.0), ("free", 0.4), ("periodic", 0.0), ("periodic", 0.7)])
def test_duality_holds_for_potts(boundary, H):
    spec = build_lattice(2, 2, boundary)
    params = potts(spec, 3, np.linspace(0.3, 1.2, spec.n_bonds), H)
    dual = dualize(spec, params)
    assert abs(enumerate_Zd(dual) - enumerate_Z(spec, params).log_Z - duality_constant(dual)) < 1e-8


@pytest.mark.parametrize("boundary", ["free", "periodic"])
def test_duality_holds_for_potts_2x3_with_site_fields(boundary):
    spec = build_lattice(2, 3, boundary)
    rng = np.random.default_rng(9)
    params = potts(spec, 3, rng.uniform(0.3, 1.5, spec.n_bonds), rng.uniform(0.0, 1.0, spec.n_sites))
    dual = dualize(spec, params)
    assert dual.n_field_vars == 6
    assert abs(enumerate_Zd(dual) - enumerate_Z(spec, params).log_Z - duality_constant(dual)) < 1e-8


def test_two_states_one_bond():
    spec = build_lattice(1, 2, "free")
    dual = dualize(spec, ising(spec, 1.0))
    assert dual.n_bond_vars == 1 and dual.n_field_vars == 0
    expected = math.log(4.0 * math.cosh(1.0))
    assert enumerate_Zd(dual) == pytest.approx(expected)
    assert eval_dual_weight(dual, DualConfig(z=[0], y=[])) == pytest.approx(expected)
    with pytest.raises(InvalidDualConfig):
        eval_dual_weight(dual, DualConfig(z=[1], y=[]))


def test_duality_constant_counts():
    spec = build_lattice(2, 2, "periodic")
    with_field = dualize(spec, ising(spec, 0.5, -0.3))
    assert with_field.edge_count == 12
    assert duality_constant(with_field) == pytest.approx(16 * math.log(2))
    no_field = dualize(spec, ising(spec, 0.5))
    assert no_field.edge_count == 8
    assert duality_constant(no_field) == pytest.approx(12 * math.log(2))
    big = build_lattice(30, 30, "periodic")
    assert dualize(big, ising(big, 0.5, 0.2)).edge_count == 2700


def test_ising_tables():
    spec = build_lattice(1, 2, "free")
    dual = dualize(spec, ising(spec, [0.0], [0.0, 0.3]))
    np.testing.assert_allclose(dual.gamma_tables[0], [4.0, 0.0])
    np.testing.assert_allclose(dual.lambda_tables[0], [2.0, 0.0])
    np.testing.assert_allclose(dual.lambda_tables[1], [2 * math.cosh(0.3), 2 * math.sinh(0.3)])


def test_field_sign_does_not_change_tables():
    spec, params = _random_ising(3, 3, "free", 7)
    a = dualize(spec, params)
    b = dualize(spec, params.with_fields(-params.fields))
    np.testing.assert_array_equal(a.lambda_tables, b.lambda_tables)
    assert np.all(a.lambda_tables >= 0) and np.all(a.gamma_tables > 0)


def test_mixed_sign_ising_fields_are_rejected():
    spec = build_lattice(2, 3, "free")
    params = ising(spec, 0.6, [0.5, -0.5, 0.5, -0.5, 0.5, -0.5])
    with pytest.raises(DualizationError, match="mixed sign"):
        dualize(spec, params)
    zeros_ok = dualize(spec, ising(spec, 0.6, [0.0, -0.5, 0.0, -0.2, -0.1, 0.0]))
    assert np.all(zeros_ok.lambda_tables >= 0)


def test_potts_tables():
    spec = build_lattice(1, 2, "free")
    dual = dualize(spec, potts(spec, 4, 2.25, 0.5))
    e = math.exp(2.25)
    np.testing.assert_allclose(dual.gamma_tables[0], [4 * (e + 3), 4 * (e - 1), 4 * (e - 1), 4 * (e - 1)])
    eh = math.exp(0.5)
    np.testing.assert_allclose(dual.lambda_tables[0], [eh + 3, eh - 1, eh - 1, eh - 1])


def test_incidence_coefficients():
    spec = build_lattice(1, 2, "free")
    dual = dualize(spec, potts(spec, 3, 1.0, 0.2))
    assert dual.site_constraints() == (((0, 1), (1, 1)), ((0, 2), (2, 1)))


def test_tanh_form_matches_raw_weights():
    spec, params = _random_ising(4, 4, "free", 8)
    raw = dualize(spec, params)
    th = tanh_tables(raw)
    X = _random_valid(raw, 1000, 9)
    nb = raw.n_bond_vars
    for x in X.T[:200]:
        cfg = DualConfig(z=x[:nb], y=x[nb:])
        assert eval_dual_weight(th, cfg) == pytest.approx(eval_dual_weight(raw, cfg), abs=1e-10)
    np.testing.assert_allclose(th.log_weight(X) + th.log_scale, raw.log_weight(X), atol=1e-10)


def test_tanh_zero_config_weighs_log_scale():
    spec, params = _random_ising(2, 3, "free", 10)
    th = tanh_tables(dualize(spec, params))
    zero = DualConfig(z=np.zeros(th.n_bond_vars, dtype=int), y=np.zeros(th.n_field_vars, dtype=int))
    assert eval_dual_weight(th, zero) == th.log_scale


def test_tanh_tables_saturate_for_strong_coupling():
    spec = build_lattice(1, 2, "free")
    th = tanh_tables(dualize(spec, ising(spec, 40.0)))
    np.testing.assert_allclose(th.gamma_tables[0], [1.0, 1.0])


def test_tanh_keeps_partition_function():
    spec, params = _random_ising(2, 3, "periodic", 12)
    raw = dualize(spec, params)
    assert enumerate_Zd(tanh_tables(raw)) == pytest.approx(enumerate_Zd(raw), abs=1e-9)


def test_tanh_rejects_potts():
    spec = build_lattice(2, 2, "free")
    with pytest.raises(DualizationError):
        tanh_tables(dualize(spec, potts(spec, 3, 1.0)))


def test_eval_dual_weight_shape_errors():
    spec = build_lattice(1, 2, "free")
    dual = dualize(spec, ising(spec, 1.0, 0.3))
    with pytest.raises(ValueError):
        eval_dual_weight(dual, DualConfig(z=[0], y=[0]))
    with pytest.raises(ValueError):
        eval_dual_weight(dual, DualConfig(z=[0], y=[0, 2]))


def test_enumeration_budget():
    spec = build_lattice(3, 3, "periodic")
    with pytest.raises(EnumerationBudgetError):
        enumerate_Zd(dualize(spec, ising(spec, 0.5, 0.2)), budget=16)


def test_inspect_dump():
    spec = build_lattice(2, 2, "free")
    info = inspect(dualize(spec, ising(spec, 0.5, 0.1)))
    assert info["E"] == 8
    assert info["n_field_vars"] == 4
    assert len(info["gamma_tables"]) == 4
    assert len(info["site_constraints"]) == 4
