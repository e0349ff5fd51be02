import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volcontract import (ContractCPT, ContractFB, ControlGrid, SimConfig, agent_objective, biconjugate,
                         build_model, eval_coefficients, gamma_grid, hamiltonian_constrained, hamiltonian_full,
                         sigma_from_gamma, simulate_cpt, simulate_fb)
from volcontract.hamiltonian import constrained_profile

QUARTIC = build_model({"example": "quartic"})
SCALAR = build_model({"example": "scalar-vol"})
Q_GRID = ControlGrid.from_counts(QUARTIC, (2001,))
S_GRID = ControlGrid.from_counts(SCALAR)


@given(st.floats(-1, 1))
def test_quartic_cost_symmetric(u):
    assert eval_coefficients(QUARTIC, 0, 0, [u]).cost == eval_coefficients(QUARTIC, 0, 0, [-u]).cost


@given(st.floats(1e-3, 1))
def test_coefficients_pure(u):
    a, b = eval_coefficients(SCALAR, 0.3, 0.1, [u]), eval_coefficients(SCALAR, 0.3, 0.1, [u])
    assert a == b


@settings(max_examples=25, deadline=None)
@given(st.floats(-6, 3), st.floats(-1, 1))
def test_refinement_never_lowers_full_value(gamma, z):
    coarse = ControlGrid.from_counts(QUARTIC, (101,))
    fine = ControlGrid.from_counts(QUARTIC, (201,))
    assert hamiltonian_full(QUARTIC, 0, 0, 0, z, gamma, fine).value >= \
        hamiltonian_full(QUARTIC, 0, 0, 0, z, gamma, coarse).value - 1e-12


@pytest.mark.parametrize("S", [0, 0.25, 0.5, 0.75, 1])
def test_quartic_constrained_closed_form(S):
    grid = ControlGrid.from_counts(QUARTIC, (20001,))
    ev = hamiltonian_constrained(QUARTIC, 0, 0, 0, 0, S, grid, 1e-4)
    assert abs(ev.value - (S * S - 1)) <= max(ev.error_bound, 1e-4)


@pytest.mark.parametrize("gamma", [-4, -2, 0, 1])
def test_quartic_full_closed_form(gamma):
    ev = hamiltonian_full(QUARTIC, 0, 0, 0, 0, gamma, Q_GRID)
    assert abs(ev.value - max(gamma / 2, -1)) <= ev.error_bound + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, -0.5), st.floats(0.05, 1))
def test_full_dominates_constrained(gamma, S):
    full = hamiltonian_full(SCALAR, 0, 0, 0, 0, gamma, S_GRID)
    con = hamiltonian_constrained(SCALAR, 0, 0, 0, 0, S, S_GRID)
    assert con.feasible
    assert full.value >= con.value + 0.5 * gamma * S - con.error_bound - full.error_bound - 1e-9


def test_fenchel_moreau_direction():
    s_values = np.linspace(0, 1, 21)
    for ev, S in zip(constrained_profile(QUARTIC, 0, 0, 0, 0, s_values, Q_GRID, 1e-3), s_values):
        value, _ = biconjugate(QUARTIC, 0, 0, 0, 0, S, gamma_grid(-10, 2), Q_GRID)
        assert value >= ev.value - 5 * ev.error_bound - 1e-9


@pytest.mark.parametrize("gamma", [-1.5, -3.0, -8.0])
def test_argmax_transport(gamma):
    full = hamiltonian_full(SCALAR, 0, 0, 0, 0, gamma, S_GRID)
    S = sigma_from_gamma(SCALAR, 0, 0, 0, 0, gamma, S_GRID)
    con = hamiltonian_constrained(SCALAR, 0, 0, 0, 0, S, S_GRID)
    assert con.argmax[0] == pytest.approx(full.argmax[0], abs=0.01)


def test_tie_breaking_deterministic():
    a = hamiltonian_full(QUARTIC, 0, 0, 0, 0, -2.0, Q_GRID).argmax
    b = hamiltonian_full(QUARTIC, 0, 0, 0, 0, -2.0, ControlGrid.from_counts(QUARTIC, (2001,))).argmax
    assert np.array_equal(a, b)


def test_bookkeeping_identity():
    ens = simulate_fb(SCALAR, ContractFB(-1, 0.5, 0.4), SimConfig(50, 40, 3), S_GRID)
    assert np.allclose(ens.Y, ens.y_start + ens.y_increments, atol=1e-10)


def test_linear_martingale():
    model = build_model({"custom": {
        "horizon": 1.0, "control_box": [[0.5, 1.0]], "vol": [[{"coef": 1.0, "u": [1]}]],
        "cost": 0.0, "reservation": 0.3, "grid": [11],
    }})
    grid = ControlGrid.from_counts(model)
    est = agent_objective(model, simulate_cpt(model, ContractCPT(0.3, 0.7, 0.0), SimConfig(4000, 50, 2), grid))
    assert abs(est.mean - 0.3) <= 3 * est.std_error + 1e-12
