import json

import numpy as np
import pytest

from volcontract import (ContractCPT, ContractFB, ControlGrid, Deviation, NumericalError, SimConfig,
                         ValidationError, best_response_check, duality_report, equivalence_scan,
                         example1_closed_form, example1_hjb_ode, example2_closed_form, example3_gap, gamma_grid)


def test_best_response_scalar(scalar_vol, scalar_grid):
    cpt = ContractCPT(-1, 0.5, -2.5)
    rep = best_response_check(scalar_vol, ContractFB(-1, 0.5, 2.5 ** -0.5),
                              [Deviation((u,), cpt) for u in (0.5, 0.7, 1.0)], SimConfig(4000, 200, 1),
                              scalar_grid)
    assert rep.passed
    assert rep.on_policy_value.mean == pytest.approx(-1, abs=0.05)
    assert len(rep.deviation_values) == 3
    assert json.loads(json.dumps(rep.to_dict()))["pass"] is True


def test_best_response_quartic_symmetry(quartic, quartic_grid):
    rep = best_response_check(quartic, ContractFB(0, 0, 1.0), [(-1.0,)], SimConfig(500, 50, 1), quartic_grid)
    (_, dev), on = rep.deviation_values[0], rep.on_policy_value
    assert abs(dev.mean - on.mean) <= 3 * np.hypot(dev.std_error, on.std_error) + 1e-12
    assert rep.passed


def test_best_response_idle_deviation_loses(quartic, quartic_grid):
    rep = best_response_check(quartic, ContractFB(0, 0, 1.0), [Deviation((0.0,), ContractCPT(0, 0, 0.0))],
                              SimConfig(500, 50, 1), quartic_grid)
    assert rep.deviation_values[0][1].mean < rep.on_policy_value.mean - 0.5
    assert rep.passed


def test_best_response_requires_feasible_deviation(quartic, quartic_grid):
    with pytest.raises(ValidationError, match="variance"):
        best_response_check(quartic, ContractFB(0, 0, 1.0), [(0.5,)], SimConfig(10, 10, 1), quartic_grid)


def test_best_response_infeasible_on_policy(quartic, quartic_grid):
    with pytest.raises(NumericalError):
        best_response_check(quartic, ContractFB(0, 0, 3.0), [], SimConfig(10, 10, 1), quartic_grid)


def test_equivalence_scalar_small(scalar_vol, scalar_grid):
    rep = equivalence_scan(scalar_vol, np.linspace(0, 1, 11), np.linspace(-5, -0.5, 19),
                           np.linspace(0.1, 1, 19), SimConfig(20000, 100, 3), scalar_grid)
    zc, gc, vc = rep.best_cpt
    zf, sf, vf = rep.best_fb
    assert zc == pytest.approx(0.5) and zf == pytest.approx(0.5)
    assert gc == pytest.approx(-2.5) and sf == pytest.approx(0.65)
    assert rep.value_gap <= 3 * rep.pooled_std_error
    assert rep.corresponding
    assert rep.cpt_csv().splitlines()[0] == "z,gamma,mean,std_error"
    assert len(rep.fb_csv().splitlines()) == 1 + 11 * 19


def test_equivalence_quartic_fails(quartic, quartic_grid):
    rep = equivalence_scan(quartic, [-1.0, 0.0, 1.0], np.linspace(-4, 0, 41), np.linspace(0, 1, 31),
                           SimConfig(2000, 100, 3), quartic_grid)
    assert rep.best_fb[1] == pytest.approx(2 / 3)
    assert rep.best_cpt[2].mean == pytest.approx(-1.0, abs=1e-9)
    assert rep.value_gap == pytest.approx(4 / 27, abs=2e-3)


def test_equivalence_degenerate(quartic, quartic_grid):
    rep = equivalence_scan(quartic, [0.0], [0.0], [1.0], SimConfig(1000, 50, 3), quartic_grid)
    assert rep.value_gap <= 3 * rep.pooled_std_error
    assert rep.corresponding


def test_equivalence_empty_grid(quartic, quartic_grid):
    with pytest.raises(ValidationError):
        equivalence_scan(quartic, [], [0.0], [1.0], SimConfig(10, 10, 1), quartic_grid)


def test_equivalence_deterministic(quartic, quartic_grid):
    args = (quartic, [0.0, 0.5], [-1.0, 0.0], [0.5, 1.0], SimConfig(500, 20, 9), quartic_grid)
    a, b = equivalence_scan(*args), equivalence_scan(*args)
    assert a.cpt_csv() == b.cpt_csv() and a.fb_csv() == b.fb_csv()


def test_example1_interior():
    sol = example1_closed_form(1, 1, 1, 1, 0, -1)
    c = sol.closed_form
    assert c["gamma_bar"] == 0.5 and c["Z"] == 0.5
    assert c["Sigma"] == pytest.approx(0.63246, abs=1e-5)
    assert c["Gamma"] == pytest.approx(-2.5)
    assert c["nu"] == pytest.approx(0.79527, abs=1e-5)
    assert sol.errors["Sigma"] < 1e-3 and sol.errors["Z"] < 1e-3 and sol.errors["Gamma"] < 2e-3
    assert set(sol.formulas) >= {"Z", "Sigma", "Gamma", "nu"}
    json.dumps(sol.to_dict())


def test_example1_principal_value():
    sol = example1_closed_form(1, 1, 1, 1, 0, -1)
    # U_A^{-1}(-1) = 0 and b(0) = -sqrt(2.5)
    assert sol.principal_value == pytest.approx(-np.exp(np.sqrt(2.5)), rel=1e-6)


def test_example1_cap_branch():
    sol = example1_closed_form(1, 1, 0.1)
    assert sol.closed_form["Sigma"] == 1.0 and sol.closed_form["nu"] == 1.0 and sol.closed_form["Gamma"] == -1.0
    assert sol.solver["Sigma"] == pytest.approx(1.0) and sol.solver["nu"] == pytest.approx(1.0)
    big = example1_closed_form(0.8, 1e6, 0.0)
    assert big.closed_form["Sigma"] == 1.0


def test_example1_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        example1_closed_form(0, 1, 1)
    with pytest.raises(ValidationError):
        example1_hjb_ode(1, 1, 1, 1, 0)
    with pytest.raises(ValidationError):
        example1_hjb_ode(1, 1, 1, 1, 10, z_grid=[])


def test_hjb_ode():
    sol = example1_hjb_ode(1, 1, 1, 1.0, 100)
    assert sol.z_star == pytest.approx(0.5) and sol.s_star == pytest.approx(0.63246, abs=1e-4)
    assert sol.b[-1] == 0.0 and sol.b[0] == pytest.approx(-np.sqrt(2.5), abs=1e-6)
    assert example1_hjb_ode(1, 1, 1, 0.0, 10).b[0] == 0.0


def test_hjb_ode_refinement_rate():
    errs = []
    for n in (101, 201, 401):
        sol = example1_hjb_ode(1, 1, 1, 1.0, 10, z_grid=np.linspace(0, 1, n), s_grid=np.linspace(0.01, 1, n))
        errs.append(abs(sol.s_star - 2.5 ** -0.5))
    assert errs[-1] <= 1.0 / 400


def test_example2_maps():
    sol = example2_closed_form([1, 1], [1, 4], [1, 1])
    m = sol.maps
    assert sol.closed_form["sigma_bar"] == 1.5
    assert m["b_star"](-1.0) == pytest.approx([1.0, 0.5])
    assert m["b_circ"](1.5) == pytest.approx([1.0, 0.5])
    assert m["a_star"](0.2) == pytest.approx([0.0, 0.0])
    assert m["a_star"](-0.5) == pytest.approx([0.5, 0.5])
    assert m["s_of_gamma"](-4.0) == pytest.approx(0.75)
    assert m["gamma_of_s"](0.75) == pytest.approx(-4.0)
    with pytest.raises(ValidationError):
        example2_closed_form([1, -1], [1, 4], [1, 1])


def test_example2_agrees_with_grid(demand, demand_grid):
    from volcontract import hamiltonian_constrained
    ev = hamiltonian_constrained(demand, 0, 0, 0, 0.0, 1.5, demand_grid)
    assert ev.argmax[2:] == pytest.approx([1.0, 0.5], abs=0.05)


def test_example3():
    sol = example3_gap(1.0, 0.0, 0.0, 10001, 1201)
    assert sol.solver["first_best_total"] == pytest.approx(-23 / 27, abs=1e-6)
    assert sol.solver["restricted_total"] == pytest.approx(-1.0, abs=1e-6)
    assert sol.solver["S_star"] == pytest.approx(2 / 3, abs=1e-4)
    lo, hi = sol.solver["gamma_star_interval"]
    assert lo <= -2.0 <= hi
    assert sol.solver["restricted_value_at_minus_2"] == pytest.approx(-1.0)
    with pytest.raises(ValidationError):
        example3_gap(s_steps=2)


def test_example3_duality(quartic):
    grid = ControlGrid.from_counts(quartic)
    rep = duality_report(quartic, 0, 0, 0, 0, np.linspace(0, 1, 101), gamma_grid(), grid)
    assert rep.max_gap == pytest.approx(0.25, abs=5 * rep.eps_grid)
    assert rep.witness_S == pytest.approx(0.5)
