"""Acceptance criteria 1-7, one PASS/FAIL line each.

Tolerances are fixed here rather than derived inside the library, so a change in
the library cannot loosen its own acceptance bar.
"""

import time

import numpy as np
import pytest

from volcontract import (ContractCPT, ContractFB, ControlGrid, Deviation, SimConfig, best_response_check,
                         build_model, duality_report, equivalence_scan, example3_gap, gamma_from_sigma, gamma_grid,
                         hamiltonian_full, principal_objective, realized_qv_density, sigma_from_gamma, simulate_fb)
from volcontract.duality import conjugate_with_bound

GAMMA_STEP = 1e-3


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}")
        assert ok, detail
    return emit


def _models():
    return {
        "scalar-vol": build_model({"example": "scalar-vol", "gamma_a": 1, "gamma_p": 1, "h": 1, "T": 1}),
        "demand-response": build_model({"example": "demand-response", "sigmas": [1, 1], "lambdas": [1, 4],
                                        "mus": [1, 1]}),
        "quartic": build_model({"example": "quartic", "T": 1, "x0": 0}),
    }


def test_criterion_1_counter_example_gap(report):
    t0 = time.perf_counter()
    sol = example3_gap(T=1.0, x0=0.0, y0=0.0, s_steps=10001, gamma_steps=1201)
    elapsed = time.perf_counter() - t0
    fb, rs = sol.solver["first_best_total"], sol.solver["restricted_total"]
    ok = abs(fb + 23 / 27) <= 1e-6 and abs(rs + 1.0) <= 1e-6 and elapsed < 1.0
    report(1, "counter-example gap", ok,
           f"first_best_total={fb:.9f} (target {-23 / 27:.9f}), restricted_total={rs:.9f}, {elapsed:.2f} s")


def test_criterion_2_duality_verdicts(report):
    m = _models()
    cases = {
        "scalar-vol": (np.linspace(0.01, 1.0, 100), True),
        "demand-response": (np.linspace(0.04, 4.0, 100), True),
        "quartic": (np.linspace(0.0, 1.0, 101), False),
    }
    parts, ok = [], True
    for name, (s_grid, expect) in cases.items():
        model = m[name]
        t0 = time.perf_counter()
        rep = duality_report(model, 0, model.x0, 0, 0, s_grid, gamma_grid(), ControlGrid.from_counts(model))
        elapsed = time.perf_counter() - t0
        good = rep.holds == expect and elapsed < 10
        if name == "quartic":
            step = s_grid[1] - s_grid[0]
            good = good and abs(rep.max_gap - 0.25) <= 5 * rep.eps_grid and abs(rep.witness_S - 0.5) <= step + 1e-12
        ok = ok and good
        parts.append(f"{name} holds={rep.holds} max_gap={rep.max_gap:.4g}@S={rep.witness_S:.4g} "
                     f"tol_gap={rep.tol_gap:.3g} ({elapsed:.2f} s)")
    report(2, "duality verdicts", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_3_closed_form_optimum(report):
    model = _models()["scalar-vol"]
    grid = ControlGrid.from_counts(model)
    z_grid = np.linspace(0.0, 1.0, 101)
    g_grid = np.linspace(-5.0, 0.0, 101)
    s_grid = np.linspace(0.01, 1.0, 101)
    t0 = time.perf_counter()
    rep = equivalence_scan(model, z_grid, g_grid, s_grid, SimConfig(100_000, 1000, master_seed=2024), grid)
    elapsed = time.perf_counter() - t0
    zc, gc, _ = rep.best_cpt
    zf, sf, _ = rep.best_fb
    z_step, g_step, s_step = z_grid[1] - z_grid[0], g_grid[1] - g_grid[0], s_grid[1] - s_grid[0]
    ok = (abs(zf - 0.5) <= z_step + 1e-12 and abs(zc - 0.5) <= z_step + 1e-12
          and abs(sf - 2.5 ** -0.5) <= s_step + 1e-12 and abs(gc + 2.5) <= g_step + 1e-12
          and rep.value_gap <= 3 * rep.pooled_std_error)
    report(3, "closed-form optimum", ok,
           f"best_fb=(z={zf:.3f}, S={sf:.4f}), best_cpt=(z={zc:.3f}, gamma={gc:.3f}), "
           f"value_gap={rep.value_gap:.3g} <= 3*{rep.pooled_std_error:.3g}, {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_4_agent_value_equals_y0(report):
    model = _models()["scalar-vol"]
    grid = ControlGrid.from_counts(model)
    n_steps = 1000
    cpt = ContractCPT(-1.0, 0.5, -2.5)
    deviations = [Deviation((u,), cpt) for u in (0.5, 0.7, 0.9, 1.0)]
    rep = best_response_check(model, ContractFB(-1.0, 0.5, 2.5 ** -0.5), deviations,
                              SimConfig(100_000, n_steps, master_seed=77), grid)
    on = rep.on_policy_value
    dt = model.horizon / n_steps
    value_ok = abs(on.mean + 1.0) <= 3 * on.std_error + 5 * dt
    devs_ok = all(v.mean <= on.mean + 3 * np.hypot(on.std_error, v.std_error) for _, v in rep.deviation_values)
    devs = ", ".join(f"{label.split()[0]}: {v.mean:.4f}" for label, v in rep.deviation_values)
    report(4, "agent value = y0", value_ok and devs_ok and rep.passed,
           f"on-policy {on.mean:.5f} ± {on.std_error:.5f} (y0=-1, allowance {5 * dt:g}); {devs}")


def test_criterion_5_correspondence_round_trip(report):
    m = _models()
    gammas = gamma_grid()
    scalar = m["scalar-vol"]
    scalar_grid = ControlGrid.from_counts(scalar, (100_001,))
    demand = m["demand-response"]
    demand_grid = ControlGrid.from_counts(demand, (3, 3, 100_001, 100_001))
    sigma_bar = demand.params["sigma_bar"]
    cases = [(scalar, scalar_grid, g, (-g) ** -0.5) for g in (-1.5, -2.0, -4.0, -9.0)]
    cases += [(demand, demand_grid, g, sigma_bar / np.sqrt(-g)) for g in (-0.5, -1.0, -4.0)]
    ok, parts = True, []
    for model, grid, g, s_target in cases:
        s = sigma_from_gamma(model, 0, model.x0, 0, 0, g, grid)
        back = gamma_from_sigma(model, 0, model.x0, 0, 0, s, gammas, grid)
        good = abs(back - g) <= 2 * GAMMA_STEP and abs(s - s_target) <= 1e-3
        ok = ok and good
        parts.append(f"{model.name} {g:g}->S={s:.5f}(target {s_target:.5f})->{back:.4f}")
    report(5, "correspondence round trip", ok, "; ".join(parts))


def test_criterion_6_conjugate_identity(report):
    m = _models()
    setups = {
        "scalar-vol": (np.linspace(-20.0, -0.5, 20), np.linspace(1e-4, 1.0, 2001), 0.0),
        "demand-response": (np.linspace(-10.0, -0.1, 20), np.linspace(0.002, 4.0, 2001), -0.3),
        "quartic": (np.linspace(-4.0, 2.0, 20), np.linspace(0.0, 1.0, 2001), 0.0),
    }
    ok, parts = True, []
    for name, (g_values, s_grid, z) in setups.items():
        model = m[name]
        grid = ControlGrid.from_counts(model)
        worst = 0.0
        for g in g_values:
            conj, _, conj_err = conjugate_with_bound(model, 0, model.x0, 0, z, g, s_grid, grid)
            full = hamiltonian_full(model, 0, model.x0, 0, z, g, grid)
            eps = conj_err + full.error_bound
            diff = abs(conj - full.value)
            ratio = diff / (5 * eps) if eps > 0 else (0.0 if diff <= 1e-12 else np.inf)
            worst = max(worst, ratio)
        ok = ok and worst <= 1.0
        parts.append(f"{name} worst |diff|/(5 eps)={worst:.3f}")
    report(6, "conjugate identity", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_7_property_suite(report):
    m = _models()
    scalar = m["scalar-vol"]
    grid = ControlGrid.from_counts(scalar)
    details, ok = [], True

    # seed determinism, including the worker count
    cfg = SimConfig(2000, 100, master_seed=5, chunk_size=512)
    a = simulate_fb(scalar, ContractFB(-1, 0.5, 0.4), cfg, grid)
    b = simulate_fb(scalar, ContractFB(-1, 0.5, 0.4), cfg, grid)
    c = simulate_fb(scalar, ContractFB(-1, 0.5, 0.4), SimConfig(2000, 100, master_seed=5, chunk_size=512,
                                                                workers=3), grid)
    same = all(np.array_equal(getattr(a, k), getattr(b, k)) and np.array_equal(getattr(a, k), getattr(c, k))
               for k in ("X", "Y", "QV", "cost"))
    ok = ok and same
    details.append(f"bit-identical reruns={same}")

    # QV is non-decreasing on 1000 random paths with a time-varying target
    rng = np.random.default_rng(0)
    seed = int(rng.integers(2 ** 32))
    ens = simulate_fb(scalar, ContractFB(-1, 0.5, lambda t, X, Y: 0.2 + 0.6 * t), SimConfig(1000, 1000, seed), grid)
    monotone = bool(np.all(np.diff(ens.traces["QV"], axis=1) >= 0)) and ens.traces["QV"].shape[0] == 1000
    ok = ok and monotone
    details.append(f"QV monotone on 1000 paths={monotone}")

    # realised variance recovers a constant target
    quartic = m["quartic"]
    for model, target in ((scalar, 0.4), (quartic, 0.25)):
        g = ControlGrid.from_counts(model)
        ens = simulate_fb(model, ContractFB(model.reservation, 0.0, target), SimConfig(200, 1000, 13, record=200), g)
        est = np.concatenate([realized_qv_density(ens, p, 100)[1] for p in range(200)])
        err = abs(float(np.mean(est)) - target)
        ok = ok and err <= 0.05
        details.append(f"{model.name} mean realised variance {np.mean(est):.4f} vs {target} (|err|={err:.4f})")

    # weak convergence of Euler on the principal's objective, Delta t = 1/10, 1/20, 1/40 on one Brownian path
    schedule = lambda t, X, Y: 0.4 + 0.4 * t  # noqa: E731
    values = []
    for n_steps, sub in ((10, 4), (20, 2), (40, 1)):
        ens = simulate_fb(scalar, ContractFB(-1, 0.5, schedule), SimConfig(20_000, n_steps, 11, substeps=sub), grid)
        values.append(principal_objective(scalar, ens).mean)
    ratio = (values[0] - values[1]) / (values[1] - values[2])
    ok = ok and 1.5 <= ratio <= 3.0
    details.append(f"weak-convergence ratio {ratio:.3f}")
    report(7, "property suite", ok, "; ".join(details))
