"""Numerical checks: agent best response, contract-form equivalence, worked examples."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .duality import fmt, gamma_from_sigma, gamma_grid, sigma_from_gamma
from .hamiltonian import default_tol_s, hamiltonian_full, hamiltonian_full_batch
from .model import (ControlGrid, ModelSpec, NumericalError, ValidationError, build_model,
                    coefficient_arrays)
from .simulate import (ContractCPT, ContractFB, MCEstimate, SimConfig, agent_objective,
                       constant_policy_supported, constant_policy_terminal, principal_objective,
                       simulate_cpt, simulate_fb, terminal_noise, with_offset)


def _pooled(a: MCEstimate, b: MCEstimate) -> float:
    return float(np.hypot(a.std_error, b.std_error))


# ---------------------------------------------------------------------------
# best response


@dataclass(frozen=True)
class Deviation:
    """Constant control played instead of the maximiser.

    With ``contract=None`` the deviation is paid by the first-best contract under
    test and must hit its variance target; otherwise it is paid by ``contract``.
    """

    control: tuple
    contract: ContractCPT | None = None
    label: str = ""

    def describe(self) -> str:
        if self.label:
            return self.label
        u = ", ".join(f"{v:g}" for v in np.ravel(self.control))
        form = "fb" if self.contract is None else "cpt"
        return f"u=({u}) [{form}]"


@dataclass
class BestResponseReport:
    on_policy_value: MCEstimate
    deviation_values: list
    y0: float
    passed: bool
    allowance: float
    n_steps: int

    def to_dict(self) -> dict:
        return {
            "on_policy": self.on_policy_value.to_dict(),
            "deviations": [{"deviation": d, **v.to_dict()} for d, v in self.deviation_values],
            "y0": self.y0,
            "allowance": self.allowance,
            "pass": self.passed,
        }


def best_response_check(model: ModelSpec, contract_fb: ContractFB, deviations, cfg: SimConfig,
                        grid: ControlGrid | None = None, tol_s=None, allowance=None) -> BestResponseReport:
    grid = grid or ControlGrid.from_counts(model)
    tol_s = default_tol_s(model, 0.0, model.x0, grid) if tol_s is None else tol_s
    on = simulate_fb(model, contract_fb, with_offset(cfg, 0), grid, tol_s)
    if not on.feasible.any():
        raise NumericalError("on-policy simulation is infeasible on every path")
    on_value = agent_objective(model, on)
    dt = model.horizon / cfg.n_steps
    allowance = 5.0 * dt if allowance is None else float(allowance)

    results = []
    for i, dev in enumerate(deviations):
        if not isinstance(dev, Deviation):
            dev = Deviation(tuple(np.ravel(dev)))
        u = np.asarray(dev.control, dtype=float).reshape(1, -1)
        sub = with_offset(cfg, i + 1)
        if dev.contract is None:
            if callable(contract_fb.sigma_policy):
                raise ValidationError("first-best deviations need a constant sigma policy; pass a CPT contract")
            var = float(coefficient_arrays(model, 0.0, model.x0, u)[2][0])
            if abs(var - float(contract_fb.sigma_policy)) > tol_s:
                raise ValidationError(f"deviation {dev.describe()} misses the variance target; pass a CPT contract")
            ens = simulate_fb(model, contract_fb, sub, grid, tol_s, effort=u[0])
        else:
            ens = simulate_cpt(model, dev.contract, sub, grid, effort=u[0])
        results.append((dev.describe(), agent_objective(model, ens)))

    ok = abs(on_value.mean - contract_fb.y0) <= 3.0 * on_value.std_error + allowance
    ok = ok and all(v.mean <= on_value.mean + 3.0 * _pooled(on_value, v) for _, v in results)
    return BestResponseReport(on_value, results, float(contract_fb.y0), bool(ok), allowance, cfg.n_steps)


# ---------------------------------------------------------------------------
# equivalence scan over constant policies


@dataclass
class EquivalenceReport:
    best_cpt: tuple
    best_fb: tuple
    value_gap: float
    pooled_std_error: float
    corresponding: bool
    sigma_of_best_gamma: float
    cpt_surface: list = field(default_factory=list)
    fb_surface: list = field(default_factory=list)

    def to_dict(self) -> dict:
        zc, gc, vc = self.best_cpt
        zf, sf, vf = self.best_fb
        return {
            "best_cpt": {"z": zc, "gamma": gc, **vc.to_dict()},
            "best_fb": {"z": zf, "S": sf, **vf.to_dict()},
            "value_gap": self.value_gap,
            "pooled_std_error": self.pooled_std_error,
            "corresponding": self.corresponding,
            "sigma_of_best_gamma": self.sigma_of_best_gamma,
        }

    @staticmethod
    def _csv(rows, name) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", name, "mean", "std_error"])
        for z, p, est in rows:
            w.writerow([fmt(z), fmt(p), fmt(est.mean), fmt(est.std_error)])
        return buf.getvalue()

    def cpt_csv(self) -> str:
        return self._csv(self.cpt_surface, "gamma")

    def fb_csv(self) -> str:
        return self._csv(self.fb_surface, "S")


def _scan(model, form, cells, cfg, grid, tol_s, y0, workers):
    if constant_policy_supported(model):
        dt = model.horizon / cfg.n_steps
        W = terminal_noise(cfg, dt, model.noise_dim)

        def run(cell):
            z, p = cell
            ens = constant_policy_terminal(model, form, y0, z, p, W, cfg.n_steps, grid, tol_s)
            return principal_objective(model, ens)
    else:
        def run(cell):
            z, p = cell
            if form == "cpt":
                ens = simulate_cpt(model, ContractCPT(y0, z, p), cfg, grid)
            else:
                ens = simulate_fb(model, ContractFB(y0, z, p), cfg, grid, tol_s)
            return principal_objective(model, ens)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def _best(rows):
    means = np.array([r[2].mean if r[2].n else -np.inf for r in rows])
    if not np.isfinite(means).any():
        raise NumericalError("every scanned cell is infeasible")
    return rows[int(np.argmax(np.where(np.isfinite(means), means, -np.inf)))]


def equivalence_scan(model: ModelSpec, z_grid, gamma_values, s_grid, cfg: SimConfig,
                     grid: ControlGrid | None = None, tol_s=None, y0=None) -> EquivalenceReport:
    """Brute-force the principal's value over constant (z, gamma) and constant (z, S)."""
    grid = grid or ControlGrid.from_counts(model)
    z_grid = np.asarray(z_grid, dtype=float).ravel()
    gamma_values = np.asarray(gamma_values, dtype=float).ravel()
    s_grid = np.asarray(s_grid, dtype=float).ravel()
    if min(z_grid.size, gamma_values.size, s_grid.size) == 0:
        raise ValidationError("scan grids must be non-empty")
    tol_s = default_tol_s(model, 0.0, model.x0, grid) if tol_s is None else tol_s
    y0 = model.reservation if y0 is None else float(y0)

    cpt_cells = [(z, g) for z in z_grid for g in gamma_values]
    fb_cells = [(z, s) for z in z_grid for s in s_grid]
    cpt_vals = _scan(model, "cpt", cpt_cells, cfg, grid, tol_s, y0, cfg.workers)
    fb_vals = _scan(model, "fb", fb_cells, cfg, grid, tol_s, y0, cfg.workers)
    cpt_rows = [(float(z), float(g), v) for (z, g), v in zip(cpt_cells, cpt_vals)]
    fb_rows = [(float(z), float(s), v) for (z, s), v in zip(fb_cells, fb_vals)]
    bc, bf = _best(cpt_rows), _best(fb_rows)

    s_sorted = np.unique(s_grid)
    s_step = float(np.max(np.diff(s_sorted))) if s_sorted.size > 1 else 0.0
    s_of_g = sigma_from_gamma(model, 0.0, model.x0, 0.0, bc[0], bc[1], grid)
    corresponding = abs(s_of_g - bf[1]) <= s_step + tol_s
    return EquivalenceReport(bc, bf, abs(bc[2].mean - bf[2].mean), _pooled(bc[2], bf[2]),
                             bool(corresponding), s_of_g, cpt_rows, fb_rows)


# ---------------------------------------------------------------------------
# worked examples


@dataclass
class ExampleSolution:
    example: str
    closed_form: dict
    formulas: dict
    solver: dict
    agent_value: float | None = None
    principal_value: float | None = None
    errors: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    maps: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "example": self.example,
            "closed_form": self.closed_form,
            "formulas": self.formulas,
            "solver": self.solver,
            "agent_value": self.agent_value,
            "principal_value": self.principal_value,
            "errors": self.errors,
            **self.extra,
        }


@dataclass
class HJBSolution:
    t: np.ndarray
    b: np.ndarray
    z_star: float
    s_star: float
    rate: float


def _check_positive(**kw):
    for k, v in kw.items():
        if not float(v) > 0:
            raise ValidationError(f"{k} must be > 0, got {v}")


def example1_hjb_ode(gamma_a, gamma_p, h, T, n_steps=1000, z_grid=None, s_grid=None) -> HJBSolution:
    """Backward Euler for b' = min_{z,S} {1/S + gamma_a S z^2 + 2 h S + gamma_p S (1-z)^2} / 2, b(T) = 0."""
    _check_positive(gamma_a=gamma_a, gamma_p=gamma_p)
    if int(n_steps) < 1:
        raise ValidationError("n_steps must be >= 1")
    if T < 0:
        raise ValidationError("T must be >= 0")
    z_grid = np.linspace(0.0, 1.0, 1001) if z_grid is None else np.asarray(z_grid, dtype=float)
    s_grid = np.linspace(1e-4, 1.0, 10000) if s_grid is None else np.asarray(s_grid, dtype=float)
    if z_grid.size == 0 or s_grid.size == 0:
        raise ValidationError("z_grid and s_grid must be non-empty")
    Z, S = z_grid[:, None], s_grid[None, :]
    integrand = 1.0 / S + gamma_a * S * Z ** 2 + 2.0 * h * S + gamma_p * S * (1.0 - Z) ** 2
    i, j = np.unravel_index(np.argmin(integrand), integrand.shape)
    rate = 0.5 * float(integrand[i, j])
    t = np.linspace(0.0, T, int(n_steps) + 1)
    dt = T / int(n_steps)
    b = np.zeros(t.size)
    for k in range(int(n_steps) - 1, -1, -1):
        # the generator does not depend on (t, b), so each backward step is exact
        b[k] = b[k + 1] - dt * rate
    return HJBSolution(t, b, float(z_grid[i]), float(s_grid[j]), rate)


def example1_closed_form(gamma_a, gamma_p, h, T=1.0, x0=0.0, R_A=-1.0, n_steps=1000,
                         z_grid=None, s_grid=None, grid: ControlGrid | None = None) -> ExampleSolution:
    _check_positive(gamma_a=gamma_a, gamma_p=gamma_p)
    if h < 0:
        raise ValidationError("h must be >= 0")
    gbar = gamma_p / (gamma_p + gamma_a)
    K = 2.0 * h + gamma_a * gbar
    sigma = min(1.0, K ** -0.5)
    closed = {"gamma_bar": gbar, "Z": gbar, "Sigma": sigma, "Gamma": -sigma ** -2,
              "nu": min(1.0, K ** -0.25), "K": K}
    formulas = {
        "gamma_bar": "gamma_p / (gamma_p + gamma_a)",
        "Z": "gamma_bar",
        "Sigma": "min(1, (2h + gamma_a gamma_bar)^(-1/2))",
        "Gamma": "-Sigma^(-2)",
        "nu": "min(1, (2h + gamma_a gamma_bar)^(-1/4))",
        "principal_value": "-exp(-gamma_p (x0 - U_A^{-1}(R_A) + b(0)))",
        "b(0)": "backward Euler for b' = min_{z,S}{1/S + gamma_a S z^2 + 2hS + gamma_p S (1-z)^2} / 2, b(T) = 0",
    }
    ode = example1_hjb_ode(gamma_a, gamma_p, h, T, n_steps, z_grid, s_grid)
    model = build_model({"example": "scalar-vol", "gamma_a": gamma_a, "gamma_p": gamma_p, "h": h,
                         "T": max(T, 1e-12), "x0": x0, "reservation": R_A})
    grid = grid or ControlGrid.from_counts(model)
    g_solver = gamma_from_sigma(model, 0.0, x0, 0.0, ode.z_star, ode.s_star, gamma_grid(), grid)
    nu_solver = float(hamiltonian_full(model, 0.0, x0, 0.0, ode.z_star, g_solver, grid).argmax[0])
    solver = {"Z": ode.z_star, "Sigma": ode.s_star, "Gamma": g_solver, "nu": nu_solver, "b0": float(ode.b[0])}
    errors = {k: abs(solver[k] - closed[k]) for k in ("Z", "Sigma", "Gamma", "nu")}
    y_level = model.agent_utility.inverse(R_A)
    with np.errstate(over="ignore"):
        value = float(-np.exp(-gamma_p * (x0 - y_level + ode.b[0])))
    closed_b0 = -(np.sqrt(K) if K >= 1 else 0.5 * (1.0 + K)) * T
    closed["b0"] = float(closed_b0)
    formulas["b0"] = "-sqrt(K) T if K >= 1 else -(1 + K) T / 2"
    errors["b0"] = abs(float(ode.b[0]) - closed_b0)
    return ExampleSolution("1", closed, formulas, solver, float(R_A), value, errors,
                           extra={"b": {"t": ode.t.tolist(), "b": ode.b.tolist()}})


def example2_closed_form(sigmas, lambdas, mus, kappa=0.0) -> ExampleSolution:
    sigmas = np.asarray(sigmas, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    mus = np.asarray(mus, dtype=float)
    if sigmas.size == 0 or not (sigmas.shape == lambdas.shape == mus.shape):
        raise ValidationError("sigmas, lambdas and mus must be non-empty and equally long")
    if np.any(sigmas <= 0) or np.any(lambdas <= 0) or np.any(mus <= 0):
        raise ValidationError("sigmas, lambdas and mus must be positive")
    s2 = sigmas ** 2
    sbar = float(np.sum(s2 / np.sqrt(lambdas)))
    mbar = float(np.sum(mus))

    def a_star(z):
        return np.maximum(-mus * z, 0.0)

    def b_star(gamma):
        if not gamma < 0:
            raise ValidationError("interior volatility effort needs gamma < 0")
        return (-lambdas * gamma) ** -0.5

    def b_circ(S):
        return S / (sbar * np.sqrt(lambdas))

    def s_of_gamma(gamma):
        return sbar / np.sqrt(-gamma)

    def gamma_of_s(S):
        return -sbar ** 2 / S ** 2

    def h_full(z, gamma, x=0.0):
        return kappa * x + 0.5 * mbar * min(z, 0.0) ** 2 - sbar * np.sqrt(-gamma)

    def h_constrained(z, S, x=0.0):
        return kappa * x + 0.5 * mbar * min(z, 0.0) ** 2 - sbar ** 2 / (2.0 * S)

    maps = {"a_star": a_star, "a_circ": a_star, "b_star": b_star, "b_circ": b_circ,
            "s_of_gamma": s_of_gamma, "gamma_of_s": gamma_of_s,
            "hamiltonian_full": h_full, "hamiltonian_constrained": h_constrained}
    closed = {"sigma_bar": sbar, "mu_bar": mbar,
              "b_star(-1)": b_star(-1.0).tolist(), "b_circ(sigma_bar)": b_circ(sbar).tolist()}
    formulas = {
        "sigma_bar": "sum_k sigma_k^2 / sqrt(lambda_k)",
        "a_star": "max(-mu_k z, 0)",
        "b_star": "(-lambda_k gamma)^(-1/2)",
        "b_circ": "S / (sigma_bar sqrt(lambda_k))",
        "s_of_gamma": "sigma_bar / sqrt(-gamma)",
        "gamma_of_s": "-sigma_bar^2 / S^2",
        "hamiltonian_full": "kappa x + mu_bar min(z,0)^2 / 2 - sigma_bar sqrt(-gamma)",
        "hamiltonian_constrained": "kappa x + mu_bar min(z,0)^2 / 2 - sigma_bar^2 / (2 S)",
    }
    return ExampleSolution("2", closed, formulas, {}, maps=maps)


def example3_gap(T=1.0, x0=0.0, y0=0.0, s_steps=10001, gamma_steps=1201, gamma_range=(-10.0, 2.0),
                 grid: ControlGrid | None = None) -> ExampleSolution:
    if int(s_steps) < 3 or int(gamma_steps) < 3:
        raise ValidationError("s_steps and gamma_steps must be >= 3")
    S = np.linspace(0.0, 1.0, int(s_steps))
    gain = S ** 2 - S ** 3
    i = int(np.argmax(gain))
    first_best_gain = float(gain[i])

    model = build_model({"example": "quartic", "T": max(T, 1e-12), "x0": x0, "reservation": y0})
    grid = grid or ControlGrid.from_counts(model, (2001,))
    gammas = np.linspace(gamma_range[0], gamma_range[1], int(gamma_steps))
    values, controls = hamiltonian_full_batch(model, 0.0, x0, 0.0, 0.0, gammas, grid)
    u2 = controls[:, 0] ** 2
    restricted = values - 0.5 * gammas * u2 - u2 ** 3
    j = int(np.argmax(restricted))
    top = restricted[j]
    ties = gammas[restricted >= top - 1e-12 * max(1.0, abs(top))]
    k2 = int(np.argmin(np.abs(gammas + 2.0)))

    base = x0 - y0
    closed = {"first_best_gain": 4.0 / 27.0, "S_star": 2.0 / 3.0, "first_best_total": x0 - y0 - 23.0 * T / 27.0,
              "restricted_gain": 0.0, "gamma_star": -2.0, "restricted_total": x0 - y0 - T}
    formulas = {
        "first_best_total": "x0 - y0 - T + T max_S (S^2 - S^3) = x0 - y0 - 23T/27",
        "restricted_total": "x0 - y0 + T max_gamma {H_A(gamma) - gamma|u*|^2/2 - |u*|^6} = x0 - y0 - T",
        "gap": "S - S^2, largest at S = 1/2",
    }
    solver = {
        "first_best_gain": first_best_gain, "S_star": float(S[i]),
        "first_best_total": base - T + T * first_best_gain,
        "restricted_value": float(top), "gamma_star": float(gammas[j]),
        "gamma_star_interval": [float(ties.min()), float(ties.max())],
        "restricted_value_at_minus_2": float(restricted[k2]),
        "restricted_total": base + T * float(top),
    }
    solver["gap_total"] = solver["first_best_total"] - solver["restricted_total"]
    errors = {
        "first_best_total": abs(solver["first_best_total"] - closed["first_best_total"]),
        "restricted_total": abs(solver["restricted_total"] - closed["restricted_total"]),
        "S_star": abs(solver["S_star"] - closed["S_star"]),
    }
    return ExampleSolution("3", closed, formulas, solver, float(y0), solver["first_best_total"], errors,
                           extra={"first_best_total": solver["first_best_total"],
                                  "restricted_total": solver["restricted_total"]})
