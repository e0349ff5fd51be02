"""Conjugate links between the full and the variance-constrained Hamiltonian.

H_A(gamma) = sup_S { H°_A(S) + gamma S / 2 } always holds. The reverse
H°_A(S) = inf_gamma { H_A(gamma) - gamma S / 2 } holds only when H°_A is concave
in S; ``duality_report`` measures the gap between the two sides.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import (constrained_profile, default_tol_s, full_values, hamiltonian_full)
from .model import ControlGrid, ModelSpec, NumericalError, ValidationError, coefficient_arrays

GAMMA_RANGE = (-50.0, 10.0)
GAMMA_STEP = 1e-3


def gamma_grid(lo: float = GAMMA_RANGE[0], hi: float = GAMMA_RANGE[1], step: float = GAMMA_STEP) -> np.ndarray:
    n = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(n), 12)


def _check_gammas(gammas):
    gammas = np.asarray(gammas, dtype=float).ravel()
    if gammas.size == 0:
        raise ValidationError("gamma grid is empty")
    return np.sort(gammas)


def _first_min(values: np.ndarray) -> int:
    best = np.min(values)
    return int(np.flatnonzero(values <= best + 1e-12 * max(1.0, abs(best)))[0])


def conjugate_with_bound(model: ModelSpec, t, x, y, z, gamma, s_grid, grid: ControlGrid, tol_s=None):
    """(value, maximising S, error bound) of sup_S { H°_A(S) + gamma S / 2 } over ``s_grid``."""
    s_grid = np.asarray(s_grid, dtype=float).ravel()
    if s_grid.size == 0:
        raise ValidationError("s_grid is empty")
    evals = constrained_profile(model, t, x, y, z, s_grid, grid, tol_s)
    ok = np.array([e.feasible for e in evals])
    if not ok.any():
        raise NumericalError("no achievable variance in s_grid")
    obj = np.array([e.value for e in evals]) + 0.5 * gamma * s_grid
    obj[~ok] = -np.inf
    i = int(np.argmax(obj))
    near = [obj[j] for j in (i - 1, i + 1) if 0 <= j < obj.size and ok[j]]
    s_err = max((abs(obj[i] - v) for v in near), default=0.0)
    return float(obj[i]), float(s_grid[i]), float(evals[i].error_bound + s_err)


def conjugate_from_constrained(model: ModelSpec, t, x, y, z, gamma, s_grid, grid: ControlGrid, tol_s=None) -> float:
    return conjugate_with_bound(model, t, x, y, z, gamma, s_grid, grid, tol_s)[0]


def _biconjugate_scan(model, t, x, y, z, S, gammas, grid, values=None):
    values = full_values(model, t, x, y, z, gammas, grid) if values is None else values
    obj = values - 0.5 * gammas * S
    i = _first_min(obj)
    return obj, i


def biconjugate(model: ModelSpec, t, x, y, z, S, gamma_grid_values, grid: ControlGrid):
    """min over the gamma grid of H_A(gamma) - gamma S / 2, with the first minimiser."""
    gammas = _check_gammas(gamma_grid_values)
    obj, i = _biconjugate_scan(model, t, x, y, z, S, gammas, grid)
    return float(obj[i]), float(gammas[i])


def sigma_from_gamma(model: ModelSpec, t, x, y, z, gamma, grid: ControlGrid) -> float:
    u = hamiltonian_full(model, t, x, y, z, gamma, grid).argmax
    return float(coefficient_arrays(model, t, x, u[None, :])[2][0])


def gamma_from_sigma(model: ModelSpec, t, x, y, z, S, gamma_grid_values, grid: ControlGrid) -> float:
    return biconjugate(model, t, x, y, z, S, gamma_grid_values, grid)[1]


@dataclass
class DualityReport:
    s_grid: list
    h_constrained: list
    biconjugate: list
    gap: list
    gamma_star: list
    max_gap: float
    witness_S: float
    holds: bool
    tol_gap: float
    eps_grid: float
    tol_s: float
    skipped: list = field(default_factory=list)
    clamped: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["S", "H_constrained", "biconjugate", "gap", "gamma_star"])
        for row in zip(self.s_grid, self.h_constrained, self.biconjugate, self.gap, self.gamma_star):
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "max_gap": self.max_gap, "witness_S": self.witness_S, "holds": self.holds,
            "tol_gap": self.tol_gap, "eps_grid": self.eps_grid, "tol_s": self.tol_s,
            "n_evaluated": len(self.s_grid), "skipped": self.skipped, "clamped": self.clamped,
        }


def fmt(v) -> str:
    """12 significant digits, stable across platforms."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def duality_report(model: ModelSpec, t, x, y, z, s_grid, gamma_grid_values, grid: ControlGrid,
                   tol_gap=None, tol_s=None) -> DualityReport:
    """Gap between the biconjugate and H°_A on each achievable S of ``s_grid``.

    S values whose minimising gamma sits on the edge of the gamma grid while the
    objective is still falling are listed in ``clamped`` and left out of the
    verdict: the clamp has to widen before those entries mean anything.
    """
    s_grid = np.asarray(s_grid, dtype=float).ravel()
    gammas = _check_gammas(gamma_grid_values)
    if s_grid.size == 0:
        raise ValidationError("s_grid is empty")
    tol = default_tol_s(model, t, x, grid) if tol_s is None else float(tol_s)
    evals = constrained_profile(model, t, x, y, z, s_grid, grid, tol)
    values = full_values(model, t, x, y, z, gammas, grid)

    rows = []
    skipped, clamped = [], []
    for S, ev in zip(s_grid, evals):
        if not ev.feasible:
            skipped.append(float(S))
            continue
        obj, i = _biconjugate_scan(model, t, x, y, z, S, gammas, grid, values)
        at_edge = (i == 0 and gammas.size > 1 and obj[0] < obj[1] - 1e-12) or \
                  (i == gammas.size - 1 and gammas.size > 1 and obj[-1] < obj[-2] - 1e-12)
        if at_edge:
            clamped.append(float(S))
            continue
        near = [obj[j] for j in (i - 1, i + 1) if 0 <= j < obj.size]
        g_err = max((abs(v - obj[i]) for v in near), default=0.0)
        u_err = hamiltonian_full(model, t, x, y, z, gammas[i], grid).error_bound
        rows.append((float(S), ev.value, float(obj[i]), float(obj[i] - ev.value), float(gammas[i]),
                     ev.error_bound + u_err + g_err))
    if not rows:
        raise NumericalError("no achievable S in s_grid with an interior minimising gamma")

    S_arr, hc, bc, gap, gs, errs = (list(col) for col in zip(*rows))
    eps = float(max(errs))
    tol_gap = 5.0 * eps if tol_gap is None else float(tol_gap)
    k = int(np.argmax(gap))
    return DualityReport(S_arr, hc, bc, gap, gs, float(gap[k]), float(S_arr[k]),
                         bool(gap[k] <= tol_gap), tol_gap, eps, tol, skipped, clamped)
