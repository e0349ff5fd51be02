"""Euler-Maruyama simulation of output X and contract value Y under both contract forms.

Randomness: path ``p`` draws its standard normals from its own Philox stream
keyed by ``master_seed`` and ``(stream_offset << 40) | p``, using numpy's
ziggurat ``standard_normal``. Each step consumes ``substeps`` normals per noise
component, summed and scaled by sqrt(dt / substeps), so runs with
(n, 4), (2n, 2) and (4n, 1) steps x substeps share one Brownian path.
Paths are simulated in fixed-size chunks, so the worker count never changes
a result.
"""

from __future__ import annotations

import csv
import io
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .hamiltonian import default_tol_s, hamiltonian_constrained, hamiltonian_full
from .model import (ControlGrid, ModelSpec, NumericalError, ValidationError,
                    coefficient_arrays, state_reward, BOX_SLACK)

Policy = Union[float, Callable]

RECORD_BUDGET = 2_000_000


@dataclass(frozen=True)
class ContractCPT:
    y0: float
    z_policy: Policy
    gamma_policy: Policy


@dataclass(frozen=True)
class ContractFB:
    y0: float
    z_policy: Policy
    sigma_policy: Policy


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int
    master_seed: int = 0
    qv_window: int = 1
    substeps: int = 1
    record: int | None = None
    stream_offset: int = 0
    workers: int = 1
    chunk_size: int = 8192
    bucket: float = 1e-3

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ValidationError("n_paths must be ≥ 1")
        if int(self.n_steps) < 1:
            raise ValidationError("n_steps must be ≥ 1")
        if int(self.qv_window) < 1 or int(self.qv_window) > int(self.n_steps):
            raise ValidationError("qv_window must be between 1 and n_steps")
        if int(self.substeps) < 1 or int(self.workers) < 1 or int(self.chunk_size) < 1:
            raise ValidationError("substeps, workers and chunk_size must be ≥ 1")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValidationError("master_seed must be an unsigned 64-bit integer")
        if not self.bucket > 0:
            raise ValidationError("bucket must be > 0")

    @property
    def n_record(self) -> int:
        if self.record is not None:
            return min(int(self.record), self.n_paths)
        if self.n_paths * (self.n_steps + 1) <= RECORD_BUDGET:
            return self.n_paths
        return min(16, self.n_paths)


@dataclass
class MCEstimate:
    mean: float
    std_error: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n": self.n}


def estimate(samples) -> MCEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        return MCEstimate(float("nan"), float("nan"), 0)
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(np.mean(samples)), se, int(n))


@dataclass
class PathEnsemble:
    form: str
    t: np.ndarray
    y_start: float
    X: np.ndarray
    Y: np.ndarray
    QV: np.ndarray
    cost: np.ndarray
    discounted_cost: np.ndarray
    K_A: np.ndarray
    K_P: np.ndarray
    principal_cost: np.ndarray
    feasible: np.ndarray
    y_increments: np.ndarray
    recorded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    traces: dict = field(default_factory=dict)

    @property
    def xi(self) -> np.ndarray:
        return self.Y

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n_paths(self) -> int:
        return int(self.X.size)


# ---------------------------------------------------------------------------
# randomness


def path_normals(master_seed: int, stream_offset: int, paths, count: int, noise_dim: int) -> np.ndarray:
    out = np.empty((len(paths), count, noise_dim))
    for row, p in enumerate(paths):
        key = int(master_seed) + ((int(stream_offset) << 40 | int(p)) << 64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[row] = gen.standard_normal((count, noise_dim))
    return out


def brownian_increments(cfg: SimConfig, dt: float, paths, noise_dim: int) -> np.ndarray:
    """(len(paths), n_steps, noise_dim) Brownian increments for the given path indices."""
    z = path_normals(cfg.master_seed, cfg.stream_offset, paths, cfg.n_steps * cfg.substeps, noise_dim)
    z = z.reshape(len(paths), cfg.n_steps, cfg.substeps, noise_dim).sum(axis=2)
    return z * np.sqrt(dt / cfg.substeps)


def terminal_noise(cfg: SimConfig, dt: float, noise_dim: int) -> np.ndarray:
    """W_T per path from the same streams a full simulation would use."""
    out = np.empty((cfg.n_paths, noise_dim))
    for s in range(0, cfg.n_paths, cfg.chunk_size):
        paths = range(s, min(cfg.n_paths, s + cfg.chunk_size))
        out[s:s + len(paths)] = brownian_increments(cfg, dt, paths, noise_dim).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# effort selection


def _policy(p, t, X, Y):
    if callable(p):
        return np.broadcast_to(np.asarray(p(t, X, Y), dtype=float), X.shape).astype(float)
    return np.full(X.shape, float(p))


class _EffortOracle:
    """Memoised Hamiltonian maximiser over (t, x, y, z, p) buckets."""

    def __init__(self, model, form, grid, tol_s, bucket):
        self.model, self.form, self.grid, self.tol_s, self.bucket = model, form, grid, tol_s, bucket
        self.memo = {}
        self.lock = threading.Lock()

    def _solve(self, key):
        with self.lock:
            hit = self.memo.get(key)
        if hit is not None:
            return hit
        t, x, y, z, p = key
        if self.form == "cpt":
            ev = hamiltonian_full(self.model, t, x, y, z, p, self.grid)
        else:
            ev = hamiltonian_constrained(self.model, t, x, y, z, p, self.grid, self.tol_s)
        hit = (ev.argmax, ev.feasible)
        with self.lock:
            self.memo[key] = hit
        return hit

    def __call__(self, t, X, Y, Z, P):
        m = self.model
        tk = float(t) if m.time_dependent else 0.0
        xs = np.round(X / self.bucket) * self.bucket if m.state_dependent else np.full(X.shape, m.x0)
        ys = np.round(Y / self.bucket) * self.bucket if m.discount_depends_on_control else np.zeros(X.shape)
        cols = np.stack([xs, ys, np.round(Z, 12), np.round(P, 12)], axis=1)
        if np.all(cols == cols[0]):
            u, ok = self._solve((tk, *map(float, cols[0])))
            return np.broadcast_to(u, (X.size, u.size)), np.full(X.size, ok)
        uniq, inv = np.unique(cols, axis=0, return_inverse=True)
        sols = [self._solve((tk, *map(float, row))) for row in uniq]
        U = np.array([s[0] for s in sols])
        ok = np.array([s[1] for s in sols])
        inv = inv.ravel()
        return U[inv], ok[inv]


def _effort_values(model, effort, t, X, Y):
    u = effort(t, X, Y) if callable(effort) else effort
    u = np.broadcast_to(np.asarray(u, dtype=float), (X.size, model.control_dim))
    lo = np.array([b[0] for b in model.control_box])
    hi = np.array([b[1] for b in model.control_box])
    if np.any(u < lo - BOX_SLACK) or np.any(u > hi + BOX_SLACK):
        raise ValidationError("deviation effort outside the control box")
    return u


# ---------------------------------------------------------------------------
# engine


def _y_start(model: ModelSpec, y0: float) -> float:
    return model.agent_utility.inverse(y0)


def _run_chunk(model, form, contract, cfg, oracle, effort, paths, n_rec):
    T = model.horizon
    dt = T / cfg.n_steps
    m = len(paths)
    dW = brownian_increments(cfg, dt, paths, model.noise_dim)
    policy = contract.gamma_policy if form == "cpt" else contract.sigma_policy
    cara = model.agent_utility.is_exponential
    gamma_a = model.agent_utility.risk_aversion if cara else 0.0

    X = np.full(m, model.x0)
    Y = np.full(m, _y_start(model, contract.y0))
    QV, cost, dcost, pcost, inc = (np.zeros(m) for _ in range(5))
    KA, KP = np.ones(m), np.ones(m)
    active = np.ones(m, dtype=bool)
    rec = [i for i, p in enumerate(paths) if p < n_rec]
    traces = {k: np.empty((len(rec), cfg.n_steps + 1)) for k in ("X", "Y", "QV", "cost", "K_A")}

    def snapshot(k):
        if rec:
            for name, arr in (("X", X), ("Y", Y), ("QV", QV), ("cost", cost), ("K_A", KA)):
                traces[name][:, k] = arr[rec]

    snapshot(0)
    for k in range(cfg.n_steps):
        t = k * dt
        Z = _policy(contract.z_policy, t, X, Y)
        P = _policy(policy, t, X, Y)
        u_opt, ok = oracle(t, X, Y, Z, P)
        if form == "fb" and not ok.all():
            active &= ok
        drift_o, rows_o, var_o, cost_o, disc_o = coefficient_arrays(model, t, X, u_opt)
        if effort is None:
            drift, rows, var, cost_u, disc = drift_o, rows_o, var_o, cost_o, disc_o
        else:
            drift, rows, var, cost_u, disc = coefficient_arrays(model, t, X, _effort_values(model, effort, t, X, Y))
        sr = state_reward(model, t, X)
        with np.errstate(invalid="ignore"):
            H = drift_o * Z - cost_o + sr - disc_o * Y
            if form == "cpt":
                H = H + 0.5 * P * var_o
            c_a = cost_u - sr
            dX = drift * dt + np.einsum("ij,ij->i", rows, dW[:, k, :])
            dQ = var * dt
            dY = -H * dt + Z * dX
            if form == "cpt":
                dY = dY + 0.5 * P * dQ
            if cara:
                dY = dY + 0.5 * gamma_a * Z * Z * dQ
            pc = model.principal_running_cost(t, X, var) if model.principal_running_cost is not None else 0.0
            kp = model.principal_discount(t, X)
        upd = active
        bad = upd & ~(np.isfinite(dX) & np.isfinite(dY) & np.isfinite(c_a))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericalError(f"non-finite state on path {paths[i]} at step {k}")
        cost = np.where(upd, cost + c_a * dt, cost)
        dcost = np.where(upd, dcost + KA * c_a * dt, dcost)
        pcost = np.where(upd, pcost + pc * dt, pcost)
        KA = np.where(upd, KA * np.exp(-disc * dt), KA)
        KP = np.where(upd, KP * np.exp(-kp * dt), KP)
        X = np.where(upd, X + dX, X)
        Y = np.where(upd, Y + dY, Y)
        inc = np.where(upd, inc + dY, inc)
        QV = np.where(upd, QV + dQ, QV)
        snapshot(k + 1)
    return dict(X=X, Y=Y, QV=QV, cost=cost, dcost=dcost, pcost=pcost, KA=KA, KP=KP,
                feasible=active, inc=inc, rec=[paths[i] for i in rec], traces=traces)


def _simulate(model, form, contract, cfg, grid, tol_s, effort):
    if grid is None:
        grid = ControlGrid.from_counts(model)
    if form == "fb" and tol_s is None:
        tol_s = default_tol_s(model, 0.0, model.x0, grid)
    oracle = _EffortOracle(model, form, grid, tol_s, cfg.bucket)
    n_rec = cfg.n_record
    starts = list(range(0, cfg.n_paths, cfg.chunk_size))
    chunks = [range(s, min(cfg.n_paths, s + cfg.chunk_size)) for s in starts]

    def job(paths):
        return _run_chunk(model, form, contract, cfg, oracle, effort, paths, n_rec)

    if cfg.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]

    def cat(name):
        return np.concatenate([p[name] for p in parts])

    traces = {}
    if n_rec:
        for name in ("X", "Y", "QV", "cost", "K_A"):
            traces[name] = np.concatenate([p["traces"][name] for p in parts if p["rec"]], axis=0)
    t = np.linspace(0.0, model.horizon, cfg.n_steps + 1)
    return PathEnsemble(form, t, _y_start(model, contract.y0), cat("X"), cat("Y"), cat("QV"), cat("cost"),
                        cat("dcost"), cat("KA"), cat("KP"), cat("pcost"), cat("feasible"), cat("inc"),
                        np.arange(n_rec), traces)


def simulate_cpt(model: ModelSpec, contract: ContractCPT, cfg: SimConfig, grid: ControlGrid | None = None,
                 effort=None) -> PathEnsemble:
    """Simulate under the (y0, Z, Gamma) contract; ``effort`` overrides the agent's maximiser."""
    return _simulate(model, "cpt", contract, cfg, grid, None, effort)


def simulate_fb(model: ModelSpec, contract: ContractFB, cfg: SimConfig, grid: ControlGrid | None = None,
                tol_s=None, effort=None) -> PathEnsemble:
    """Simulate under the (y0, Z, Sigma) contract; infeasible Sigma freezes and flags the path."""
    return _simulate(model, "fb", contract, cfg, grid, tol_s, effort)


# ---------------------------------------------------------------------------
# constant policies: Euler steps with constant coefficients add up exactly


def constant_policy_supported(model: ModelSpec) -> bool:
    return (model.state_free and model.agent_discount_zero and model.principal_discount_zero
            and model.state_reward is None and model.principal_cost_state_free)


def constant_policy_terminal(model: ModelSpec, form: str, y0: float, z: float, p: float, W_T: np.ndarray,
                             n_steps: int, grid: ControlGrid, tol_s=None, effort=None) -> PathEnsemble:
    """Terminal values of a constant-policy run from the summed Brownian increments ``W_T``.

    Matches ``simulate_cpt`` / ``simulate_fb`` on the same streams up to rounding,
    for models where ``constant_policy_supported`` holds.
    """
    if not constant_policy_supported(model):
        raise ValidationError("constant-policy shortcut needs a state-free, undiscounted model")
    T = model.horizon
    dt = T / n_steps
    n = W_T.shape[0]
    if form == "cpt":
        ev = hamiltonian_full(model, 0.0, model.x0, 0.0, z, p, grid)
    else:
        ev = hamiltonian_constrained(model, 0.0, model.x0, 0.0, z, p, grid, tol_s)
    t = np.linspace(0.0, T, n_steps + 1)
    y_start = _y_start(model, y0)
    if not ev.feasible:
        nanv = np.full(n, np.nan)
        return PathEnsemble(form, t, y_start, nanv, nanv, nanv, nanv, nanv, np.ones(n), np.ones(n), nanv,
                            np.zeros(n, dtype=bool), nanv)
    u_opt = ev.argmax[None, :]
    drift_o, _, var_o, cost_o, _ = coefficient_arrays(model, 0.0, model.x0, u_opt)
    u = u_opt if effort is None else _effort_values(model, effort, 0.0, np.zeros(1), np.zeros(1))[:1]
    drift, rows, var, cost_u, _ = coefficient_arrays(model, 0.0, model.x0, u)
    H = float(drift_o[0] * z - cost_o[0]) + (0.5 * p * float(var_o[0]) if form == "cpt" else 0.0)
    X = model.x0 + T * float(drift[0]) + W_T @ rows[0]
    rate = -H + (0.5 * p * float(var[0]) if form == "cpt" else 0.0)
    if model.agent_utility.is_exponential:
        rate += 0.5 * model.agent_utility.risk_aversion * z * z * float(var[0])
    inc = T * rate + z * (X - model.x0)
    Y = y_start + inc
    ones = np.ones(n)
    cost = np.full(n, T * float(cost_u[0]))
    pc = 0.0
    if model.principal_running_cost is not None:
        pc = float(np.asarray(model.principal_running_cost(0.0, model.x0, float(var[0]))))
    return PathEnsemble(form, t, y_start, X, Y, np.full(n, T * float(var[0])), cost, cost.copy(), ones, ones.copy(),
                        np.full(n, T * pc), np.ones(n, dtype=bool), inc)


# ---------------------------------------------------------------------------
# objectives and diagnostics


def agent_payoffs(model: ModelSpec, ens: PathEnsemble) -> np.ndarray:
    ok = ens.feasible
    if model.agent_utility.is_exponential:
        return model.agent_utility(ens.Y[ok] - ens.cost[ok])
    return ens.K_A[ok] * ens.Y[ok] - ens.discounted_cost[ok]


def principal_payoffs(model: ModelSpec, ens: PathEnsemble) -> np.ndarray:
    ok = ens.feasible
    wealth = model.liquidation(ens.X[ok]) - ens.Y[ok] - ens.principal_cost[ok]
    return ens.K_P[ok] * model.principal_utility(wealth)


def agent_objective(model: ModelSpec, ens: PathEnsemble) -> MCEstimate:
    return estimate(agent_payoffs(model, ens))


def principal_objective(model: ModelSpec, ens: PathEnsemble) -> MCEstimate:
    return estimate(principal_payoffs(model, ens))


def _trace_row(ens: PathEnsemble, path_index: int) -> int:
    if not 0 <= path_index < ens.n_paths:
        raise ValidationError(f"path index {path_index} out of range")
    hits = np.flatnonzero(ens.recorded == path_index)
    if hits.size == 0:
        raise ValidationError(f"path {path_index} was not recorded; raise SimConfig.record")
    return int(hits[0])


def realized_qv_density(ens: PathEnsemble, path_index: int, qv_window: int):
    """Trailing-window realised variance of X; returns (times, estimates)."""
    row = _trace_row(ens, path_index)
    n_steps = ens.t.size - 1
    w = int(qv_window)
    if w < 1 or w > n_steps:
        raise ValidationError(f"window of {w} steps is larger than the {n_steps} available")
    sq = np.diff(ens.traces["X"][row]) ** 2
    cs = np.concatenate([[0.0], np.cumsum(sq)])
    est = (cs[w:] - cs[:-w]) / (w * ens.dt)
    return ens.t[w:], est


def traces_csv(ens: PathEnsemble, paths=None) -> str:
    from .duality import fmt

    paths = ens.recorded if paths is None else paths
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "t", "X", "Y", "QV", "cost", "K_A"])
    for p in paths:
        row = _trace_row(ens, int(p))
        for k, t in enumerate(ens.t):
            w.writerow([int(p), fmt(t)] + [fmt(ens.traces[c][row, k]) for c in ("X", "Y", "QV", "cost", "K_A")])
    return buf.getvalue()


def summary(model: ModelSpec, ens: PathEnsemble) -> dict:
    return {
        "form": ens.form,
        "n_paths": ens.n_paths,
        "n_steps": int(ens.t.size - 1),
        "n_infeasible": int(np.sum(~ens.feasible)),
        "agent": agent_objective(model, ens).to_dict(),
        "principal": principal_objective(model, ens).to_dict(),
        "mean_QV_T": float(np.mean(ens.QV[ens.feasible])) if ens.feasible.any() else float("nan"),
    }


def with_offset(cfg: SimConfig, offset: int) -> SimConfig:
    return replace(cfg, stream_offset=offset)
