"""Running rewards and the two agent Hamiltonians, computed by grid search.

The full Hamiltonian maximises

    h(u) = drift(u) z + 0.5 gamma var(u) - c_A(u) - k_A(u) y

over the control lattice. The constrained one drops the gamma term and only
admits lattice points whose variance lies within ``tol_s`` of a target S.

Separable models (every coefficient a sum of one-axis functions) are searched
axis by axis, which gives the same maximiser as a search over the full product
lattice at a fraction of the cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (ControlGrid, ModelSpec, NumericalError, ValidationError,
                    coefficient_arrays, eval_coefficients, state_reward)

MAX_BLOCK = 50_000_000
TABLE_CACHE = 256


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    argmax: np.ndarray
    constraint_residual: float = 0.0
    feasible: bool = True
    error_bound: float = 0.0


def _tie_floor(best: float) -> float:
    return best - 1e-12 * max(1.0, abs(best))


def first_argmax(values: np.ndarray) -> int:
    """Index of the first entry within 1e-12 (relative) of the maximum."""
    best = np.max(values)
    if not np.isfinite(best):
        return int(np.argmax(values))
    return int(np.flatnonzero(values >= _tie_floor(best))[0])


@dataclass
class _Block:
    axes: tuple[int, ...]
    values: np.ndarray  # (m, len(axes)) lattice coordinates on these axes
    drift: np.ndarray
    var: np.ndarray
    cost: np.ndarray
    disc: np.ndarray
    shape: tuple[int, ...] = ()

    def constrained_scores(self, y, z):
        with np.errstate(invalid="ignore"):
            out = self.drift * z - self.cost - self.disc * y
        return np.where(np.isnan(out), -np.inf, out)

    def full_scores(self, y, z, gamma):
        with np.errstate(invalid="ignore"):
            out = self.drift * z + 0.5 * gamma * self.var - self.cost - self.disc * y
        return np.where(np.isnan(out), -np.inf, out)


@dataclass
class RewardTable:
    """Coefficients over a grid at fixed (t, x), split into independent blocks."""

    blocks: list
    base: tuple[float, float, float, float]  # drift, var, cost, disc offsets
    n_axes: int
    memo: dict = field(default_factory=dict)

    def assemble(self, picks) -> np.ndarray:
        u = np.empty(self.n_axes)
        for blk, i in zip(self.blocks, picks):
            u[list(blk.axes)] = blk.values[i]
        return u

    @property
    def coupled(self):
        """Blocks along which the variance moves, merged into one product block."""
        if "coupled" not in self.memo:
            moving = [k for k, b in enumerate(self.blocks) if np.ptp(b.var) > 0]
            self.memo["coupled"] = (moving, _merge([self.blocks[k] for k in moving]) if moving else None)
        return self.memo["coupled"]

    def variance_offset(self, moving) -> float:
        """Variance contributed by the base and the blocks outside ``moving``."""
        off = self.base[1]
        for k, b in enumerate(self.blocks):
            if k not in moving:
                off += b.var[0]
        return off

    def sorted_variances(self):
        if "sorted" not in self.memo:
            moving, merged = self.coupled
            if merged is None:
                self.memo["sorted"] = None
            else:
                order = np.argsort(merged.var, kind="stable")
                self.memo["sorted"] = (order, merged.var[order] + self.variance_offset(moving))
        return self.memo["sorted"]


def _merge(blocks):
    if len(blocks) == 1:
        return blocks[0]
    sizes = [len(b.var) for b in blocks]
    if np.prod(sizes, dtype=float) > MAX_BLOCK:
        raise ValidationError("variance-coupled control block too large for the constrained search")
    k = len(blocks)

    def outer_sum(arrs):
        total = np.zeros(sizes)
        for i, a in enumerate(arrs):
            shape = [1] * k
            shape[i] = sizes[i]
            total = total + a.reshape(shape)
        return total.ravel()

    idx = np.stack([g.ravel() for g in np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")], axis=1)
    values = np.concatenate([b.values[idx[:, i]] for i, b in enumerate(blocks)], axis=1)
    with np.errstate(invalid="ignore"):
        return _Block(
            axes=tuple(a for b in blocks for a in b.axes),
            values=values,
            drift=outer_sum([b.drift for b in blocks]),
            var=outer_sum([b.var for b in blocks]),
            cost=outer_sum([b.cost for b in blocks]),
            disc=outer_sum([b.disc for b in blocks]),
            shape=tuple(sizes),
        )


def reward_table(model: ModelSpec, t: float, x: float, grid: ControlGrid) -> RewardTable:
    key = (model, t if model.time_dependent else None, x if model.state_dependent else None)
    table = grid._cache.get(key)
    if table is not None:
        return table
    grid.check_inside(model)
    n_u = len(grid.axes)
    if model.separable and n_u > 1:
        ref = np.array([a[a.size // 2] for a in grid.axes])
        f_ref = [float(v[0]) for v in _coeffs(model, t, x, ref[None, :])]
        if not all(np.isfinite(f_ref)):
            raise NumericalError("non-finite coefficients at the grid reference point")
        blocks = []
        for k, axis in enumerate(grid.axes):
            pts = np.repeat(ref[None, :], axis.size, axis=0)
            pts[:, k] = axis
            blocks.append(_Block((k,), axis[:, None], *_coeffs(model, t, x, pts), shape=(axis.size,)))
        base = tuple((1 - n_u) * f for f in f_ref)
    else:
        pts = grid.points
        blocks = [_Block(tuple(range(n_u)), pts, *_coeffs(model, t, x, pts), shape=grid.counts)]
        base = (0.0, 0.0, 0.0, 0.0)
    table = RewardTable(blocks, base, n_u)
    if len(grid._cache) >= TABLE_CACHE:
        grid._cache.clear()
    grid._cache[key] = table
    return table


def _coeffs(model, t, x, pts):
    drift, _, var, cost, disc = coefficient_arrays(model, t, x, pts)
    return np.array(drift), np.array(var), np.array(cost), np.array(disc)


# ---------------------------------------------------------------------------
# pointwise rewards


def running_reward_full(model: ModelSpec, t, x, y, z, gamma, u) -> float:
    c = eval_coefficients(model, t, x, u)
    return float(c.drift_vec * z + 0.5 * gamma * c.variance - c.cost + state_reward(model, t, x) - c.k_a * y)


def running_reward_constrained(model: ModelSpec, t, x, y, z, u) -> float:
    c = eval_coefficients(model, t, x, u)
    return float(c.drift_vec * z - c.cost + state_reward(model, t, x) - c.k_a * y)


def _rewards_at(model, t, x, y, z, gamma, pts):
    drift, _, var, cost, disc = coefficient_arrays(model, t, x, pts)
    with np.errstate(invalid="ignore"):
        return drift * z + 0.5 * gamma * var - cost - disc * y


def _neighbours(grid: ControlGrid, u) -> np.ndarray:
    idx = grid.index_of(u)
    out = []
    for k, axis in enumerate(grid.axes):
        for step in (-1, 1):
            j = idx[k] + step
            if 0 <= j < axis.size:
                p = np.array(u, dtype=float)
                p[k] = axis[j]
                out.append(p)
    return np.array(out).reshape(-1, len(grid.axes))


def lattice_error(model, t, x, y, z, gamma, grid, u) -> float:
    """Largest reward change from ``u`` to an adjacent lattice point (finite values only)."""
    nb = _neighbours(grid, u)
    if nb.size == 0:
        return 0.0
    here = _rewards_at(model, t, x, y, z, gamma, np.asarray(u, dtype=float)[None, :])[0]
    diffs = np.abs(_rewards_at(model, t, x, y, z, gamma, nb) - here)
    diffs = diffs[np.isfinite(diffs)]
    return float(diffs.max()) if diffs.size else 0.0


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian_full(model: ModelSpec, t, x, y, z, gamma, grid: ControlGrid) -> HamiltonianEval:
    table = reward_table(model, t, x, grid)
    picks = [first_argmax(b.full_scores(y, z, gamma)) for b in table.blocks]
    u = table.assemble(picks)
    value = running_reward_full(model, t, x, y, z, gamma, u)
    err = lattice_error(model, t, x, y, z, gamma, grid, u)
    return HamiltonianEval(value, u, 0.0, True, err)


def hamiltonian_full_batch(model: ModelSpec, t, x, y, z, gammas, grid: ControlGrid, chunk: int = 2_000_000):
    """Argmax controls for many gamma values at once; returns (values, argmax array)."""
    gammas = np.asarray(gammas, dtype=float).ravel()
    table = reward_table(model, t, x, grid)
    picks = np.zeros((gammas.size, len(table.blocks)), dtype=int)
    for k, b in enumerate(table.blocks):
        A = b.constrained_scores(y, z)
        rows = max(1, chunk // max(1, len(A)))
        for s in range(0, gammas.size, rows):
            g = gammas[s:s + rows, None]
            scores = A[None, :] + 0.5 * g * b.var[None, :]
            best = scores.max(axis=1, keepdims=True)
            floor = best - 1e-12 * np.maximum(1.0, np.abs(best))
            picks[s:s + rows, k] = np.argmax(scores >= floor, axis=1)
    controls = np.array([table.assemble(p) for p in picks])
    values = _rewards_at(model, t, x, y, z, 0.0, controls) + 0.5 * gammas * coefficient_arrays(model, t, x, controls)[2]
    values = values + state_reward(model, t, x)
    return values, controls


def variance_range(model: ModelSpec, t, x, grid: ControlGrid) -> tuple[float, float]:
    """Least and largest achievable variance, without enumerating the product lattice."""
    table = reward_table(model, t, x, grid)
    lo = hi = table.base[1]
    for b in table.blocks:
        lo += float(np.nanmin(b.var))
        hi += float(np.nanmax(b.var))
    return lo, hi


def default_tol_s(model: ModelSpec, t, x, grid: ControlGrid) -> float:
    """Ten times the median spacing between distinct achievable variances.

    On multi-axis lattices the band is widened to at least half the median
    one-step variance increment, so every lattice line crossing the level set
    contributes a candidate.
    """
    table = reward_table(model, t, x, grid)
    if "tol_s" not in table.memo:
        sv = table.sorted_variances()
        tol = 1e-9
        if sv is not None:
            gaps = np.diff(sv[1])
            gaps = gaps[gaps > 1e-12]
            if gaps.size:
                tol = 10.0 * float(np.median(gaps))
            merged = table.coupled[1]
            if len(merged.axes) > 1:
                shaped = merged.var.reshape(merged.shape)
                steps = np.concatenate([np.abs(np.diff(shaped, axis=k)).ravel() for k in range(shaped.ndim)])
                steps = steps[steps > 1e-12]
                if steps.size:
                    tol = max(tol, 0.5 * float(np.median(steps)))
        table.memo["tol_s"] = tol
    return table.memo["tol_s"]


def _window_best(order, A_sorted, lo, hi):
    seg = A_sorted[lo:hi]
    best = seg.max()
    if not np.isfinite(best):
        return None, best
    ties = order[lo:hi][seg >= _tie_floor(best)]
    return int(ties.min()), best


def constrained_profile(model: ModelSpec, t, x, y, z, s_values, grid: ControlGrid, tol_s=None):
    """hamiltonian_constrained for many target variances, sharing the sorted lattice."""
    table = reward_table(model, t, x, grid)
    tol = default_tol_s(model, t, x, grid) if tol_s is None else float(tol_s)
    if not tol > 0:
        raise ValidationError("tol_s must be > 0")
    moving, merged = table.coupled
    free = [k for k in range(len(table.blocks)) if k not in moving]
    free_picks = {k: first_argmax(table.blocks[k].constrained_scores(y, z)) for k in free}
    sv = table.sorted_variances()
    if merged is not None:
        A = merged.constrained_scores(y, z)
        order, V = sv
        A_sorted = A[order]
    out = []
    for S in np.atleast_1d(np.asarray(s_values, dtype=float)):
        if S < 0:
            raise ValidationError("target variance must be >= 0")
        band = 0.0
        if merged is None:
            v_const = table.variance_offset([])
            ok = abs(v_const - S) <= tol
            pick_c = None
        else:
            lo = np.searchsorted(V, S - tol, "left")
            mid_lo = np.searchsorted(V, S, "left")
            mid_hi = np.searchsorted(V, S, "right")
            hi = np.searchsorted(V, S + tol, "right")
            ok = hi > lo
            if ok:
                pick_c, best = _window_best(order, A_sorted, lo, hi)
                ok = pick_c is not None
            if ok:
                halves = [A_sorted[lo:mid_hi].max() if mid_hi > lo else -np.inf,
                          A_sorted[mid_lo:hi].max() if hi > mid_lo else -np.inf]
                halves = [h for h in halves if np.isfinite(h)]
                band = float(best - min(halves)) if halves else 0.0
        if not ok:
            out.append(HamiltonianEval(-np.inf, np.full(table.n_axes, np.nan), np.inf, False, np.inf))
            continue
        u = np.empty(table.n_axes)
        for k in free:
            u[list(table.blocks[k].axes)] = table.blocks[k].values[free_picks[k]]
        if merged is not None:
            u[list(merged.axes)] = merged.values[pick_c]
        c = eval_coefficients(model, t, x, u)
        value = float(c.drift_vec * z - c.cost + state_reward(model, t, x) - c.k_a * y)
        err = band + lattice_error(model, t, x, y, z, 0.0, grid, u)
        out.append(HamiltonianEval(value, u, abs(c.variance - S), True, err))
    return out


def hamiltonian_constrained(model: ModelSpec, t, x, y, z, S, grid: ControlGrid, tol_s=None) -> HamiltonianEval:
    return constrained_profile(model, t, x, y, z, [S], grid, tol_s)[0]


# ---------------------------------------------------------------------------
# upper envelope of the lines gamma -> A_i + gamma V_i / 2


def _upper_hull(V, A):
    keep = np.isfinite(A) & np.isfinite(V)
    V, A = V[keep], A[keep]
    if V.size == 0:
        raise NumericalError("no finite reward on the control grid")
    order = np.lexsort((-A, V))
    V, A = V[order], A[order]
    first = np.ones(V.size, dtype=bool)
    first[1:] = V[1:] != V[:-1]
    V, A = V[first], A[first]
    hv, ha = [], []
    for v, a in zip(V.tolist(), A.tolist()):
        while len(hv) >= 2 and (hv[-1] - hv[-2]) * (a - ha[-2]) - (ha[-1] - ha[-2]) * (v - hv[-2]) >= 0:
            hv.pop()
            ha.pop()
        hv.append(v)
        ha.append(a)
    return np.array(hv), np.array(ha)


def _envelope(V, A, gammas):
    if V.size == 1:
        return A[0] + 0.5 * gammas * V[0]
    breaks = 2.0 * (A[:-1] - A[1:]) / (V[1:] - V[:-1])
    idx = np.searchsorted(breaks, gammas, side="right")
    return A[idx] + 0.5 * gammas * V[idx]


def full_values(model: ModelSpec, t, x, y, z, gammas, grid: ControlGrid) -> np.ndarray:
    """Exact lattice maxima of the full reward for an array of gamma values."""
    gammas = np.asarray(gammas, dtype=float)
    table = reward_table(model, t, x, grid)
    key = ("hull", float(y), float(z))
    if key not in table.memo:
        table.memo[key] = [_upper_hull(b.var, b.constrained_scores(y, z)) for b in table.blocks]
    d, v, c, k = table.base
    total = (d * z - c - k * y) + 0.5 * gammas * v + state_reward(model, t, x)
    for V, A in table.memo[key]:
        total = total + _envelope(V, A, gammas)
    return total
