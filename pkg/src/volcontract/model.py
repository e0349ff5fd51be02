"""Problem data for the output/contract model and pointwise coefficient evaluation.

All coefficient callables are vectorised: they take a scalar time ``t``, a state
``x`` that is a float or an array of shape ``(N,)``, and controls ``u`` of shape
``(N, n_u)``. They return arrays with leading dimension ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BOX_SLACK = 1e-12


class ValidationError(ValueError):
    """Bad input: malformed config, out-of-range parameter, control outside the box."""


class NumericalError(RuntimeError):
    """Numerical failure: non-finite state, nothing feasible to scan."""


@dataclass(frozen=True)
class Utility:
    kind: str = "linear"
    risk_aversion: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise ValidationError(f"unknown utility kind {self.kind!r}")
        if self.kind == "exponential":
            if self.risk_aversion is None or not self.risk_aversion > 0:
                raise ValidationError("exponential utility needs risk_aversion > 0")

    @property
    def is_exponential(self) -> bool:
        return self.kind == "exponential"

    def __call__(self, v):
        if self.kind == "linear":
            return np.asarray(v, dtype=float)
        return -np.exp(-self.risk_aversion * np.asarray(v, dtype=float))

    def inverse(self, level: float) -> float:
        if self.kind == "linear":
            return float(level)
        if not level < 0:
            raise ValidationError("exponential utility levels must be negative")
        return float(-np.log(-level) / self.risk_aversion)


def _zeros_u(t, x, u):
    return np.zeros(np.shape(u)[0])


def _zeros_x(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _identity(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full problem data. ``drift`` returns the product sigma*lambda (scalar output)."""

    name: str
    horizon: float
    x0: float
    noise_dim: int
    control_box: tuple[tuple[float, float], ...]
    drift: Callable
    vol: Callable
    cost: Callable
    agent_discount: Callable = _zeros_u
    principal_discount: Callable = _zeros_x
    liquidation: Callable = _identity
    reservation: float = 0.0
    agent_utility: Utility = field(default_factory=Utility)
    principal_utility: Utility = field(default_factory=Utility)
    principal_running_cost: Callable | None = None
    state_reward: Callable | None = None
    output_dim: int = 1
    # structural flags used to skip work; they never change results
    time_dependent: bool = False
    state_dependent: bool = False
    discount_depends_on_control: bool = False
    agent_discount_zero: bool = True
    principal_discount_zero: bool = True
    principal_cost_state_free: bool = True
    separable: bool = False
    default_counts: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)

    @property
    def control_dim(self) -> int:
        return len(self.control_box)

    @property
    def state_free(self) -> bool:
        """True when the agent's optimisation never depends on (t, x, y)."""
        return not (self.time_dependent or self.state_dependent or self.discount_depends_on_control)


@dataclass(frozen=True)
class CoefficientEval:
    drift_vec: float
    diffusion_row: np.ndarray
    variance: float
    cost: float
    k_a: float


class ControlGrid:
    """Uniform lattice over the control box, enumerated in lexicographic order."""

    def __init__(self, axes):
        self.axes = tuple(np.asarray(a, dtype=float).ravel() for a in axes)
        if not self.axes or any(a.size == 0 for a in self.axes):
            raise ValidationError("control grid is empty")
        for a in self.axes:
            if np.any(np.diff(a) <= 0):
                raise ValidationError("grid axes must be strictly increasing")
        self._points = None
        self._cache = {}

    @classmethod
    def from_counts(cls, model: ModelSpec, counts=None) -> "ControlGrid":
        counts = tuple(counts or model.default_counts or (101,) * model.control_dim)
        if len(counts) != model.control_dim:
            raise ValidationError(
                f"need {model.control_dim} grid counts, got {len(counts)}")
        axes = []
        for (lo, hi), n in zip(model.control_box, counts):
            n = int(n)
            if n < 1:
                raise ValidationError("grid counts must be >= 1")
            axes.append(np.array([lo]) if n == 1 or lo == hi else np.linspace(lo, hi, n))
        grid = cls(axes)
        grid.check_inside(model)
        return grid

    def check_inside(self, model: ModelSpec):
        if len(self.axes) != model.control_dim:
            raise ValidationError("grid dimension does not match the control box")
        for a, (lo, hi) in zip(self.axes, model.control_box):
            if a[0] < lo - BOX_SLACK or a[-1] > hi + BOX_SLACK:
                raise ValidationError("grid point outside the control box")

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def steps(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) if a.size > 1 else 0.0 for a in self.axes)

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            mesh = np.meshgrid(*self.axes, indexing="ij")
            self._points = np.stack([m.ravel() for m in mesh], axis=1)
        return self._points

    def index_of(self, u) -> tuple[int, ...]:
        return tuple(int(np.argmin(np.abs(a - v))) for a, v in zip(self.axes, np.ravel(u)))


def _as_controls(model: ModelSpec, u) -> np.ndarray:
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != model.control_dim:
        raise ValidationError(f"control must have {model.control_dim} components")
    lo = np.array([b[0] for b in model.control_box])
    hi = np.array([b[1] for b in model.control_box])
    if np.any(u < lo - BOX_SLACK) or np.any(u > hi + BOX_SLACK):
        raise ValidationError(f"control {u.tolist()} outside the control box")
    return u


def coefficient_arrays(model: ModelSpec, t: float, x, u: np.ndarray):
    """Vectorised coefficients: (drift, diffusion rows, variance, cost, k_A)."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rows = np.asarray(model.vol(t, x, u), dtype=float).reshape(len(u), model.noise_dim)
        drift = np.broadcast_to(np.asarray(model.drift(t, x, u), dtype=float), (len(u),))
        cost = np.broadcast_to(np.asarray(model.cost(t, x, u), dtype=float), (len(u),))
        disc = np.broadcast_to(np.asarray(model.agent_discount(t, x, u), dtype=float), (len(u),))
        var = np.sum(rows * rows, axis=1)
    return drift, rows, var, cost, disc


def state_reward(model: ModelSpec, t: float, x):
    if model.state_reward is None:
        return np.zeros_like(np.asarray(x, dtype=float))
    return np.asarray(model.state_reward(t, x), dtype=float)


def eval_coefficients(model: ModelSpec, t: float, x: float, u) -> CoefficientEval:
    if not -BOX_SLACK <= t <= model.horizon + BOX_SLACK:
        raise ValidationError(f"time {t} outside [0, {model.horizon}]")
    u = _as_controls(model, u)
    if u.shape[0] != 1:
        raise ValidationError("eval_coefficients takes a single control")
    drift, rows, var, cost, disc = coefficient_arrays(model, t, float(x), u)
    return CoefficientEval(float(drift[0]), rows[0].copy(), float(var[0]), float(cost[0]), float(disc[0]))


def achievable_variance_set(model: ModelSpec, t: float, x: float, grid: ControlGrid, tol_s: float = 1e-12):
    """Sorted (variance, witness control) pairs, merged when closer than ``tol_s``."""
    pts = grid.points
    _, _, var, _, _ = coefficient_arrays(model, t, float(x), pts)
    order = np.argsort(var, kind="stable")
    out = []
    for i in order:
        v = float(var[i])
        if out and v - out[-1][0] <= tol_s:
            continue
        out.append((v, pts[i].copy()))
    return out


# ---------------------------------------------------------------------------
# built-in examples


def _get(cfg: dict, *names, default=None):
    for n in names:
        if n in cfg:
            return cfg[n]
    return default


def _positive(value, what):
    value = float(value)
    if not value > 0:
        raise ValidationError(f"{what} must be > 0, got {value}")
    return value


def _horizon(cfg):
    T = float(_get(cfg, "T", "horizon", default=1.0))
    if not T > 0:
        raise ValidationError(f"horizon must be > 0, got {T}")
    return T


def scalar_vol_model(cfg: dict) -> ModelSpec:
    """dX = u dW with u in (0, 1], cost u^-2/2, CARA agent and principal."""
    T = _horizon(cfg)
    gamma_a = _positive(_get(cfg, "gamma_a", "γ_A", default=1.0), "gamma_a")
    gamma_p = _positive(_get(cfg, "gamma_p", "γ_P", default=1.0), "gamma_p")
    h = float(_get(cfg, "h", default=1.0))
    if h < 0:
        raise ValidationError("h must be >= 0")
    u_min = _positive(_get(cfg, "u_min", default=1e-3), "u_min")
    if u_min > 1:
        raise ValidationError("u_min must be <= 1")
    reservation = float(_get(cfg, "reservation", "R_A", default=-1.0))

    return ModelSpec(
        name="scalar-vol",
        horizon=T,
        x0=float(_get(cfg, "x0", default=0.0)),
        noise_dim=1,
        control_box=((u_min, 1.0),),
        drift=_zeros_u,
        vol=lambda t, x, u: u[:, :1],
        cost=lambda t, x, u: 0.5 / u[:, 0] ** 2,
        reservation=reservation,
        agent_utility=Utility("exponential", gamma_a),
        principal_utility=Utility("exponential", gamma_p),
        principal_running_cost=lambda t, x, s: h * np.asarray(s, dtype=float),
        separable=True,
        default_counts=(20001,),
        params={"gamma_a": gamma_a, "gamma_p": gamma_p, "h": h, "u_min": u_min},
    )


def demand_response_model(cfg: dict) -> ModelSpec:
    """Consumption X with drift -sum(a) and volatility (sigma_k sqrt(b_k))_k.

    Controls are ordered (a_1..a_d, b_1..b_d).
    """
    T = _horizon(cfg)
    sigmas = np.asarray(_get(cfg, "sigmas", "sigma", default=[1.0, 1.0]), dtype=float)
    lambdas = np.asarray(_get(cfg, "lambdas", "lambda", default=[1.0, 4.0]), dtype=float)
    mus = np.asarray(_get(cfg, "mus", "mu", default=[1.0, 1.0]), dtype=float)
    if not (sigmas.shape == lambdas.shape == mus.shape) or sigmas.ndim != 1 or sigmas.size == 0:
        raise ValidationError("sigmas, lambdas and mus must be equal-length lists")
    if np.any(sigmas <= 0) or np.any(lambdas <= 0) or np.any(mus <= 0):
        raise ValidationError("sigmas, lambdas and mus must be positive")
    d = sigmas.size
    kappa = float(_get(cfg, "kappa", "κ", default=0.0))
    theta = float(_get(cfg, "theta", "θ", default=0.0))
    h = float(_get(cfg, "h", default=0.0))
    gamma_a = _positive(_get(cfg, "gamma_a", "γ_A", default=1.0), "gamma_a")
    gamma_p = _positive(_get(cfg, "gamma_p", "γ_P", default=1.0), "gamma_p")
    a_max = float(_get(cfg, "a_max", default=2.0))
    b_min = float(_get(cfg, "b_min", default=1e-3))
    b_max = float(_get(cfg, "b_max", default=2.0))
    if a_max < 0 or b_min < 0 or b_max < b_min:
        raise ValidationError("need a_max >= 0 and 0 <= b_min <= b_max")
    s2 = sigmas ** 2

    def drift(t, x, u):
        return -np.sum(u[:, :d], axis=1)

    def vol(t, x, u):
        return sigmas * np.sqrt(u[:, d:])

    def cost(t, x, u):
        a, b = u[:, :d], u[:, d:]
        return 0.5 * np.sum(a * a / mus, axis=1) + 0.5 * np.sum(s2 / (lambdas * b), axis=1)

    box = ((0.0, a_max),) * d + ((b_min, b_max),) * d
    # distinct b-axis counts keep the achievable variances from piling onto one lattice
    counts = (201,) * d + tuple(801 - 28 * k for k in range(d))
    return ModelSpec(
        name="demand-response",
        horizon=T,
        x0=float(_get(cfg, "x0", default=0.0)),
        noise_dim=d,
        control_box=box,
        drift=drift,
        vol=vol,
        cost=cost,
        liquidation=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        reservation=float(_get(cfg, "reservation", "R_A", default=-1.0)),
        agent_utility=Utility("exponential", gamma_a),
        principal_utility=Utility("exponential", gamma_p),
        principal_running_cost=lambda t, x, s: theta * np.asarray(x, dtype=float) + 0.5 * h * np.asarray(s, dtype=float),
        state_reward=(lambda t, x: kappa * np.asarray(x, dtype=float)) if kappa else None,
        principal_cost_state_free=(theta == 0.0),
        separable=True,
        default_counts=counts,
        params={"sigmas": sigmas.tolist(), "lambdas": lambdas.tolist(), "mus": mus.tolist(),
                "kappa": kappa, "theta": theta, "h": h, "gamma_a": gamma_a, "gamma_p": gamma_p,
                "sigma_bar": float(np.sum(s2 / np.sqrt(lambdas)))},
    )


def quartic_model(cfg: dict) -> ModelSpec:
    """Zero drift, sigma = u on [-1, 1], cost 1 - u^4, principal cost S^3, linear utilities."""
    T = _horizon(cfg)
    return ModelSpec(
        name="quartic",
        horizon=T,
        x0=float(_get(cfg, "x0", default=0.0)),
        noise_dim=1,
        control_box=((-1.0, 1.0),),
        drift=_zeros_u,
        vol=lambda t, x, u: u[:, :1],
        cost=lambda t, x, u: 1.0 - (u[:, 0] * u[:, 0]) ** 2,
        reservation=float(_get(cfg, "reservation", "R_A", default=0.0)),
        principal_running_cost=lambda t, x, s: np.asarray(s, dtype=float) ** 3,
        separable=True,
        default_counts=(20001,),
        params={},
    )


BUILTIN = {
    "scalar-vol": scalar_vol_model,
    "demand-response": demand_response_model,
    "quartic": quartic_model,
}


# ---------------------------------------------------------------------------
# closed-form catalogue: sums of monomials coef * prod(u_i^p_i) * x^q * t^r * S^s


@dataclass(frozen=True)
class Monomial:
    coef: float
    u_powers: tuple[float, ...]
    x_power: float = 0.0
    t_power: float = 0.0
    s_power: float = 0.0

    def evaluate(self, t, x, u=None, s=None):
        val = self.coef
        if self.t_power:
            val = val * float(t) ** self.t_power
        if self.x_power:
            val = val * np.asarray(x, dtype=float) ** self.x_power
        if self.s_power:
            val = val * np.asarray(s, dtype=float) ** self.s_power
        if u is not None:
            for i, p in enumerate(self.u_powers):
                if p:
                    val = val * u[:, i] ** p
        return val


def _parse_terms(spec, n_u: int, what: str, allowed=("u", "x", "t", "S")):
    if spec is None:
        return ()
    if isinstance(spec, (int, float)):
        spec = [{"coef": spec}]
    if isinstance(spec, dict):
        spec = [spec]
    terms = []
    for raw in spec:
        if not isinstance(raw, dict) or "coef" not in raw:
            raise ValidationError(f"{what}: each term needs a 'coef'")
        extra = set(raw) - {"coef", *allowed}
        if extra:
            raise ValidationError(f"{what}: unsupported keys {sorted(extra)}")
        up = raw.get("u", [0] * n_u)
        if isinstance(up, dict):
            full = [0.0] * n_u
            for k, p in up.items():
                full[int(k)] = float(p)
            up = full
        if len(up) != n_u:
            raise ValidationError(f"{what}: 'u' needs {n_u} exponents")
        terms.append(Monomial(float(raw["coef"]), tuple(float(p) for p in up),
                              float(raw.get("x", 0)), float(raw.get("t", 0)), float(raw.get("S", 0))))
    return tuple(terms)


def _sum_terms(terms, t, x, u=None, s=None, n=None):
    if n is None:
        shape = np.shape(x) if u is None else (np.shape(u)[0],)
        if s is not None and u is None:
            shape = np.broadcast_shapes(np.shape(x), np.shape(s))
    else:
        shape = (n,)
    out = np.zeros(shape)
    for m in terms:
        out = out + m.evaluate(t, x, u, s)
    return out


def _utility(raw) -> Utility:
    if raw is None:
        return Utility()
    if isinstance(raw, str):
        return Utility(raw)
    return Utility(raw.get("kind", "linear"), raw.get("risk_aversion"))


def custom_model(cfg: dict) -> ModelSpec:
    T = _horizon(cfg)
    box = cfg.get("control_box")
    if not box:
        raise ValidationError("control box is empty")
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if any(hi < lo for lo, hi in box):
        raise ValidationError("control box interval with hi < lo")
    n_u = len(box)
    n = int(cfg.get("noise_dim", 1))
    if n < 1:
        raise ValidationError("noise_dim must be >= 1")

    drift_t = _parse_terms(cfg.get("drift"), n_u, "drift", ("u", "x", "t"))
    vol_spec = cfg.get("vol")
    if vol_spec is None or len(vol_spec) != n:
        raise ValidationError(f"vol needs one expression per noise component ({n})")
    vol_t = [_parse_terms(v, n_u, "vol", ("u", "x", "t")) for v in vol_spec]
    cost_t = _parse_terms(cfg.get("cost"), n_u, "cost", ("u", "x", "t"))
    disc_t = _parse_terms(cfg.get("agent_discount"), n_u, "agent_discount", ("u", "x", "t"))
    pdisc_t = _parse_terms(cfg.get("principal_discount"), n_u, "principal_discount", ("x", "t"))
    liq_spec = cfg.get("liquidation", [{"coef": 1, "x": 1}])
    liq_t = _parse_terms(liq_spec, n_u, "liquidation", ("x",))
    prc = cfg.get("principal_running_cost")
    prc_t = _parse_terms(prc, n_u, "principal_running_cost", ("x", "t", "S")) if prc is not None else None
    sr = cfg.get("state_reward")
    sr_t = _parse_terms(sr, n_u, "state_reward", ("x", "t")) if sr is not None else None

    coeff_terms = list(drift_t) + [m for v in vol_t for m in v] + list(cost_t) + list(disc_t)
    separable = all(sum(1 for p in m.u_powers if p) <= 1 for m in coeff_terms)
    separable = separable and all(
        len({i for m in v for i, p in enumerate(m.u_powers) if p}) <= 1 for v in vol_t)

    def vol(t, x, u):
        return np.stack([_sum_terms(v, t, x, u) for v in vol_t], axis=1)

    return ModelSpec(
        name=str(cfg.get("name", "custom")),
        horizon=T,
        x0=float(cfg.get("x0", 0.0)),
        noise_dim=n,
        control_box=box,
        drift=lambda t, x, u: _sum_terms(drift_t, t, x, u),
        vol=vol,
        cost=lambda t, x, u: _sum_terms(cost_t, t, x, u),
        agent_discount=lambda t, x, u: _sum_terms(disc_t, t, x, u),
        principal_discount=lambda t, x: _sum_terms(pdisc_t, t, x),
        liquidation=lambda x: _sum_terms(liq_t, 0.0, x),
        reservation=float(cfg.get("reservation", 0.0)),
        agent_utility=_utility(cfg.get("agent_utility")),
        principal_utility=_utility(cfg.get("principal_utility")),
        principal_running_cost=(lambda t, x, s: _sum_terms(prc_t, t, x, s=s)) if prc_t is not None else None,
        state_reward=(lambda t, x: _sum_terms(sr_t, t, x)) if sr_t is not None else None,
        time_dependent=any(m.t_power for m in coeff_terms),
        state_dependent=any(m.x_power for m in coeff_terms),
        discount_depends_on_control=any(any(m.u_powers) for m in disc_t),
        agent_discount_zero=all(m.coef == 0 for m in disc_t),
        principal_discount_zero=all(m.coef == 0 for m in pdisc_t),
        principal_cost_state_free=prc_t is None or not any(m.x_power or m.t_power for m in prc_t),
        separable=separable,
        default_counts=tuple(int(c) for c in cfg.get("grid", [101] * n_u)),
        params={"custom": cfg},
    )


def validate_model(model: ModelSpec, grid: ControlGrid | None = None):
    """Spot-check boundedness and cost sign on the evaluation grid."""
    if not model.horizon > 0:
        raise ValidationError("horizon must be > 0")
    if model.output_dim != 1:
        raise ValidationError("only scalar output (d = 1) is supported")
    if grid is None:
        cap = max(2, int(round(20000 ** (1.0 / model.control_dim))))
        counts = model.default_counts or (101,) * model.control_dim
        grid = ControlGrid.from_counts(model, [min(c, cap) for c in counts])
    pts = grid.points
    for t in (0.0, 0.5 * model.horizon, model.horizon):
        for x in (model.x0 - 1.0, model.x0, model.x0 + 1.0):
            drift, rows, var, cost, disc = coefficient_arrays(model, t, x, pts)
            if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(rows))):
                raise ValidationError("drift/vol not finite on the evaluation grid")
            if np.any(np.isnan(cost)) or np.any(cost < 0):
                raise ValidationError("cost must be non-negative on the evaluation grid")
            if not np.all(np.isfinite(disc)):
                raise ValidationError("agent discount not finite on the evaluation grid")


def build_model(config: dict) -> ModelSpec:
    """Build a validated model from a JSON-like document with an 'example' or 'custom' key."""
    if not isinstance(config, dict):
        raise ValidationError("model config must be a mapping")
    if "example" in config:
        name = config["example"]
        if name not in BUILTIN:
            raise ValidationError(f"unknown example {name!r}; choose from {sorted(BUILTIN)}")
        params = {k: v for k, v in config.items() if k != "example"}
        params.update(config.get("params", {}))
        model = BUILTIN[name](params)
    elif "custom" in config:
        model = custom_model(config["custom"])
    else:
        raise ValidationError("config needs an 'example' or 'custom' key")
    validate_model(model)
    return model
