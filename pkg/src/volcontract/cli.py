"""Command-line front end: one subcommand per module operation, CSV/JSON outputs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .duality import duality_report, fmt, gamma_grid
from .hamiltonian import hamiltonian_constrained, hamiltonian_full, variance_range
from .model import ControlGrid, NumericalError, ValidationError, build_model
from .simulate import (ContractCPT, ContractFB, SimConfig, simulate_cpt, simulate_fb, summary, traces_csv)
from .verify import (Deviation, best_response_check, equivalence_scan, example1_closed_form,
                     example2_closed_form, example3_gap)


class CliError(Exception):
    pass


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None or action.default is argparse.SUPPRESS:
            return action.help
        return super()._get_help_string(action)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _clean(obj):
    """JSON-ready copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return fmt(v)
        return float(fmt(v))
    return obj


def _write_json(out: Path, name: str, payload) -> Path:
    path = out / name
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def _write_text(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def _load(args):
    if not args.config:
        raise CliError("--config is required")
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {args.config}: {exc}") from exc
    model = build_model(config)
    counts = config.get("grid") if isinstance(config, dict) else None
    grid = ControlGrid.from_counts(model, counts)
    return model, grid


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"expected comma-separated numbers, got {text!r}") from exc


def _sim_config(args) -> SimConfig:
    return SimConfig(n_paths=args.paths, n_steps=args.steps, master_seed=args.seed, workers=args.workers,
                     qv_window=args.qv_window, substeps=args.substeps)


def _s_range(model, grid, args):
    if args.s_min is not None and args.s_max is not None:
        return args.s_min, args.s_max
    v_lo, v_hi = variance_range(model, 0.0, model.x0, grid)
    lo = v_lo if args.s_min is None else args.s_min
    hi = v_hi if args.s_max is None else args.s_max
    return lo, hi


# ---------------------------------------------------------------------------
# subcommands


def cmd_hamiltonian(args):
    model, grid = _load(args)
    x = model.x0 if args.x is None else args.x
    full = hamiltonian_full(model, args.t, x, args.y, args.z, args.gamma, grid)
    payload = {"t": args.t, "x": x, "y": args.y, "z": args.z, "gamma": args.gamma,
               "full": {"value": full.value, "argmax": full.argmax, "error_bound": full.error_bound}}
    if args.S is not None:
        con = hamiltonian_constrained(model, args.t, x, args.y, args.z, args.S, grid, args.tol_s)
        payload["constrained"] = {"S": args.S, "value": con.value, "argmax": con.argmax,
                                  "feasible": con.feasible, "constraint_residual": con.constraint_residual,
                                  "error_bound": con.error_bound}
    path = _write_json(_out(args), "hamiltonian.json", payload)
    print(f"H_A(gamma={fmt(args.gamma)}) = {fmt(full.value)} at u = {[fmt(v) for v in full.argmax]}")
    if args.S is not None:
        print(f"H°_A(S={fmt(args.S)}) = {fmt(con.value)}  feasible={fmt(con.feasible)}")
    print(f"wrote {path}")


def cmd_duality(args):
    model, grid = _load(args)
    x = model.x0 if args.x is None else args.x
    lo, hi = _s_range(model, grid, args)
    s_grid = np.linspace(lo, hi, args.s_steps)
    if args.gamma_steps is None:
        gammas = gamma_grid(args.gamma_min, args.gamma_max)
    else:
        gammas = np.linspace(args.gamma_min, args.gamma_max, args.gamma_steps)
    rep = duality_report(model, args.t, x, args.y, args.z, s_grid, gammas, grid, args.tol_gap, args.tol_s)
    out = _out(args)
    _write_text(out, "duality_report.csv", rep.to_csv())
    _write_json(out, "duality_report.json", rep.summary())
    print(f"holds={fmt(rep.holds)}  max_gap={fmt(rep.max_gap)} at S={fmt(rep.witness_S)}  "
          f"tol_gap={fmt(rep.tol_gap)}  eps_grid={fmt(rep.eps_grid)}")
    if rep.clamped:
        print(f"{len(rep.clamped)} S values clamped at the gamma-grid edge (not in the verdict)")
    print(f"wrote {out / 'duality_report.csv'}")


def cmd_simulate(args):
    model, grid = _load(args)
    cfg = _sim_config(args)
    y0 = model.reservation if args.y0 is None else args.y0
    if args.form == "cpt":
        ens = simulate_cpt(model, ContractCPT(y0, args.z, args.gamma), cfg, grid)
    else:
        ens = simulate_fb(model, ContractFB(y0, args.z, args.S), cfg, grid, args.tol_s)
    out = _out(args)
    info = summary(model, ens)
    _write_json(out, "simulate.json", {**info, "y0": y0, "z": args.z, "seed": cfg.master_seed,
                                       "policy": args.gamma if args.form == "cpt" else args.S})
    _write_text(out, "traces.csv", traces_csv(ens, ens.recorded[:args.trace_paths]))
    for key in ("agent", "principal"):
        est = info[key]
        print(f"{key} objective: {fmt(est['mean'])} ± {fmt(est['std_error'])}")
    print(f"wrote {out / 'simulate.json'}")


def cmd_best_response(args):
    model, grid = _load(args)
    cfg = _sim_config(args)
    y0 = model.reservation if args.y0 is None else args.y0
    contract = ContractFB(y0, args.z, args.S)
    cpt = ContractCPT(y0, args.z, args.gamma) if args.gamma is not None else None
    if args.deviation_form == "cpt" and cpt is None:
        raise CliError("--gamma is required for CPT deviations")
    devs = []
    for text in args.deviations:
        u = tuple(_floats(text))
        devs.append(Deviation(u, cpt if args.deviation_form == "cpt" else None))
    rep = best_response_check(model, contract, devs, cfg, grid, args.tol_s)
    path = _write_json(_out(args), "best_response.json", rep.to_dict())
    on = rep.on_policy_value
    print(f"on-policy {fmt(on.mean)} ± {fmt(on.std_error)} (y0={fmt(y0)})")
    for label, est in rep.deviation_values:
        print(f"  {label}: {fmt(est.mean)} ± {fmt(est.std_error)}")
    print(f"pass={fmt(rep.passed)}")
    print(f"wrote {path}")


def cmd_equivalence(args):
    model, grid = _load(args)
    cfg = _sim_config(args)
    lo, hi = _s_range(model, grid, args)
    z_grid = np.linspace(args.z_min, args.z_max, args.z_steps)
    gammas = np.linspace(args.gamma_min, args.gamma_max, args.gamma_steps)
    s_grid = np.linspace(lo, hi, args.s_steps)
    rep = equivalence_scan(model, z_grid, gammas, s_grid, cfg, grid, args.tol_s, args.y0)
    out = _out(args)
    _write_json(out, "equivalence.json", rep.to_dict())
    _write_text(out, "cpt_surface.csv", rep.cpt_csv())
    _write_text(out, "fb_surface.csv", rep.fb_csv())
    zc, gc, vc = rep.best_cpt
    zf, sf, vf = rep.best_fb
    print(f"best CPT: z={fmt(zc)} gamma={fmt(gc)} value={fmt(vc.mean)} ± {fmt(vc.std_error)}")
    print(f"best FB:  z={fmt(zf)} S={fmt(sf)} value={fmt(vf.mean)} ± {fmt(vf.std_error)}")
    print(f"value_gap={fmt(rep.value_gap)} pooled_se={fmt(rep.pooled_std_error)} corresponding={fmt(rep.corresponding)}")
    print(f"wrote {out / 'equivalence.json'}")


def cmd_example(args):
    out = _out(args)
    if args.which == "1":
        sol = example1_closed_form(args.gamma_a, args.gamma_p, args.h, args.T, args.x0, args.R_A)
        path = _write_json(out, "ex1.json", sol.to_dict())
        c = sol.closed_form
        print(f"Z*={fmt(c['Z'])} Sigma*={fmt(c['Sigma'])} Gamma*={fmt(c['Gamma'])} nu*={fmt(c['nu'])}")
        print(f"principal value={fmt(sol.principal_value)}")
    elif args.which == "2":
        sol = example2_closed_form(_floats(args.sigmas), _floats(args.lambdas), _floats(args.mus), args.kappa)
        maps = sol.maps
        table = []
        for g in (-0.5, -1.0, -4.0):
            S = maps["s_of_gamma"](g)
            table.append({"gamma": g, "S": S, "gamma_of_S": maps["gamma_of_s"](S),
                          "b_star": maps["b_star"](g), "b_circ": maps["b_circ"](S)})
        path = _write_json(out, "ex2.json", {**sol.to_dict(), "samples": table})
        print(f"sigma_bar={fmt(sol.closed_form['sigma_bar'])}")
    else:
        sol = example3_gap(args.T, args.x0, args.y0, args.s_steps, args.gamma_steps)
        path = _write_json(out, "ex3_gap.json", sol.to_dict())
        print(f"first_best_total={fmt(sol.solver['first_best_total'])} "
              f"restricted_total={fmt(sol.solver['restricted_total'])}")
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# parser


def _common(p, sim=False):
    p.add_argument("--config", help="model config JSON (required)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--tol-s", type=float, default=None, dest="tol_s",
                   help="variance band half-width (default: derived from the grid)")
    if sim:
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--paths", type=int, default=10000, help="Monte Carlo paths")
        p.add_argument("--steps", type=int, default=1000, help="time steps")
        p.add_argument("--workers", type=int, default=1, help="worker threads")
        p.add_argument("--qv-window", type=int, default=1, dest="qv_window",
                       help="steps per realised-variance window")
        p.add_argument("--substeps", type=int, default=1, help="Brownian substeps per step")


def _point(p):
    p.add_argument("--t", type=float, default=0.0, help="time")
    p.add_argument("--x", type=float, default=None, help="output level (default: model x0)")
    p.add_argument("--y", type=float, default=0.0, help="continuation value")
    p.add_argument("--z", type=float, default=0.0, help="sensitivity to dX")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="volcontract", description="Contracts with volatility control: numerical checks.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("hamiltonian", help="evaluate H_A and H°_A at one point",
                       formatter_class=_Help)
    _common(p)
    _point(p)
    p.add_argument("--gamma", type=float, default=0.0, help="sensitivity to d<X>")
    p.add_argument("--S", type=float, default=None, help="target variance for H°_A")
    p.set_defaults(func=cmd_hamiltonian)

    p = sub.add_parser("duality", help="biconjugate gap of H°_A over an S grid",
                       formatter_class=_Help)
    _common(p)
    _point(p)
    p.add_argument("--s-steps", type=int, default=101, dest="s_steps", help="points in the S grid")
    p.add_argument("--s-min", type=float, default=None, dest="s_min", help="S grid start (default: least achievable)")
    p.add_argument("--s-max", type=float, default=None, dest="s_max", help="S grid end (default: largest achievable)")
    p.add_argument("--gamma-steps", type=int, default=None, dest="gamma_steps",
                   help="points in the gamma grid (default: step 1e-3)")
    p.add_argument("--gamma-min", type=float, default=-50.0, dest="gamma_min", help="gamma grid start")
    p.add_argument("--gamma-max", type=float, default=10.0, dest="gamma_max", help="gamma grid end")
    p.add_argument("--tol-gap", type=float, default=None, dest="tol_gap", help="verdict tolerance (default: 5 eps_grid)")
    p.set_defaults(func=cmd_duality)

    p = sub.add_parser("simulate", help="simulate X and Y under a constant contract",
                       formatter_class=_Help)
    _common(p, sim=True)
    p.add_argument("--form", choices=("fb", "cpt"), default="fb", help="contract form")
    p.add_argument("--y0", type=float, default=None, help="initial value (default: reservation utility)")
    p.add_argument("--z", type=float, default=0.0, help="sensitivity to dX")
    p.add_argument("--gamma", type=float, default=0.0, help="sensitivity to d<X> (cpt)")
    p.add_argument("--S", type=float, default=1.0, help="variance target (fb)")
    p.add_argument("--trace-paths", type=int, default=16, dest="trace_paths", help="paths written to traces.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("best-response", help="on-policy value against constant deviations",
                       formatter_class=_Help)
    _common(p, sim=True)
    p.add_argument("--y0", type=float, default=None, help="initial value (default: reservation utility)")
    p.add_argument("--z", type=float, default=0.0, help="sensitivity to dX")
    p.add_argument("--S", type=float, default=1.0, help="variance target of the contract")
    p.add_argument("--gamma", type=float, default=None, help="gamma of the CPT contract paying deviations")
    p.add_argument("--deviation-form", choices=("cpt", "fb"), default="cpt", dest="deviation_form",
                   help="contract form paying the deviations")
    p.add_argument("--deviations", nargs="+", default=["0.5", "0.7", "1.0"],
                   help="constant controls, each comma-separated over control axes")
    p.set_defaults(func=cmd_best_response)

    p = sub.add_parser("equivalence", help="scan constant (z, gamma) and (z, S) contracts",
                       formatter_class=_Help)
    _common(p, sim=True)
    p.add_argument("--y0", type=float, default=None, help="initial value (default: reservation utility)")
    p.add_argument("--z-steps", type=int, default=21, dest="z_steps", help="points in the z grid")
    p.add_argument("--z-min", type=float, default=0.0, dest="z_min", help="z grid start")
    p.add_argument("--z-max", type=float, default=1.0, dest="z_max", help="z grid end")
    p.add_argument("--gamma-steps", type=int, default=46, dest="gamma_steps", help="points in the gamma grid")
    p.add_argument("--gamma-min", type=float, default=-5.0, dest="gamma_min", help="gamma grid start")
    p.add_argument("--gamma-max", type=float, default=-0.5, dest="gamma_max", help="gamma grid end")
    p.add_argument("--s-steps", type=int, default=100, dest="s_steps", help="points in the S grid")
    p.add_argument("--s-min", type=float, default=None, dest="s_min", help="S grid start (default: least achievable)")
    p.add_argument("--s-max", type=float, default=None, dest="s_max", help="S grid end (default: largest achievable)")
    p.set_defaults(func=cmd_equivalence)

    p = sub.add_parser("example", help="worked examples 1, 2 and 3",
                       formatter_class=_Help)
    p.add_argument("which", choices=("1", "2", "3"), help="example number")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--T", type=float, default=1.0, help="horizon")
    p.add_argument("--x0", type=float, default=0.0, help="initial output")
    p.add_argument("--y0", type=float, default=0.0, help="initial contract value (example 3)")
    p.add_argument("--R-A", type=float, default=-1.0, dest="R_A", help="reservation utility (example 1)")
    p.add_argument("--gamma-a", type=float, default=1.0, dest="gamma_a", help="agent risk aversion (example 1)")
    p.add_argument("--gamma-p", type=float, default=1.0, dest="gamma_p", help="principal risk aversion (example 1)")
    p.add_argument("--h", type=float, default=1.0, help="principal variance cost (example 1)")
    p.add_argument("--sigmas", default="1,1", help="comma-separated sigma_k (example 2)")
    p.add_argument("--lambdas", default="1,4", help="comma-separated lambda_k (example 2)")
    p.add_argument("--mus", default="1,1", help="comma-separated mu_k (example 2)")
    p.add_argument("--kappa", type=float, default=0.0, help="state reward (example 2)")
    p.add_argument("--s-steps", type=int, default=10001, dest="s_steps", help="S grid points (example 3)")
    p.add_argument("--gamma-steps", type=int, default=1201, dest="gamma_steps", help="gamma grid points (example 3)")
    p.set_defaults(func=cmd_example)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("missing subcommand; choose from hamiltonian, duality, simulate, "
                           "best-response, equivalence, example")
        args.func(args)
    except (CliError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except MemoryError:
        print("numerical failure: out of memory; use coarser grids", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())
