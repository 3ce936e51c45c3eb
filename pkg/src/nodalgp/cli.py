"""Batch front-end: ``nodalgp --config run.json [--seed N] [--out DIR] [--quiet]``.

Every science parameter lives in the JSON config. Exit codes: 0 success,
1 configuration error, 2 a handled numerical problem (infeasible masses,
stagnation, a broken sandwich, a failed selftest).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .bifurcation import Target, initial_guess, semi_trivial_sweep, sweep
from .core import ParamsError, SystemParams, grid_for, make_params
from .discretization import LaplacianOp, eigenpairs, estimate_sobolev_c4
from .flow import FlowBreakdown, StepControl, run_to_critical
from .gmap import SPDBreakdown
from .energy import MassConstraintError
from .linking import (
    SamplingError,
    delta0_estimate,
    estimate_minimax_bracket,
    feasibility_report,
    highest_energy_point,
    sample_linking_set,
)

COMMANDS = ("spectrum", "feasibility", "solve", "bracket", "sweep", "selftest")
EFFECTIVE_CONFIG = "effective_config.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LinkingSpec:
    k: int = 1
    d: int | None = None
    samples: int = 10_000
    J: int = 8
    delta_samples: int = 2000
    delta_factor: float = 0.1


@dataclass(frozen=True)
class SweepSpec:
    direction: tuple[float, ...] | None = None
    radii: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    target: str = "sign_changing"
    k: int = 2
    d: int | None = None
    active: tuple[int, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: SystemParams
    sizes: tuple[int, ...]
    K: int = 12
    seed: int = 0
    out: str = "nodalgp_out"
    theta: float = 1e-3
    order: tuple[int, ...] | None = None
    init: str = "linking"
    sobolev_starts: int = 6
    rho: float | None = None
    step: StepControl = field(default_factory=StepControl)
    linking: LinkingSpec = field(default_factory=LinkingSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)


TOP_DEFAULTS: dict[str, Any] = {
    "dim": 1,
    "lengths": [math.pi],
    "sizes": [200],
    "K": 12,
    "mu": [1.0, 1.0],
    "beta": 0.1,
    "masses": [1e-3, 1e-3],
    "seed": 0,
    "out": "nodalgp_out",
    "theta": 1e-3,
    "order": None,
    "init": "linking",
    "sobolev_starts": 6,
    "rho": None,
}
STEP_KEYS = ("dt_init", "dt_min", "dt_max", "armijo_factor", "v_tol", "max_steps", "mode")
SECTIONS = {"step": STEP_KEYS, "linking": tuple(LinkingSpec.__dataclass_fields__), "sweep": tuple(SweepSpec.__dataclass_fields__)}
INIT_KINDS = ("linking", "eigen")


# --------------------------------------------------------------------------- type checks


def _num(key, x, integer=False, nullable=False):
    if x is None and nullable:
        return None
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{key}: expected a number")
    if integer:
        if isinstance(x, float) and not x.is_integer():
            raise ConfigError(f"{key}: expected an integer")
        return int(x)
    return float(x)


def _numlist(key, x, integer=False, nullable=False):
    if x is None and nullable:
        return None
    if not isinstance(x, list):
        raise ConfigError(f"{key}: expected a list")
    return tuple(_num(key, v, integer) for v in x)


def _str(key, x, choices):
    if not isinstance(x, str) or x not in choices:
        raise ConfigError(f"{key}: expected one of {list(choices)}")
    return x


def _beta(x):
    if isinstance(x, list):
        return [list(_numlist("beta", row)) for row in x]
    return _num("beta", x)


def _strict(where: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


# --------------------------------------------------------------------------- parse / serialize


def parse_config(text: str) -> RunConfig:
    """Strictly parse a JSON config and fill defaults.

    Raises :class:`ConfigError` for unknown keys and type mismatches and
    :class:`ParamsError` when the system parameters are invalid.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    _strict("config", raw, ("command", *TOP_DEFAULTS, *SECTIONS))
    if "command" not in raw:
        raise ConfigError("command is required")
    cfg = {**TOP_DEFAULTS, **raw}
    command = _str("command", cfg["command"], COMMANDS)
    params = make_params(
        _numlist("mu", cfg["mu"]),
        _beta(cfg["beta"]),
        _numlist("masses", cfg["masses"]),
        _num("dim", cfg["dim"], integer=True),
        _numlist("lengths", cfg["lengths"]),
    )
    sizes = _numlist("sizes", cfg["sizes"], integer=True)
    grid_for(params, sizes)

    step_raw = raw.get("step", {})
    _strict("step", step_raw, STEP_KEYS)
    step_kw = {}
    for key, val in step_raw.items():
        step_kw[key] = _str("step.mode", val, ("descent", "saddle")) if key == "mode" else _num(f"step.{key}", val, key == "max_steps")
    try:
        step = StepControl(**step_kw)
    except ValueError as exc:
        raise ConfigError(f"step: {exc}") from exc

    link_raw = raw.get("linking", {})
    _strict("linking", link_raw, SECTIONS["linking"])
    link_kw = {}
    for key, val in link_raw.items():
        link_kw[key] = _num(f"linking.{key}", val, key != "delta_factor", nullable=key == "d")
    linking = LinkingSpec(**link_kw)

    sw_raw = raw.get("sweep", {})
    _strict("sweep", sw_raw, SECTIONS["sweep"])
    sw_kw = {}
    for key, val in sw_raw.items():
        if key in ("direction", "radii"):
            sw_kw[key] = _numlist(f"sweep.{key}", val, nullable=key == "direction")
        elif key == "active":
            sw_kw[key] = _numlist("sweep.active", val, integer=True, nullable=True)
        elif key == "target":
            sw_kw[key] = _str("sweep.target", val, ("positive", "sign_changing", "semi_nodal"))
        else:
            sw_kw[key] = _num(f"sweep.{key}", val, integer=True, nullable=key == "d")
    sweep_spec = SweepSpec(**sw_kw)

    out = cfg["out"]
    if not isinstance(out, str) or not out:
        raise ConfigError("out: expected a nonempty string")
    rc = RunConfig(
        command=command,
        params=params,
        sizes=sizes,
        K=_num("K", cfg["K"], integer=True),
        seed=_num("seed", cfg["seed"], integer=True),
        out=out,
        theta=_num("theta", cfg["theta"]),
        order=_numlist("order", cfg["order"], integer=True, nullable=True),
        init=_str("init", cfg["init"], INIT_KINDS),
        sobolev_starts=_num("sobolev_starts", cfg["sobolev_starts"], integer=True),
        rho=_num("rho", cfg["rho"], nullable=True),
        step=step,
        linking=linking,
        sweep=sweep_spec,
    )
    _check_ranges(rc)
    return rc


def _check_ranges(rc: RunConfig) -> None:
    m = rc.params.m
    if rc.K < 1:
        raise ConfigError("K must be positive")
    if not rc.theta > 0:
        raise ConfigError("theta must be positive")
    if rc.order is not None and sorted(rc.order) != list(range(m)):
        raise ConfigError("order must be a permutation of 0..m-1")
    lk = rc.linking
    if lk.k < 1 or lk.samples < 1 or lk.J < 1 or lk.delta_samples < 1 or not lk.delta_factor > 0:
        raise ConfigError("linking: k, samples, J and delta_samples must be positive, delta_factor > 0")
    if lk.d is not None and not 1 <= lk.d <= m - 1:
        raise ConfigError("linking.d must satisfy 1 <= d <= m-1")
    if rc.sobolev_starts < 0:
        raise ConfigError("sobolev_starts must be nonnegative")
    if rc.rho is not None and not rc.rho > 0:
        raise ConfigError("rho must be positive")


def to_dict(rc: RunConfig) -> dict:
    p = rc.params
    step = rc.step.to_dict()
    return {
        "command": rc.command,
        "dim": p.dim,
        "lengths": list(p.lengths),
        "sizes": list(rc.sizes),
        "K": rc.K,
        "mu": list(p.mu),
        "beta": [list(r) for r in p.beta],
        "masses": list(p.masses),
        "seed": rc.seed,
        "out": rc.out,
        "theta": rc.theta,
        "order": list(rc.order) if rc.order is not None else None,
        "init": rc.init,
        "sobolev_starts": rc.sobolev_starts,
        "rho": rc.rho,
        "step": {k: step[k] for k in STEP_KEYS},
        "linking": asdict(rc.linking),
        "sweep": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(rc.sweep).items()},
    }


def serialize(rc: RunConfig) -> str:
    return json.dumps(to_dict(rc), indent=2, sort_keys=False)


# --------------------------------------------------------------------------- commands


@dataclass
class Context:
    cfg: RunConfig
    out: Path
    quiet: bool

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text if text.endswith("\n") else text + "\n")
        return path


def _setup(cfg: RunConfig):
    op = LaplacianOp(grid_for(cfg.params, cfg.sizes))
    return op, eigenpairs(op, cfg.K)


def _c4(cfg: RunConfig, op: LaplacianOp):
    est = estimate_sobolev_c4(op, starts=cfg.sobolev_starts, seed=cfg.seed)
    return est.value, est.converged, est.tol


def _feasibility(ctx: Context, op, basis):
    cfg = ctx.cfg
    c4, conv, tol = _c4(cfg, op)
    rep = feasibility_report(cfg.params, basis, cfg.linking.k, c4, cfg.linking.d, cfg.rho, conv, tol)
    ctx.write("feasibility.json", rep.to_json())
    if not rep.feasible:
        ctx.say("infeasible: " + ", ".join(rep.failed()))
    return rep


def cmd_spectrum(ctx: Context) -> int:
    _, basis = _setup(ctx.cfg)
    basis.write_csv(ctx.out / "spectrum.csv")
    basis.write_json(ctx.out / "eigenfields.json")
    for k in range(1, basis.K + 1):
        ctx.say(f"Lambda_{k} = {basis.eigenvalue(k):.10g}")
    return 0


def cmd_feasibility(ctx: Context) -> int:
    op, basis = _setup(ctx.cfg)
    rep = _feasibility(ctx, op, basis)
    ctx.say(f"rho = {rep.rho_chosen:.6g}, M0 = {rep.m0:.6g}, M1 = {rep.m1:.6g}, feasible = {rep.feasible}")
    return 0 if rep.feasible else 2


def cmd_bracket(ctx: Context) -> int:
    cfg = ctx.cfg
    op, basis = _setup(cfg)
    rep = _feasibility(ctx, op, basis)
    if not rep.feasible:
        return 2
    lk = cfg.linking
    br = estimate_minimax_bracket(lk.k, lk.d, cfg.params, basis, op, rep, lk.samples, cfg.seed, lk.J)
    br.write_csv(ctx.out / "bracket.csv")
    ctx.write("bracket.json", json.dumps(br.to_dict(), indent=2))
    ctx.say(
        f"boundary sup {br.boundary_sup:.6g} < linked inf {br.lower:.6g} <= sup {br.upper:.6g} < M1 {br.m1:.6g}: "
        f"{br.sandwich_holds}"
    )
    return 0 if br.sandwich_holds else 2


def _solve_targets(m: int, k: int, d: int | None) -> list[int]:
    n_sign = m if d is None else d
    return [k + 1] * n_sign + [1] * (m - n_sign)


def cmd_solve(ctx: Context) -> int:
    cfg = ctx.cfg
    op, basis = _setup(cfg)
    rep = _feasibility(ctx, op, basis)
    if not rep.feasible:
        return 2
    lk, p = cfg.linking, cfg.params
    targets = _solve_targets(p.m, lk.k, lk.d)
    if cfg.init == "linking":
        kind = "M_k1" if lk.d is None else "M_k1d_ground"
        init = highest_energy_point(sample_linking_set(kind, lk.k, lk.d, basis, p.masses, lk.samples, cfg.seed), p, op)
    else:
        init = initial_guess(basis, np.asarray(p.masses), targets)
    delta = lk.delta_factor * delta0_estimate(
        lk.k, lk.d, basis, p.masses, rep.rho_chosen, op, rep.c4, lk.delta_samples, cfg.seed, lk.J
    )
    ctl = replace(cfg.step, rho=rep.rho_chosen, m1=rep.m1, delta=delta if delta > 0 else None)
    order = cfg.order
    if order is None and lk.d is not None:
        order = tuple(range(p.m))
    res = run_to_critical(init, ctl, p, op, rep.c4, basis, targets, cfg.theta, order)
    res.write_log_csv(ctx.out / "run_log.csv")
    ctx.write("solve_report.json", res.to_json())
    ctx.write("solution.json", res.u.to_json())
    ctx.say(
        f"{res.status} after {res.steps} steps: E = {res.energy:.10g}, |V| = {res.v_norm:.2e}, "
        f"EL = {res.el_residual:.2e}, -lambda = {np.round(-res.lambdas, 8).tolist()}, {res.classification}"
    )
    return 0 if res.converged else 2


def cmd_sweep(ctx: Context) -> int:
    cfg = ctx.cfg
    op, basis = _setup(cfg)
    sw, p = cfg.sweep, cfg.params
    target = Target(sw.target, sw.k, sw.d)
    ctl = cfg.step
    if sw.active is not None:
        n = len(sw.active)
        direction = sw.direction or (1.0 / n,) * n
        rep = semi_trivial_sweep(p, sw.active, direction, sw.radii, target, ctl, op, basis, cfg.theta)
        rep.reduced.write_csv(ctx.out / "sweep.csv")
        ctx.write("sweep.json", rep.to_json())
        ok = rep.reduced.all_converged
        ctx.say(f"semi-trivial sweep: residuals match {rep.residuals_match}, converged {ok}")
        return 0 if ok else 2
    direction = sw.direction or (1.0 / p.m,) * p.m
    rep = sweep(p, direction, sw.radii, target, ctl, op, basis, cfg.theta)
    rep.write_csv(ctx.out / "sweep.csv")
    blob = json.loads(rep.to_json())
    blob["feasibility"] = _sweep_feasibility(cfg, op, basis, direction, target)
    ctx.write("sweep.json", json.dumps(blob, indent=2))
    for rec in rep.records:
        ctx.say(f"r={rec.r:g}: -lambda={np.round(rec.minus_lambdas, 6).tolist()} rel err={np.max(rec.rel_errors):.2e}")
    return 0 if rep.all_converged else 2


def _sweep_feasibility(cfg: RunConfig, op, basis, direction, target: Target) -> list[dict]:
    """Flag radii whose masses fail the smallness conditions (sign-changing targets only)."""
    if target.kind == "positive":
        return []
    c4, conv, tol = _c4(cfg, op)
    d = target.d if target.kind == "semi_nodal" else None
    out = []
    for r in cfg.sweep.radii:
        params = cfg.params.with_masses(r * np.asarray(direction))
        rep = feasibility_report(params, basis, target.k - 1, c4, d, None, conv, tol)
        out.append({"r": r, "feasible": rep.feasible, "failed": rep.failed()})
    return out


def cmd_selftest(ctx: Context) -> int:
    from .selftest import run_all

    results = run_all(None if ctx.quiet else print)
    blob = [{**asdict(r), "within_budget": r.within_budget} for r in results]
    ctx.write("selftest.json", json.dumps(blob, indent=2))
    return 0 if all(r.passed and r.within_budget for r in results) else 2


HANDLERS = {
    "spectrum": cmd_spectrum,
    "feasibility": cmd_feasibility,
    "solve": cmd_solve,
    "bracket": cmd_bracket,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def dispatch(cfg: RunConfig, quiet: bool = False) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, quiet)
    ctx.write(EFFECTIVE_CONFIG, serialize(cfg))
    try:
        return HANDLERS[cfg.command](ctx)
    except (ParamsError, ConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (FlowBreakdown, SPDBreakdown, SamplingError, MassConstraintError, np.linalg.LinAlgError) as exc:
        print(f"numerical problem: {exc}", file=sys.stderr)
        return 2


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="nodalgp", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ParamsError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    return dispatch(cfg, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
