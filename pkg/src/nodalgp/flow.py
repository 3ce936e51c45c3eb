"""Descending flow on the product of mass spheres.

The flow moves along -h·V with V = u - G(u), re-projecting onto the spheres
after each explicit Euler step. Step sizes backtrack until an Armijo-type
decrease holds. Monitors track the kinetic ball, the energy barrier and
brackets for the distance to the sign cones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import Classification, SystemParams, VecField, classify
from .discretization import LaplacianOp, SpectralBasis, inner_l2, norm_h1, norm_lp
from .energy import energy_terms, euler_lagrange_residual, kinetic_norms
from .gmap import Pseudogradient, pseudogradient_v

# step statuses
CONVERGED, STAGNATION, MAX_STEPS, LEFT_BALL, VANISHED = (
    "converged",
    "stagnation",
    "max_steps",
    "left_B_rho",
    "component_vanished",
)


class FlowBreakdown(RuntimeError):
    pass


@dataclass(frozen=True)
class StepControl:
    dt_init: float = 1.0
    dt_min: float = 1e-10
    dt_max: float = 1.0
    armijo_factor: float = 1e-4
    v_tol: float = 1e-8
    max_steps: int = 2000
    delta: float | None = None
    rho: float | None = None
    m1: float | None = None
    mode: str = "descent"
    # energy band (a, b, eps) for the cutoff; None means h ≡ 1
    band: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.dt_max > 1.0:
            # steps longer than 1 leave the segment [u, G(u)] and can break the cone invariance
            raise ValueError("dt_max must not exceed 1")
        if not 0 < self.armijo_factor < 1:
            raise ValueError("armijo_factor must lie in (0, 1)")
        if self.mode not in ("descent", "saddle"):
            raise ValueError("mode must be 'descent' or 'saddle'")

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["band"] = list(self.band) if self.band is not None else None
        return d


# --------------------------------------------------------------------------- sphere geometry


def project_to_spheres(u: VecField, masses: Sequence[float]) -> VecField:
    """Scale each component onto its mass sphere; exact no-op when already there."""
    m = u.masses()
    c = np.asarray(masses, dtype=float)
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise FlowBreakdown("a component vanished; cannot project onto its sphere")
    scale = np.sqrt(c / m)
    scale[m == c] = 1.0
    return u.replace(u.data * scale[:, None])


def sphere_distance(u: VecField, masses: Sequence[float], op: LaplacianOp) -> float:
    """H1 length of the radial correction u - P(u), an upper bound for the
    distance from u to the product of spheres."""
    m = u.masses()
    c = np.asarray(masses, dtype=float)
    # 1 - sqrt(c/m) written to avoid cancellation when m ≈ c
    factor = (m - c) / (m + np.sqrt(c * m))
    return float(np.sqrt(np.sum(factor**2 * kinetic_norms(u, op))))


def cutoff_from_energy(e: float, a: float, b: float, eps: float) -> float:
    """Continuous band cutoff: 0 when E ≥ b+2ε or E ≤ a-2ε, 1 on [a-ε, b+ε]."""
    if a > b or not eps > 0:
        raise ValueError("need a <= b and eps > 0")
    dist = min(e - (a - 2 * eps), (b + 2 * eps) - e)
    return float(np.clip(dist / eps, 0.0, 1.0))


def cutoff_h(u: VecField, a: float, b: float, eps: float, params: SystemParams, op: LaplacianOp) -> float:
    return cutoff_from_energy(float(energy_terms(u.data, params, op)[-1]), a, b, eps)


# --------------------------------------------------------------------------- cones


def cone_brackets(u: VecField, op: LaplacianOp, c4: float) -> np.ndarray:
    """Array (m, 2, 2): [i, s] is the (lower, upper) bracket of the distance
    from u to the cone where component i has sign s (s=0: nonnegative,
    s=1: nonpositive)."""
    out = np.empty((u.m, 2, 2))
    for s, part in enumerate((np.maximum(-u.data, 0.0), np.maximum(u.data, 0.0))):
        out[:, s, 0] = c4 * norm_lp(op.grid, part, 4)
        out[:, s, 1] = norm_h1(op, part)
    return out


def cone_distance_exact(ui: np.ndarray, op: LaplacianOp, sign: int = 1, omega: float = 1.6, tol: float = 1e-12, max_sweeps: int = 20000) -> float:
    """H1 distance from one component to the cone {sign·p ≥ 0} by projected SOR.

    Meant for validating the brackets on small grids; cost grows quickly with
    the node count.
    """
    a = op.matrix.tocsr()
    target = sign * np.asarray(ui, dtype=float)
    rhs = a @ target
    p = np.maximum(target, 0.0)
    diag = a.diagonal()
    indptr, indices, vals = a.indptr, a.indices, a.data
    for _ in range(max_sweeps):
        change = 0.0
        for r in range(len(p)):
            lo, hi = indptr[r], indptr[r + 1]
            s = rhs[r] - np.dot(vals[lo:hi], p[indices[lo:hi]]) + diag[r] * p[r]
            new = max(0.0, (1 - omega) * p[r] + omega * s / diag[r])
            change = max(change, abs(new - p[r]))
            p[r] = new
        if change < tol * (np.abs(p).max() + 1e-300):
            break
    d = target - p
    return float(norm_h1(op, d))


# --------------------------------------------------------------------------- state


@dataclass(frozen=True, eq=False)
class FlowState:
    u: VecField
    t: float
    energy: float
    v_norm: float
    lambdas: np.ndarray
    cone_brackets: np.ndarray | None
    step_count: int
    dt: float
    pg: Pseudogradient = field(repr=False)
    converged: bool = False
    status: str = ""


def make_state(
    u: VecField, params: SystemParams, op: LaplacianOp, ctl: StepControl, c4: float | None = None, t: float = 0.0, step: int = 0
) -> FlowState:
    u = project_to_spheres(u, params.masses)
    pg = pseudogradient_v(u, params, op)
    e = float(energy_terms(u.data, params, op)[-1])
    br = cone_brackets(u, op, c4) if c4 is not None else None
    return FlowState(u, t, e, pg.norm, pg.g.lambdas, br, step, ctl.dt_init, pg, pg.norm < ctl.v_tol)


def lower_mode_reflector(basis: SpectralBasis, targets: Sequence[int]) -> Callable[[np.ndarray], np.ndarray]:
    """Direction map for saddle searches.

    Component i is steered toward eigen index targets[i]: along every lower
    mode φ_j the pseudogradient is replaced by -a_j times itself with
    a_j = Λ_j/(Λ_t - Λ_j), which cancels the unstable growth of that mode in
    the small-mass linearization of a unit step.
    """
    lam = basis.values
    plans = []
    for t in targets:
        if t > basis.K:
            raise ValueError(f"basis has {basis.K} modes, target {t} needs more")
        lt = lam[t - 1]
        lower = [j for j in range(t - 1) if lam[j] < lt * (1 - 1e-8)]
        coef = np.array([1.0 + lam[j] / (lt - lam[j]) for j in lower])
        plans.append((np.array(lower, dtype=int), coef))

    def apply(v: np.ndarray) -> np.ndarray:
        out = v.copy()
        for i, (idx, coef) in enumerate(plans):
            if idx.size:
                phis = basis.vectors[idx]
                proj = inner_l2(basis.grid, phis, v[i])
                out[i] -= (coef * proj) @ phis
        return out

    return apply


def _h_factor(e: float, ctl: StepControl) -> float:
    return 1.0 if ctl.band is None else cutoff_from_energy(e, *ctl.band)


def flow_step(
    state: FlowState,
    ctl: StepControl,
    params: SystemParams,
    op: LaplacianOp,
    c4: float | None = None,
    reflector: Callable[[np.ndarray], np.ndarray] | None = None,
) -> FlowState:
    """One accepted step, or the unchanged state flagged converged or stagnated."""
    if state.v_norm < ctl.v_tol:
        return replace(state, converged=True, status=CONVERGED)
    h = _h_factor(state.energy, ctl)
    if h == 0.0:
        return replace(state, converged=True, status=CONVERGED)
    v = state.pg.v.data
    if ctl.mode == "saddle":
        if reflector is None:
            raise ValueError("saddle mode needs a lower-mode reflector")
        direction = reflector(v)
        dt = min(ctl.dt_max, 1.0)
        u_new = project_to_spheres(state.u.replace(state.u.data - dt * h * direction), params.masses)
        nxt = make_state(u_new, params, op, ctl, c4, state.t + dt * h, state.step_count + 1)
        return replace(nxt, dt=dt)
    dt = min(state.dt, ctl.dt_max)
    decrease = ctl.armijo_factor * h * state.pg.norm_sq
    # a few ulps of slack so round-off near a critical point is not read as a failed step
    slack = 8 * np.finfo(float).eps * (1.0 + abs(state.energy))
    while True:
        try:
            u_new = project_to_spheres(state.u.replace(state.u.data - dt * h * v), params.masses)
        except FlowBreakdown:
            return replace(state, status=VANISHED)
        e_new = float(energy_terms(u_new.data, params, op)[-1])
        if e_new <= state.energy - dt * decrease + slack:
            break
        dt *= 0.5
        if dt < ctl.dt_min:
            return replace(state, status=STAGNATION)
    nxt = make_state(u_new, params, op, ctl, c4, state.t + dt * h, state.step_count + 1)
    return replace(nxt, dt=min(2.0 * dt, ctl.dt_max))


# --------------------------------------------------------------------------- monitors


@dataclass(frozen=True)
class InvariantReport:
    in_B_rho: bool | None
    below_M1: bool | None
    kinetic: float
    cone_exits: tuple[tuple[int, int], ...]
    violations: tuple[str, ...]


def check_invariant_sets(
    state: FlowState, ctl: StepControl, op: LaplacianOp, tubes: Sequence[tuple[int, int]] = ()
) -> InvariantReport:
    """Membership flags for B_ρ, the M₁ sublevel set and the cone tubes.

    ``tubes`` lists the (component, sign) cones whose δ-tube held the start;
    a violation is recorded when the lower distance bracket proves the state
    has left one of them.
    """
    kin = float(np.sum(kinetic_norms(state.u, op)))
    in_ball = None if ctl.rho is None else kin < ctl.rho
    below = None if ctl.m1 is None else state.energy < ctl.m1
    exits = []
    if ctl.delta is not None and state.cone_brackets is not None:
        for i, s in tubes:
            if state.cone_brackets[i, s, 0] > ctl.delta:
                exits.append((i, s))
    viol = []
    if in_ball is False or below is False:
        viol.append("outside B_rho^M1")
    viol += [f"left cone tube ({i},{'+' if s == 0 else '-'})" for i, s in exits]
    return InvariantReport(in_ball, below, kin, tuple(exits), tuple(viol))


def tubes_holding(state: FlowState, delta: float) -> list[tuple[int, int]]:
    """Cones whose δ-tube certainly contains the state (upper bracket ≤ δ)."""
    if state.cone_brackets is None:
        return []
    m = state.cone_brackets.shape[0]
    return [(i, s) for i in range(m) for s in (0, 1) if state.cone_brackets[i, s, 1] <= delta]


# --------------------------------------------------------------------------- driver


@dataclass
class LogRow:
    step: int
    t: float
    dt: float
    energy: float
    v_norm: float
    lambdas: tuple[float, ...]
    mass_err_max: float
    cone_lb_min: float
    in_B_rho: bool | None
    below_M1: bool | None
    min_nodes: tuple[float, ...]
    violations: tuple[str, ...]


@dataclass
class SolveReport:
    u: VecField
    lambdas: np.ndarray
    energy: float
    v_norm: float
    el_residual: float
    classification: Classification
    status: str
    steps: int
    log: list[LogRow]

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def write_log_csv(self, path) -> None:
        m = self.u.m
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["step", "t", "dt", "energy", "v_norm"]
                + [f"lambda_{i + 1}" for i in range(m)]
                + ["mass_err_max", "cone_lb_min", "in_B_rho", "below_M1"]
            )
            for r in self.log:
                w.writerow(
                    [r.step, repr(r.t), repr(r.dt), repr(r.energy), repr(r.v_norm)]
                    + [repr(x) for x in r.lambdas]
                    + [repr(r.mass_err_max), repr(r.cone_lb_min), r.in_B_rho, r.below_M1]
                )

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "steps": self.steps,
                "energy": self.energy,
                "v_norm": self.v_norm,
                "el_residual": self.el_residual,
                "lambdas": self.lambdas.tolist(),
                "minus_lambdas": (-self.lambdas).tolist(),
                "classification": str(self.classification),
                "per_component": list(self.classification.per_component),
                "u": self.u.to_dict(),
            }
        )


def _log_row(state: FlowState, ctl: StepControl, op: LaplacianOp, params: SystemParams, tubes) -> LogRow:
    inv = check_invariant_sets(state, ctl, op, tubes)
    c = np.asarray(params.masses)
    mass_err = float(np.max(np.abs(state.u.masses() - c) / c))
    lb = float(state.cone_brackets[..., 0].min()) if state.cone_brackets is not None else float("nan")
    return LogRow(
        state.step_count,
        state.t,
        state.dt,
        state.energy,
        state.v_norm,
        tuple(float(x) for x in state.lambdas),
        mass_err,
        lb,
        inv.in_B_rho,
        inv.below_M1,
        tuple(float(x) for x in state.u.data.min(axis=1)),
        inv.violations,
    )


def run_to_critical(
    init: VecField,
    ctl: StepControl,
    params: SystemParams,
    op: LaplacianOp,
    c4: float | None = None,
    basis: SpectralBasis | None = None,
    targets: Sequence[int] | None = None,
    theta: float = 1e-3,
    order: Sequence[int] | None = None,
) -> SolveReport:
    """Flow ``init`` until ‖V‖ and the Euler-Lagrange residual are both small.

    Saddle mode needs ``basis`` and per-component eigen ``targets``.
    """
    reflector = None
    if ctl.mode == "saddle":
        if basis is None or targets is None:
            raise ValueError("saddle mode needs a spectral basis and targets")
        reflector = lower_mode_reflector(basis, targets)
    state = make_state(init, params, op, ctl, c4)
    tubes = tubes_holding(state, ctl.delta) if ctl.delta is not None else []
    log = [_log_row(state, ctl, op, params, tubes)]
    status = MAX_STEPS
    for _ in range(ctl.max_steps + 1):
        if state.v_norm < ctl.v_tol:
            res = euler_lagrange_residual(state.u, state.lambdas, params, op)
            if res < 10 * ctl.v_tol:
                status = CONVERGED
                break
        if state.step_count >= ctl.max_steps:
            break
        nxt = flow_step(state, ctl, params, op, c4, reflector)
        if nxt.status in (STAGNATION, VANISHED):
            status = nxt.status
            break
        if nxt is state or nxt.step_count == state.step_count:
            # fixed point reached without meeting the residual test
            status = STAGNATION
            break
        state = nxt
        row = _log_row(state, ctl, op, params, tubes)
        log.append(row)
        if row.in_B_rho is False and ctl.mode == "descent":
            status = LEFT_BALL
            break
    res = euler_lagrange_residual(state.u, state.lambdas, params, op)
    return SolveReport(
        state.u,
        np.asarray(state.lambdas),
        state.energy,
        state.v_norm,
        res,
        classify(state.u, theta, order),
        status,
        state.step_count,
        log,
    )
