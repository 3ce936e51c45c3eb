"""The constrained linear map G and the pseudogradient V = u - G(u).

For each component the image w_i solves the linear problem

    (L + D_i) w_i = f_i - λ_i u_i,      ⟨u_i, w_i⟩ = c_i,

where D_i collects the nonnegative potentials coming from negative couplings
(and from a negative self-interaction), and f_i the positive ones. The single
constraint row is eliminated by a Schur complement, so every solve is SPD.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import SystemParams, VecField
from .discretization import LaplacianOp, discrete_dirichlet_values, inner_l2
from .energy import check_masses, dual_norms, nonlinearity

METHODS = ("direct", "cg")


class SPDBreakdown(RuntimeError):
    pass


@dataclass
class SolveStats:
    method: str
    iterations: int
    residual: float
    spd_margin: float


@dataclass(frozen=True, eq=False)
class GResult:
    w: VecField
    lambdas: np.ndarray
    solver_stats: tuple[SolveStats, ...] = field(default=())

    def to_json(self) -> str:
        return json.dumps(
            {
                "w": self.w.to_dict(),
                "lambdas": self.lambdas.tolist(),
                "stats": [vars(s) for s in self.solver_stats],
            }
        )


def split_terms(data: np.ndarray, i: int, params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Return (shift, rhs) for component ``i``: the diagonal potential that goes
    to the left side and the source that stays on the right."""
    ui = data[i]
    shift = np.zeros_like(ui)
    rhs = np.zeros_like(ui)
    mu = params.mu[i]
    if mu > 0:
        rhs += mu * ui**3
    else:
        shift += -mu * ui**2
    for j in range(params.m):
        if j == i:
            continue
        b = params.beta[i][j]
        if b > 0:
            rhs += b * data[j] ** 2 * ui
        else:
            shift += -b * data[j] ** 2
    return shift, rhs


def _cg(a: sp.spmatrix, b: np.ndarray, x0, rtol: float, maxiter: int) -> tuple[np.ndarray, int]:
    count = [0]

    def cb(_):
        count[0] += 1

    pre = sp.diags(1.0 / a.diagonal())
    x, info = spla.cg(a, b, x0=x0, rtol=rtol, atol=0.0, M=pre, maxiter=maxiter, callback=cb)
    if info < 0:
        raise SPDBreakdown("conjugate gradients broke down")
    # one refinement sweep pushes the answer to the attainable round-off floor
    r = b - a @ x
    dx, _ = spla.cg(a, r, rtol=rtol, atol=0.0, M=pre, maxiter=maxiter, callback=cb)
    return x + dx, count[0]


def solve_component_g(
    u: VecField,
    i: int,
    params: SystemParams,
    op: LaplacianOp,
    method: str = "direct",
    x0: Sequence[np.ndarray] | None = None,
    rtol: float = 1e-12,
) -> tuple[np.ndarray, float, SolveStats]:
    """Image component w_i and multiplier λ_i (the +λu convention)."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    data = u.data
    ui = data[i]
    ci = params.masses[i]
    shift, rhs = split_terms(data, i, params)
    a = (op.matrix + sp.diags(shift)).tocsc()
    # Λ₁ʰ bounds the Laplacian from below, so Λ₁ʰ + min(shift) bounds the left operator
    spd_margin = float(discrete_dirichlet_values(op.grid, 1)[0] + shift.min())
    if not spd_margin > 0 or shift.min() < 0:
        raise SPDBreakdown(f"left operator of component {i} is not positive definite")
    sources = np.vstack([rhs, ui])
    if method == "direct":
        sol = spla.splu(a).solve(np.ascontiguousarray(sources.T)).T
        iters = 1
    else:
        starts = x0 if x0 is not None else (None, None)
        maxiter = 20 * len(ui)
        s0, n0 = _cg(a, sources[0], starts[0], rtol, maxiter)
        s1, n1 = _cg(a, sources[1], starts[1], rtol, maxiter)
        sol, iters = np.vstack([s0, s1]), n0 + n1
    grid = op.grid
    lam = (inner_l2(grid, ui, sol[0]) - ci) / inner_l2(grid, ui, sol[1])
    w = sol[0] - lam * sol[1]
    res = a @ w - rhs + lam * ui
    stats = SolveStats(method, int(iters), float(dual_norms(res, op)), spd_margin)
    return w, float(lam), stats


def g_map(u: VecField, params: SystemParams, op: LaplacianOp, method: str = "direct", rtol: float = 1e-12, seed=None) -> GResult:
    """Apply G component by component.

    With ``method="cg"`` and a ``seed``, each solve starts from a random vector
    (used to check that the result does not depend on the start).
    """
    if u.m != params.m:
        raise ValueError("component count mismatch")
    rng = np.random.default_rng(seed) if seed is not None else None
    ws, lams, stats = [], [], []
    for i in range(params.m):
        x0 = None
        if method == "cg" and rng is not None:
            x0 = tuple(rng.standard_normal(u.grid.node_count) for _ in range(2))
        w, lam, st = solve_component_g(u, i, params, op, method, x0, rtol)
        ws.append(w)
        lams.append(lam)
        stats.append(st)
    return GResult(u.replace(np.vstack(ws)), np.array(lams), tuple(stats))


def strong_residuals(u: VecField, res: GResult, params: SystemParams, op: LaplacianOp) -> np.ndarray:
    """Dual norms of (L + D_i) w_i - f_i + λ_i u_i recomputed from scratch."""
    out = []
    for i in range(params.m):
        shift, rhs = split_terms(u.data, i, params)
        wi = res.w[i]
        r = op.apply(wi) + shift * wi - rhs + res.lambdas[i] * u[i]
        out.append(float(dual_norms(r, op)))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class Pseudogradient:
    """V = u - G(u) together with its certificate values.

    ``descent_pairing`` is dE(u)[V], which equals the pairing of the
    constrained gradient with V because V is tangent; ``norm_sq`` is ‖V‖²_H1.
    """

    v: VecField
    g: GResult
    descent_pairing: float
    norm_sq: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(max(self.norm_sq, 0.0)))


def pseudogradient_v(u: VecField, params: SystemParams, op: LaplacianOp, mass_rtol: float = 1e-10, **kw) -> Pseudogradient:
    check_masses(u, params.masses, mass_rtol)
    res = g_map(u, params, op, **kw)
    return _wrap(u, res, params, op)


def _wrap(u: VecField, res: GResult, params: SystemParams, op: LaplacianOp) -> Pseudogradient:
    v = u.data - res.w.data
    lv = op.apply(v)
    norm_sq = float(np.sum(inner_l2(op.grid, lv, v)))
    grad_strong = op.apply(u.data) - nonlinearity(u.data, params)
    pairing = float(np.sum(inner_l2(op.grid, grad_strong, v)))
    return Pseudogradient(u.replace(v), res, pairing, norm_sq)
