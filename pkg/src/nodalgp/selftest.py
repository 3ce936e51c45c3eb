"""The twelve acceptance checks, runnable from tests and from the CLI."""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .bifurcation import Target, semi_trivial_sweep, sweep
from .core import SystemParams, VecField, classify, grid_for, make_params
from .discretization import (
    LaplacianOp,
    SpectralBasis,
    eigenpairs,
    estimate_sobolev_c4,
    inner_h1,
    inner_l2,
    norm_h1,
)
from .energy import constrained_gradient, energy_terms, free_gradient, kinetic_norms
from .flow import (
    StepControl,
    check_invariant_sets,
    project_to_spheres,
    run_to_critical,
    sphere_distance,
)
from .gmap import g_map, pseudogradient_v, strong_residuals
from .linking import (
    FeasibilityReport,
    delta0_estimate,
    estimate_minimax_bracket,
    feasibility_report,
    highest_energy_point,
    sample_linking_set,
)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    @property
    def within_budget(self) -> bool:
        return self.seconds < self.budget

    def line(self) -> str:
        ok = "PASS" if self.passed and self.within_budget else "FAIL"
        return f"[{ok}] {self.number:2d}. {self.name}: {self.detail} ({self.seconds:.2f}s / {self.budget:.0f}s)"


# --------------------------------------------------------------------------- shared setups


@dataclass(frozen=True, eq=False)
class Bench:
    params: SystemParams
    op: LaplacianOp
    basis: SpectralBasis
    c4: float
    report: FeasibilityReport


@lru_cache(maxsize=None)
def _line_setup(n: int, K: int) -> tuple[LaplacianOp, SpectralBasis, float]:
    from .core import Grid

    op = LaplacianOp(Grid((np.pi,), (n,)))
    return op, eigenpairs(op, K), estimate_sobolev_c4(op).value


def benchmark(d: int | None = None, n: int = 200) -> Bench:
    """m=2 on (0, π): μ=(1,1), β₁₂=0.1, c=(1e-3, 1e-3), linking index 1."""
    params = make_params([1.0, 1.0], 0.1, [1e-3, 1e-3], 1, [np.pi])
    op, basis, c4 = _line_setup(n, 12)
    return Bench(params, op, basis, c4, feasibility_report(params, basis, 1, c4, d=d))


def random_sphere_points(rng, basis: SpectralBasis, masses, count: int, J: int = 8, decay: float = 1.0) -> np.ndarray:
    """Random smooth fields on the mass spheres, (count, m, N)."""
    m = len(masses)
    w = (basis.values[0] / basis.values[:J]) ** decay
    t = rng.standard_normal((count, m, J)) * w
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return np.sqrt(np.asarray(masses))[None, :, None] * np.einsum("smj,jn->smn", t, basis.vectors[:J])


def _ball_points(rng, bench: Bench, count: int, positive: tuple[int, ...] = ()) -> np.ndarray:
    pts = []
    rho = bench.report.rho_chosen
    c = np.asarray(bench.params.masses)
    while sum(len(p) for p in pts) < count:
        decay = rng.uniform(0.3, 2.0)
        x = random_sphere_points(rng, bench.basis, c, 256, J=10, decay=decay)
        for i in positive:
            x[:, i] = np.abs(x[:, i])
        kin = np.sum(kinetic_norms(x, bench.op), axis=-1)
        pts.append(x[kin < rho])
    return np.concatenate(pts)[:count]


# --------------------------------------------------------------------------- criteria


def crit_spectrum() -> tuple[bool, str]:
    errs = {}
    for n in (200, 400):
        op = LaplacianOp(grid_for(make_params([1, 1], 1, [1, 1], 1, [np.pi]), [n]))
        b = eigenpairs(op, 5)
        k = np.arange(1, 6)
        errs[n] = np.abs(b.values - k**2) / k**2
    ratio = errs[200] / errs[400]
    ok = bool(np.all(errs[200] < 1e-3) and np.all(ratio >= 3.5))
    return ok, f"max rel err {errs[200].max():.2e}, min refinement ratio {ratio.min():.3f}"


def crit_gradient(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    params = make_params([1.5, -0.7, 0.9], [[0, 0.4, -0.6], [0.4, 0, 0.3], [-0.6, 0.3, 0]], [1, 1, 1], 1, [np.pi])
    op, basis, _ = _line_setup(200, 12)
    worst = 0.0
    t = 1e-5
    for _ in range(50):
        u = random_sphere_points(rng, basis, rng.uniform(0.2, 2.0, 3), 1, J=10)[0]
        v = random_sphere_points(rng, basis, [1.0, 1.0, 1.0], 1, J=10)[0]
        v /= np.sqrt(np.sum(inner_h1(op, v, v)))
        uf = VecField(op.grid, u)
        g = free_gradient(uf, params, op).data
        exact = float(np.sum(inner_h1(op, g, v)))
        e_plus = energy_terms(u + t * v, params, op)[-1]
        e_minus = energy_terms(u - t * v, params, op)[-1]
        fd = (e_plus - e_minus) / (2 * t)
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-300))
    return worst < 1e-6, f"worst relative gap {worst:.2e} over 50 pairs"


def _mixed_three(masses=(0.5, 0.3, 0.8)) -> SystemParams:
    return make_params([1.2, -0.8, 0.6], [[0, 0.5, -0.7], [0.5, 0, -0.4], [-0.7, -0.4, 0]], list(masses), 1, [np.pi])


def crit_gmap_contract(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    params = _mixed_three()
    op, basis, _ = _line_setup(200, 12)
    c = np.asarray(params.masses)
    worst_c = worst_r = worst_u = 0.0
    for _ in range(100):
        u = VecField(op.grid, random_sphere_points(rng, basis, c, 1, J=10, decay=rng.uniform(0.3, 1.5))[0])
        res = g_map(u, params, op, method="cg", seed=int(rng.integers(1 << 31)))
        again = g_map(u, params, op, method="cg")
        cons = np.abs(inner_l2(op.grid, u.data, res.w.data) - c) / c
        unorm = float(np.sqrt(np.sum(inner_h1(op, u.data, u.data))))
        sr = strong_residuals(u, res, params, op).max() / (1 + unorm**3)
        diff = res.w.data - again.w.data
        agree = float(np.sqrt(np.sum(inner_h1(op, diff, diff))))
        worst_c, worst_r, worst_u = max(worst_c, cons.max()), max(worst_r, sr), max(worst_u, agree)
    ok = worst_c <= 1e-11 and worst_r < 1e-10 and worst_u <= 1e-10
    return ok, f"constraint {worst_c:.1e}·c, scaled residual {worst_r:.1e}, re-solve gap {worst_u:.1e}"


SIGN_PATTERNS = {
    "mu+beta+": ([1.0, 0.8], 0.5),
    "mu-beta+": ([-1.0, 0.8], 0.5),
    "mu+beta-": ([1.0, 0.8], -0.5),
    "mu-beta-": ([-1.0, -0.6], -0.5),
}


def crit_pseudogradient(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    op, basis, c4 = _line_setup(200, 12)
    worst_gap = np.inf
    worst_match = 0.0
    for name, (mu, beta) in SIGN_PATTERNS.items():
        params = make_params(mu, beta, [0.02, 0.03], 1, [np.pi])
        rho = feasibility_report(params, basis, 1, c4).rho_chosen
        got = 0
        while got < 25:
            x = random_sphere_points(rng, basis, params.masses, 64, J=10, decay=rng.uniform(0.5, 2.0))
            x = x[np.sum(kinetic_norms(x, op), axis=-1) < rho]
            for pt in x[: 25 - got]:
                u = VecField(op.grid, pt)
                pg = pseudogradient_v(u, params, op)
                worst_gap = min(worst_gap, pg.descent_pairing - pg.norm_sq)
                if name == "mu+beta+":
                    diff = pg.v.data - constrained_gradient(u, params, op).data
                    worst_match = max(worst_match, float(np.sqrt(np.sum(inner_h1(op, diff, diff)))))
                got += 1
    ok = worst_gap >= -1e-9 and worst_match <= 1e-9
    return ok, f"min (pairing - ‖V‖²) {worst_gap:.2e}, max |V - constrained grad| {worst_match:.1e}"


def crit_energy_lower_bound(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    bench = benchmark()
    pts = _ball_points(rng, bench, 1000)
    e = energy_terms(pts, bench.params, bench.op)[:, -1]
    kin = np.sum(kinetic_norms(pts, bench.op), axis=-1)
    gap = e - bench.report.m0 * kin
    return bool(gap.min() >= -1e-10), f"min E - M0·Σ‖∇u‖² = {gap.min():.3e} on {len(pts)} points"


def crit_sandwich(seed: int = 0) -> tuple[bool, str]:
    bench = benchmark()
    br = estimate_minimax_bracket(1, None, bench.params, bench.basis, bench.op, bench.report, 10_000, seed)
    lin = make_params([1e-10, -1e-10], 1e-10, [1e-3, 1e-3], 1, [np.pi])
    rl = feasibility_report(lin, bench.basis, 1, bench.c4)
    bl = estimate_minimax_bracket(1, None, lin, bench.basis, bench.op, rl, 10_000, seed)
    ref = 0.5 * 2e-3 * bench.basis.eigenvalue(2)
    collapse = max(abs(bl.lower - ref), abs(bl.upper - ref))
    ok = br.sandwich_holds and min(br.counts) >= 10_000 and collapse < 1e-6
    return ok, (
        f"margins {br.margin_left:.3e}/{br.margin_mid:.3e}/{br.margin_right:.3e}, "
        f"linear-limit collapse {collapse:.1e}"
    )


def default_delta(bench: Bench, d: int | None = None, samples: int = 10_000) -> float:
    return 0.1 * delta0_estimate(1, d, bench.basis, bench.params.masses, bench.report.rho_chosen, bench.op, bench.c4, samples)


def crit_flow_contracts() -> tuple[bool, str]:
    bench = benchmark()
    b = bench.basis
    c = np.asarray(bench.params.masses)
    init = VecField(b.grid, np.vstack([b.eigenfield(1) + 0.3 * b.eigenfield(3), b.eigenfield(1) + 0.2 * b.eigenfield(2)]))
    init = project_to_spheres(init, c)
    ctl = StepControl(
        dt_init=0.05, dt_max=0.05, v_tol=1e-14, max_steps=500,
        rho=bench.report.rho_chosen, m1=bench.report.m1, delta=default_delta(bench, samples=2000),
    )
    rep = run_to_critical(init, ctl, bench.params, bench.op, bench.c4)
    e = np.array([r.energy for r in rep.log])
    rises = np.diff(e).max()
    drift = max(r.mass_err_max for r in rep.log)
    viol = sum(len(r.violations) for r in rep.log)
    steps = len(rep.log) - 1
    ok = steps == 500 and rises <= 1e-12 and drift <= 1e-10 and viol == 0
    return ok, f"{steps} steps, max energy rise {rises:.1e}, max mass drift {drift:.1e}·c, violations {viol}"


def _linking_init(bench: Bench, d: int | None) -> VecField:
    kind = "M_k1d_ground" if d is not None else "M_k1"
    s = sample_linking_set(kind, 1, d, bench.basis, bench.params.masses, 2000, seed=0)
    return highest_energy_point(s, bench.params, bench.op)


def crit_sign_changing() -> tuple[bool, str]:
    bench = benchmark()
    init = _linking_init(bench, None)
    ctl = StepControl(rho=bench.report.rho_chosen, m1=bench.report.m1)
    rep = run_to_critical(init, ctl, bench.params, bench.op, bench.c4)
    cls = classify(rep.u, 1e-3)
    ok = rep.converged and rep.v_norm < 1e-8 and rep.el_residual < 1e-6 and cls.tag == "SignChanging"
    return ok, f"{rep.status} in {rep.steps} steps, ‖V‖={rep.v_norm:.1e}, EL={rep.el_residual:.1e}, {cls}"


def crit_semi_nodal() -> tuple[bool, str]:
    bench = benchmark(d=1)
    init = _linking_init(bench, 1)
    ctl = StepControl(rho=bench.report.rho_chosen, m1=bench.report.m1)
    rep = run_to_critical(init, ctl, bench.params, bench.op, bench.c4, order=(0, 1))
    cls = rep.classification
    min_pos = min(r.min_nodes[1] for r in rep.log)
    ok = (
        rep.converged
        and cls.per_component[0] == "SignChanging"
        and float(rep.u[1].min()) > 0
        and min_pos > 0
        and cls.tag == "SemiNodal"
    )
    return ok, f"{rep.status}, {cls}, min node of component 2 over the run {min_pos:.2e}"


def crit_bifurcation() -> tuple[bool, str]:
    params = make_params([1.0, 1.0], 0.1, [1e-3, 1e-3], 1, [np.pi])
    op, basis, _ = _line_setup(200, 12)
    ctl = StepControl(max_steps=1000)
    radii = [1e-2, 1e-3, 1e-4]
    notes = []
    ok = True
    for tg in (Target("positive"), Target("sign_changing", 2), Target("semi_nodal", 2, 1)):
        rep = sweep(params, [0.5, 0.5], radii, tg, ctl, op, basis)
        final = rep.errors()[-1]
        dist = max(rep.records[-1].target_dist)
        good = rep.all_converged and rep.errors_decreasing and final.max() < 5e-2 and dist < 1e-2
        ok &= good
        notes.append(f"{tg.kind}: err {final.max():.1e}, dist {dist:.1e}")
    st = semi_trivial_sweep(params, [0], [1.0], radii, Target("sign_changing", 2), ctl, op, basis)
    good = st.residuals_match and st.reduced.errors_decreasing and all(t == "SemiTrivial" for t in st.classifications)
    ok &= good
    notes.append(f"semi-trivial residual match {st.residuals_match}")
    return bool(ok), "; ".join(notes)


def crit_sphere_rate(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    bench = benchmark()
    c = bench.params.masses
    s_vals = np.array([1e-3, 1e-4, 1e-5])
    slopes = []
    for pt in random_sphere_points(rng, bench.basis, c, 20, J=8):
        u = VecField(bench.op.grid, pt)
        v = pseudogradient_v(u, bench.params, bench.op).v
        d = [sphere_distance(u + s * v, c, bench.op) for s in s_vals]
        slopes.append(np.polyfit(np.log(s_vals), np.log(d), 1)[0])
    slopes = np.array(slopes)
    dev = float(np.abs(slopes - 2).max())
    return dev <= 0.1, f"slopes in [{slopes.min():.4f}, {slopes.max():.4f}]"


def _negative_h1(op: LaplacianOp, x: np.ndarray) -> float:
    return float(norm_h1(op, np.maximum(-x, 0.0)))


def tube_points(rng, bench: Bench, i: int, delta: float, count: int) -> list[VecField]:
    """Points of B_ρ whose component i has ‖u_i⁻‖_H1 ≤ δ (so they lie in the tube)."""
    op, c = bench.op, np.asarray(bench.params.masses)
    out = []
    while len(out) < count:
        base = _ball_points(rng, bench, 1, positive=(i,))[0]
        z = random_sphere_points(rng, bench.basis, c, 1, J=10)[0][i]
        goal = rng.uniform(0.3, 0.95) * delta
        lo, hi = 0.0, 1.0
        while _negative_h1(op, base[i] + hi * z) < goal and hi < 1e6:
            hi *= 2
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _negative_h1(op, base[i] + mid * z) < goal:
                lo = mid
            else:
                hi = mid
        x = base.copy()
        x[i] = base[i] + lo * z
        u = project_to_spheres(VecField(op.grid, x), c)
        inside = _negative_h1(op, u[i]) <= delta and np.sum(kinetic_norms(u, op)) < bench.report.rho_chosen
        if inside:
            out.append(u)
    return out


def crit_cone_mapping(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    bench = benchmark()
    if not bench.report.cone_mass_ok:
        return False, "mass condition for cone invariance fails on the benchmark"
    op = bench.op
    worst_sign = np.inf
    for pt in _ball_points(rng, bench, 50, positive=(0,)):
        w = g_map(VecField(op.grid, pt), bench.params, op).w[0]
        worst_sign = min(worst_sign, float(w.min() / np.abs(w).max()))
    delta = default_delta(bench)
    worst_tube = -np.inf
    for u in tube_points(rng, bench, 0, delta, 50):
        w = g_map(u, bench.params, op).w[0]
        worst_tube = max(worst_tube, _negative_h1(op, w) - delta / 2)
    ok = worst_sign >= -1e-9 and worst_tube <= 1e-9
    return ok, f"min w_i/‖w_i‖∞ {worst_sign:.2e}; max (‖w_i⁻‖ - δ/2) {worst_tube:.2e} at δ={delta:.3e}"


CRITERIA: list[tuple[int, str, Callable[[], tuple[bool, str]], float]] = [
    (1, "spectrum oracle", crit_spectrum, 5),
    (2, "gradient check", crit_gradient, 10),
    (3, "G-map contract", crit_gmap_contract, 30),
    (4, "pseudogradient inequality", crit_pseudogradient, 30),
    (5, "energy lower bound on B_rho", crit_energy_lower_bound, 10),
    (6, "minimax sandwich", crit_sandwich, 60),
    (7, "flow contracts", crit_flow_contracts, 60),
    (8, "sign-changing solve", crit_sign_changing, 120),
    (9, "semi-nodal solve", crit_semi_nodal, 120),
    (10, "bifurcation sweeps", crit_bifurcation, 600),
    (11, "sphere retraction rate", crit_sphere_rate, 10),
    (12, "cone mapping", crit_cone_mapping, 60),
]


def run_criterion(number: int) -> CriterionResult:
    num, name, fn, budget = CRITERIA[number - 1]
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failed criterion, reported with its message
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CriterionResult(num, name, bool(ok), detail, time.perf_counter() - t0, budget)


def run_all(echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    out = []
    for num, *_ in CRITERIA:
        res = run_criterion(num)
        if echo:
            echo(res.line())
        out.append(res)
    return out
