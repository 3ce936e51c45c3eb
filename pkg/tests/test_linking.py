import json

import numpy as np
import pytest

from nodalgp.core import make_params
from nodalgp.discretization import estimate_sobolev_c4
from nodalgp.energy import kinetic_norms
from nodalgp.linking import (
    KINDS,
    barrier_constants,
    delta0_estimate,
    estimate_minimax_bracket,
    feasibility_report,
    lower_bound_ladder,
    rho_upper_bound,
    sample_linking_set,
)

# frozen benchmark constants (1D, L=π, n=200, μ=(1,1), β=0.1, c=(1e-3,1e-3), k=1)
RHO = 0.013332247630509424
M0 = 0.49819615868888195
M1 = 0.0066420745562087435


@pytest.fixture(scope="module")
def c4(line_op):
    return estimate_sobolev_c4(line_op).value


def test_benchmark_feasibility_frozen(line_basis, bench_params, c4):
    rep = feasibility_report(bench_params, line_basis, 1, c4)
    assert rep.feasible and rep.rho_in_window and rep.cone_mass_ok
    assert rep.rho_chosen == pytest.approx(RHO, rel=1e-10)
    assert rep.m0 == pytest.approx(M0, rel=1e-10)
    assert rep.m1 == pytest.approx(M1, rel=1e-10)
    assert not rep.in_theorem_scope and rep.notes
    assert json.loads(rep.to_json())["conditions"]["level_gap"]["holds"]


def test_constants_by_hand(bench_params, c4):
    # all coefficients positive: upper = 2C⁴/(4(μ⁺+β⁺)), M0 = ½ - ¼(μ⁺+β⁺)ρ/C⁴
    assert rho_upper_bound(bench_params, c4) == pytest.approx(2 * c4**4 / (4 * 1.1))
    m0, m1 = barrier_constants(bench_params, c4, 0.01)
    assert m0 == pytest.approx(0.5 - 0.25 * 1.1 * 0.01 / c4**4)
    assert m1 == pytest.approx(m0 * 0.01)


def test_large_masses_fail_named_conditions(line_basis, c4):
    p = make_params([1, 1], 0.1, [0.5, 0.5], 1, [np.pi])
    rep = feasibility_report(p, line_basis, 1, c4)
    assert not rep.feasible
    assert "ball_cap" in rep.failed() and "level_gap" in rep.failed()


def test_semi_nodal_report_uses_its_own_gap(line_basis, bench_params, c4):
    rep = feasibility_report(bench_params, line_basis, 1, c4, d=1)
    assert "seminodal_level_gap" in rep.conditions and rep.feasible


@pytest.mark.parametrize("kind", KINDS)
def test_samples_lie_on_spheres(kind, line_op, line_basis, bench_params):
    d = 1 if kind in ("M_k1d_ground", "dM_k1d_ground", "S_kd_perp_S") else None
    s = sample_linking_set(kind, 1, d, line_basis, bench_params.masses, 200, seed=1, op=line_op, rho=RHO)
    h = line_op.grid.cell_volume
    assert np.allclose(h * np.sum(s.points**2, axis=-1), 1e-3, rtol=1e-12)
    assert len(s) == 200


def test_set_geometry(line_op, line_basis, bench_params):
    h = line_op.grid.cell_volume
    phi = line_basis.vectors
    perp = sample_linking_set("S_k_perp", 1, None, line_basis, bench_params.masses, 300, op=line_op, rho=RHO)
    assert np.abs(h * perp.points @ phi[0]).max() < 1e-12
    assert np.all(np.sum(kinetic_norms(perp.points, line_op), axis=-1) < RHO)
    top = sample_linking_set("M_k1", 1, None, line_basis, bench_params.masses, 300)
    assert np.all(h * top.points @ phi[1] >= -1e-15)
    assert np.allclose(top.points[0], np.sqrt(1e-3) * phi[[1, 1]])
    edge = sample_linking_set("dM_k1", 1, None, line_basis, bench_params.masses, 300)
    on_low = np.abs(h * edge.points @ phi[1]) < 1e-12
    assert np.all(on_low.any(axis=1))


def test_sandwich_and_linear_collapse(line_op, line_basis, bench_params, c4):
    rep = feasibility_report(bench_params, line_basis, 1, c4)
    br = estimate_minimax_bracket(1, None, bench_params, line_basis, line_op, rep, 2000)
    assert br.sandwich_holds
    assert br.margin_left > 0 and br.margin_right > 0
    lin = make_params([1e-10, 1e-10], -1e-10, [1e-3, 1e-3], 1, [np.pi])
    bl = estimate_minimax_bracket(1, None, lin, line_basis, line_op, feasibility_report(lin, line_basis, 1, c4), 2000)
    ref = 0.5 * 2e-3 * line_basis.eigenvalue(2)
    assert abs(bl.lower - ref) < 1e-6 and abs(bl.upper - ref) < 1e-6


def test_ladder_is_monotone(line_op, line_basis, bench_params):
    lad = lower_bound_ladder(1, None, bench_params, line_basis, line_op, RHO, [2, 4, 8], 500)
    assert all(a >= b for a, b in zip(lad, lad[1:]))


def test_delta0_positive_for_sign_changing_components(line_op, line_basis, bench_params, c4):
    d0 = delta0_estimate(1, None, line_basis, bench_params.masses, RHO, line_op, c4, 1000)
    assert d0 > 0
    d1 = delta0_estimate(1, 1, line_basis, bench_params.masses, RHO, line_op, c4, 1000)
    assert d1 > 0
