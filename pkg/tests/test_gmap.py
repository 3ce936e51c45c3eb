import numpy as np
import pytest

from nodalgp.core import VecField, make_params
from nodalgp.discretization import inner_h1
from nodalgp.energy import MassConstraintError, constrained_gradient
from nodalgp.flow import project_to_spheres, run_to_critical, StepControl
from nodalgp.gmap import g_map, pseudogradient_v, split_terms, strong_residuals


def _sphere_point(basis, masses, rng):
    u = VecField(basis.grid, rng.standard_normal((len(masses), 8)) @ basis.vectors[:8])
    return project_to_spheres(u, masses)


def _bordered_oracle(u, i, params, op):
    """Dense solve of the full saddle system [[A, h·u],[h·uᵀ, 0]]."""
    h = op.grid.cell_volume
    shift, rhs = split_terms(u.data, i, params)
    a = op.matrix.toarray() + np.diag(shift)
    n = a.shape[0]
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = a
    big[:n, n] = u[i]
    big[n, :n] = h * u[i]
    sol = np.linalg.solve(big, np.concatenate([rhs, [params.masses[i]]]))
    return sol[:n], sol[n]


def test_matches_dense_bordered_solve(line_op, line_basis, mixed_params):
    u = _sphere_point(line_basis, mixed_params.masses, np.random.default_rng(0))
    res = g_map(u, mixed_params, line_op)
    for i in range(3):
        w, lam = _bordered_oracle(u, i, mixed_params, line_op)
        assert np.allclose(res.w[i], w, rtol=1e-9, atol=1e-11)
        assert res.lambdas[i] == pytest.approx(lam, rel=1e-9)


def test_decoupled_linear_limit(line_op, line_basis):
    # with negligible nonlinearity G maps √c φ_k to itself with λ = -Λ_k
    p = make_params([1e-14, 1e-14], 1e-14, [0.3, 0.7], 1, [np.pi])
    u = VecField(line_op.grid, np.sqrt([[0.3], [0.7]]) * line_basis.vectors[[1, 2]])
    res = g_map(u, p, line_op)
    assert np.allclose(res.w.data, u.data, atol=1e-10)
    assert np.allclose(-res.lambdas, line_basis.values[[1, 2]], rtol=1e-10)


def test_contract_and_solver_agreement(line_op, line_basis, mixed_params):
    rng = np.random.default_rng(1)
    u = _sphere_point(line_basis, mixed_params.masses, rng)
    direct = g_map(u, mixed_params, line_op)
    iterative = g_map(u, mixed_params, line_op, method="cg", seed=7)
    h = line_op.grid.cell_volume
    assert np.allclose(h * np.sum(u.data * direct.w.data, axis=1), mixed_params.masses, rtol=1e-12)
    assert strong_residuals(u, direct, mixed_params, line_op).max() < 1e-10
    diff = direct.w.data - iterative.w.data
    assert np.sqrt(np.sum(inner_h1(line_op, diff, diff))) < 1e-10
    assert all(s.spd_margin > 0 for s in direct.solver_stats)


def test_pseudogradient_inequality_and_positive_case(line_op, line_basis, mixed_params):
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = _sphere_point(line_basis, mixed_params.masses, rng)
        pg = pseudogradient_v(u, mixed_params, line_op)
        assert pg.descent_pairing >= pg.norm_sq - 1e-12
    pos = make_params([1.0, 2.0], 0.5, [0.4, 0.6], 1, [np.pi])
    u = _sphere_point(line_basis, pos.masses, rng)
    diff = pseudogradient_v(u, pos, line_op).v.data - constrained_gradient(u, pos, line_op).data
    assert np.sqrt(np.sum(inner_h1(line_op, diff, diff))) < 1e-12


def test_fixed_point_at_critical_point(line_op, line_basis, bench_params):
    u0 = VecField(line_op.grid, np.sqrt(1e-3) * line_basis.vectors[[1, 1]])
    rep = run_to_critical(u0, StepControl(v_tol=1e-10), bench_params, line_op)
    res = g_map(rep.u, bench_params, line_op)
    assert np.allclose(res.w.data, rep.u.data, atol=1e-9)
    assert np.allclose(res.lambdas, rep.lambdas, rtol=1e-8)


def test_positive_input_gives_positive_image(line_op, line_basis, bench_params):
    rng = np.random.default_rng(3)
    u = VecField(line_op.grid, np.abs(rng.standard_normal((2, 4)) @ line_basis.vectors[:4]))
    u = project_to_spheres(u, bench_params.masses)
    assert g_map(u, bench_params, line_op).w.data.min() >= 0.0


def test_off_sphere_input_rejected(line_op, line_basis, bench_params):
    u = VecField(line_op.grid, line_basis.vectors[[0, 0]])
    with pytest.raises(MassConstraintError):
        pseudogradient_v(u, bench_params, line_op)
