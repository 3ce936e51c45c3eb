import json

import numpy as np
import pytest
from scipy.optimize import minimize

from nodalgp.core import Grid
from nodalgp.discretization import (
    LaplacianOp,
    analytic_dirichlet_values,
    discrete_dirichlet_values,
    eigenpairs,
    estimate_sobolev_c4,
    inner_h1,
    inner_l2,
    norm_lp,
    sobolev_ratio,
)

# frozen from the multi-start estimator, confirmed by the quasi-Newton oracle below
SOBOLEV_LINE_200 = 1.1940140416605616


def _quotient_and_gradient(u, h):
    """‖∇u‖/‖u‖₄ with forward differences and zero walls, plus its gradient."""
    du = np.diff(np.concatenate([[0.0], u, [0.0]]))
    kin = np.sum(du**2) / h
    q = h * np.sum(u**4)
    f = np.sqrt(kin) / q**0.25
    return f, f * ((du[:-1] - du[1:]) / (h * kin) - h * u**3 / q)


def test_matrix_matches_stencil_on_2d_box():
    g = Grid((1.0, 2.0), (5, 7))
    op = LaplacianOp(g)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(g.node_count)
    U = np.pad(u.reshape(5, 7), 1)
    hx, hy = g.spacings
    ref = (2 * U[1:-1, 1:-1] - U[:-2, 1:-1] - U[2:, 1:-1]) / hx**2 + (2 * U[1:-1, 1:-1] - U[1:-1, :-2] - U[1:-1, 2:]) / hy**2
    assert np.allclose(op.apply(u), ref.ravel(), rtol=1e-13, atol=1e-10)
    assert np.allclose(op.apply(op.solve(u)), u)


def test_h1_product_equals_forward_difference_energy(line_op):
    rng = np.random.default_rng(1)
    u = rng.standard_normal(200)
    h = line_op.grid.spacings[0]
    up = np.concatenate([[0.0], u, [0.0]])
    assert inner_h1(line_op, u, u) == pytest.approx(np.sum(np.diff(up) ** 2) / h, rel=1e-12)


def test_norms():
    g = Grid((2.0,), (3,))
    u = np.array([1.0, -2.0, 2.0])
    h = g.cell_volume
    assert norm_lp(g, u, 2) == pytest.approx(np.sqrt(9 * h))
    assert norm_lp(g, u, 4) == pytest.approx((33 * h) ** 0.25)
    assert norm_lp(g, u, np.inf) == 2.0
    with pytest.raises(ValueError):
        norm_lp(g, u, 3)


def test_eigenvalues_match_closed_forms(line_op, line_basis):
    assert np.allclose(line_basis.values, discrete_dirichlet_values(line_op.grid, 12), rtol=1e-10)
    k = np.arange(1, 6)
    assert np.all(np.abs(line_basis.values[:5] - k**2) / k**2 < 1e-3)
    assert np.allclose(analytic_dirichlet_values((np.pi,), 3), [1, 4, 9])


def test_eigenfields_orthonormal_and_signed(line_op, line_basis):
    V = line_basis.vectors
    gram = inner_l2(line_op.grid, V[:, None, :], V[None, :, :])
    assert np.allclose(gram, np.eye(12), atol=1e-10)
    assert np.all(line_basis.eigenfield(1) > 0)
    assert line_basis.has_gap(1)


def test_2d_spectrum_counts_degenerate_modes():
    op = LaplacianOp(Grid((np.pi, np.pi), (30, 30)))
    b = eigenpairs(op, 3)
    assert np.allclose(b.values, discrete_dirichlet_values(op.grid, 3))
    assert not b.has_gap(2)


def test_spectrum_export(tmp_path, line_basis):
    line_basis.write_csv(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "k,lambda_k" and len(rows) == 13
    line_basis.write_json(tmp_path / "s.json")
    blob = json.loads((tmp_path / "s.json").read_text())
    assert len(blob["vectors"]) == 12


def test_sobolev_estimate_frozen(line_op):
    est = estimate_sobolev_c4(line_op)
    assert est.converged
    assert est.value == pytest.approx(SOBOLEV_LINE_200, rel=1e-10)
    assert sobolev_ratio(line_op, est.minimizer) == pytest.approx(est.value, rel=1e-10)


def test_sobolev_estimate_matches_multistart_oracle(line_op):
    # 200 positive random starts, each minimized by L-BFGS to tight tolerance
    h = line_op.grid.spacings[0]
    x = line_op.grid.axes()[0]
    rng = np.random.default_rng(5)
    modes = np.sin(np.outer(np.arange(1, 7), x)).T
    opts = dict(maxiter=20_000, ftol=1e-15, gtol=1e-11, maxcor=30)
    best = np.inf
    for _ in range(200):
        u0 = np.abs(modes @ (rng.standard_normal(6) / np.arange(1, 7) ** 2)) + 0.01 * rng.random(x.size)
        r = minimize(_quotient_and_gradient, u0, args=(h,), jac=True, method="L-BFGS-B", options=opts)
        best = min(best, r.fun)
    est = estimate_sobolev_c4(line_op)
    assert est.value == pytest.approx(best, rel=1e-4)
    assert est.value <= best * (1 + 1e-10)
    # the first eigenfield is admissible but not optimal
    assert est.value < sobolev_ratio(line_op, np.sin(x))


def test_sobolev_estimate_on_small_grid(small_op):
    est = estimate_sobolev_c4(small_op)
    assert est.converged and est.tol == 1e-11
    assert est.value < SOBOLEV_LINE_200
