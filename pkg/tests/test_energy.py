import numpy as np
import pytest

from nodalgp.core import VecField, make_params
from nodalgp.discretization import inner_h1
from nodalgp.energy import (
    MassConstraintError,
    constrained_gradient,
    critical_multipliers,
    energy,
    energy_terms,
    euler_lagrange_residual,
    free_gradient,
    nonlinearity,
)


def _random(basis, m, rng, scale=1.0):
    return scale * rng.standard_normal((m, 8)) @ basis.vectors[:8]


def test_energy_against_explicit_sums(line_op, mixed_params):
    # quartic parts are reported as the amounts subtracted from the kinetic term
    rng = np.random.default_rng(0)
    u = rng.standard_normal((3, 200))
    h = line_op.grid.spacings[0]
    up = np.pad(u, ((0, 0), (1, 1)))
    kin = 0.5 * np.sum(np.diff(up, axis=1) ** 2) / h
    mu = np.array(mixed_params.mu)
    selfq = 0.25 * h * np.sum(mu[:, None] * u**4)
    cross = 0.0
    for i in range(3):
        for j in range(3):
            if i != j:
                cross += 0.25 * h * mixed_params.beta[i][j] * np.sum(u[i] ** 2 * u[j] ** 2)
    br = energy(VecField(line_op.grid, u), mixed_params, line_op)
    assert br.kinetic == pytest.approx(kin, rel=1e-12)
    assert br.self_quartic == pytest.approx(selfq, rel=1e-12)
    assert br.cross_quartic == pytest.approx(cross, rel=1e-12)
    assert br.total == pytest.approx(kin - selfq - cross, rel=1e-12)


def test_batched_energy_matches_single(line_op, mixed_params):
    rng = np.random.default_rng(1)
    batch = rng.standard_normal((4, 3, 200))
    rows = energy_terms(batch, mixed_params, line_op)
    for b in range(4):
        assert rows[b, -1] == pytest.approx(energy(VecField(line_op.grid, batch[b]), mixed_params, line_op).total)


def test_free_gradient_finite_differences(line_op, line_basis, mixed_params):
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = _random(line_basis, 3, rng)
        v = _random(line_basis, 3, rng)
        g = free_gradient(VecField(line_op.grid, u), mixed_params, line_op).data
        t = 1e-5
        fd = (energy_terms(u + t * v, mixed_params, line_op)[-1] - energy_terms(u - t * v, mixed_params, line_op)[-1]) / (2 * t)
        exact = np.sum(inner_h1(line_op, g, v))
        assert fd == pytest.approx(exact, rel=1e-7)


def test_constrained_gradient_is_tangent(line_op, line_basis, mixed_params):
    rng = np.random.default_rng(3)
    raw = VecField(line_op.grid, _random(line_basis, 3, rng))
    u = raw * 1.0
    u = u.replace(u.data * np.sqrt(np.array(mixed_params.masses) / u.masses())[:, None])
    cg = constrained_gradient(u, mixed_params, line_op).data
    h = line_op.grid.cell_volume
    assert np.allclose(h * np.sum(cg * u.data, axis=1), 0.0, atol=1e-13)
    with pytest.raises(MassConstraintError):
        constrained_gradient(raw * 2.0, mixed_params, line_op)


def test_residual_vanishes_in_linear_eigen_case(line_op, line_basis):
    # tiny couplings: √c φ_2 with multiplier -Λ_2 leaves only the cubic remainder
    p = make_params([1e-12, 1e-12], 1e-12, [1.0, 1.0], 1, [np.pi])
    phi = line_basis.eigenfield(2)
    u = VecField(line_op.grid, np.vstack([phi, phi]))
    lam = critical_multipliers(u, p, line_op)
    assert np.allclose(-lam, line_basis.eigenvalue(2), rtol=1e-10)
    assert euler_lagrange_residual(u, lam, p, line_op) < 1e-10


def test_nonlinearity_formula(mixed_params):
    u = np.array([[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]])
    out = nonlinearity(u, mixed_params)
    i = 0
    ref = 1.2 * u[0] ** 3 + (0.5 * u[1] ** 2 - 0.7 * u[2] ** 2) * u[0]
    assert np.allclose(out[i], ref)
