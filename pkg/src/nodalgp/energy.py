"""Energy of the coupled system, its H1-metric gradients and the Euler-Lagrange residual."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import SystemParams, VecField
from .discretization import LaplacianOp, inner_l2


class MassConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    self_quartic: float
    cross_quartic: float
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _check(u: VecField, params: SystemParams, op: LaplacianOp) -> np.ndarray:
    if u.m != params.m:
        raise ValueError(f"field has {u.m} components, params expect {params.m}")
    if u.grid != op.grid:
        raise ValueError("field and operator live on different grids")
    return u.data


def nonlinearity(data: np.ndarray, params: SystemParams) -> np.ndarray:
    """Pointwise μ_i u_i³ + Σ_{j≠i} β_ij u_j² u_i for every component."""
    mu = np.asarray(params.mu)[:, None]
    sq = data**2
    return mu * data**3 + (params.beta_array @ sq) * data


def energy_terms(data: np.ndarray, params: SystemParams, op: LaplacianOp) -> np.ndarray:
    """Vectorized energy; ``data`` has shape (..., m, N), returns (..., 4) rows of
    (kinetic, self_quartic, cross_quartic, total)."""
    h = op.grid.cell_volume
    mu = np.asarray(params.mu)
    beta = params.beta_array
    kin = 0.5 * np.sum(inner_l2(op.grid, op.apply(data), data), axis=-1)
    sq = data**2
    quart = h * np.sum(sq**2, axis=-1)
    self_q = 0.25 * np.sum(mu * quart, axis=-1)
    cross = h * np.einsum("...in,ij,...jn->...", sq, beta, sq)
    cross_q = 0.25 * cross
    return np.stack([kin, self_q, cross_q, kin - self_q - cross_q], axis=-1)


def energy(u: VecField, params: SystemParams, op: LaplacianOp) -> EnergyBreakdown:
    data = _check(u, params, op)
    kin, sq, cq, tot = (float(x) for x in energy_terms(data, params, op))
    return EnergyBreakdown(kin, sq, cq, tot)


def kinetic_norms(u: VecField | np.ndarray, op: LaplacianOp) -> np.ndarray:
    """Per-component ‖∇u_i‖²."""
    data = u.data if isinstance(u, VecField) else np.asarray(u)
    return inner_l2(op.grid, op.apply(data), data)


def free_gradient(u: VecField, params: SystemParams, op: LaplacianOp) -> VecField:
    """H1 representative of dE(u): u_i - L⁻¹(μ_i u_i³ + Σ β_ij u_j² u_i)."""
    data = _check(u, params, op)
    return u.replace(data - op.solve(nonlinearity(data, params)))


def check_masses(u: VecField, masses: Sequence[float], rtol: float = 1e-10) -> None:
    got = u.masses()
    c = np.asarray(masses, dtype=float)
    if np.any(np.abs(got - c) > rtol * c):
        raise MassConstraintError(f"masses {got} differ from prescribed {c}")


def constrained_gradient(u: VecField, params: SystemParams, op: LaplacianOp, rtol: float = 1e-10) -> VecField:
    """Tangential part of the free gradient on the product of mass spheres.

    The tangent space is the H1-orthogonal complement of the L⁻¹u_i, so the
    projection subtracts θ_i L⁻¹u_i with θ_i making the result L2-orthogonal
    to u_i.
    """
    check_masses(u, params.masses, rtol)
    g = free_gradient(u, params, op).data
    data = u.data
    z = op.solve(data)
    theta = inner_l2(op.grid, g, data) / inner_l2(op.grid, z, data)
    return u.replace(g - theta[:, None] * z)


def residual_fields(u: VecField, lambdas: Sequence[float], params: SystemParams, op: LaplacianOp) -> np.ndarray:
    """Strong-form residual -Δu_j + λ_j u_j - μ_j u_j³ - Σ β_kj u_k² u_j per component."""
    data = _check(u, params, op)
    lam = np.asarray(lambdas, dtype=float)[:, None]
    return op.apply(data) + lam * data - nonlinearity(data, params)


def dual_norms(r: np.ndarray, op: LaplacianOp) -> np.ndarray:
    """Discrete H⁻¹ norms sqrt(⟨L⁻¹r, r⟩) of each row."""
    return np.sqrt(np.maximum(inner_l2(op.grid, op.solve(r), r), 0.0))


def euler_lagrange_residual(u: VecField, lambdas: Sequence[float], params: SystemParams, op: LaplacianOp) -> float:
    """Largest dual-norm residual over the components; λ enters with the +λu sign."""
    return float(np.max(dual_norms(residual_fields(u, lambdas, params, op), op)))


def critical_multipliers(u: VecField, params: SystemParams, op: LaplacianOp) -> np.ndarray:
    """Multipliers minimizing the dual-norm residual at ``u`` (least squares in H⁻¹)."""
    data = _check(u, params, op)
    r0 = op.apply(data) - nonlinearity(data, params)
    z = op.solve(data)
    return -inner_l2(op.grid, z, r0) / inner_l2(op.grid, z, data)
