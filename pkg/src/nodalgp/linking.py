"""Spectral linking sets, feasibility constants and sampled minimax brackets.

Sign-changing case (index k): the set M is the product over components of
half-spheres in span{φ_1..φ_{k+1}} (last coefficient ≥ 0), its boundary is
where some component has no φ_{k+1} part, and the set it links is the part
of the mass spheres orthogonal to φ_1..φ_k. The semi-nodal variant (d) keeps
this structure on the first d components and pins the rest to √c_i φ_1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import SystemParams, VecField
from .discretization import LaplacianOp, SpectralBasis, norm_lp
from .energy import energy_terms, kinetic_norms

KINDS = (
    "S_k",
    "M_k1",
    "dM_k1",
    "S_k_perp",
    "M_k1d_ground",
    "dM_k1d_ground",
    "S_kd_perp_S",
)


class SamplingError(RuntimeError):
    pass


# --------------------------------------------------------------------------- feasibility


@dataclass(frozen=True)
class Condition:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return bool(self.lhs < self.rhs)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, "margin": self.margin}


@dataclass(frozen=True)
class FeasibilityReport:
    c4: float
    c4_converged: bool
    rho_window: tuple[float, float]
    rho_chosen: float
    rho_recipe: tuple[float, float]
    m0: float
    m1: float
    k: int
    d: int | None
    spectral_gap: bool
    conditions: dict[str, Condition]
    cone_mass: tuple[Condition, ...]
    n4_level_threshold: float
    n4_rho_cond: Condition | None
    in_theorem_scope: bool
    notes: tuple[str, ...] = field(default=())
    # stopping tolerance of the Sobolev estimate, when known
    c4_tol: float | None = None

    @property
    def rho_in_window(self) -> bool:
        return self.rho_window[0] < self.rho_chosen < self.rho_window[1]

    @property
    def feasible(self) -> bool:
        return self.spectral_gap and self.rho_in_window and self.m0 > 0 and all(c.holds for c in self.conditions.values())

    @property
    def cone_mass_ok(self) -> bool:
        return all(c.holds for c in self.cone_mass)

    def failed(self) -> list[str]:
        out = [] if self.spectral_gap else ["spectral_gap"]
        if not self.rho_in_window:
            out.append("rho_window")
        if not self.m0 > 0:
            out.append("barrier_positive")
        out += [name for name, c in self.conditions.items() if not c.holds]
        return out

    def to_dict(self) -> dict:
        return {
            "c4": self.c4,
            "c4_converged": self.c4_converged,
            "c4_tol": self.c4_tol,
            "rho_window": list(self.rho_window),
            "rho_chosen": self.rho_chosen,
            "rho_recipe": list(self.rho_recipe),
            "m0": self.m0,
            "m1": self.m1,
            "k": self.k,
            "d": self.d,
            "spectral_gap": self.spectral_gap,
            "conditions": {k: v.to_dict() for k, v in self.conditions.items()},
            "cone_mass": [c.to_dict() for c in self.cone_mass],
            "n4_level_threshold": self.n4_level_threshold,
            "n4_rho_cond": self.n4_rho_cond.to_dict() if self.n4_rho_cond else None,
            "in_theorem_scope": self.in_theorem_scope,
            "feasible": self.feasible,
            "failed": self.failed(),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def rho_upper_bound(params: SystemParams, c4: float) -> float:
    pos = params.mu_max_plus + params.beta_max_plus
    neg = params.mu_min_minus + params.beta_min_minus
    return 2.0 * c4**4 / (4.0 * pos - 3.0 * neg)


def barrier_constants(params: SystemParams, c4: float, rho: float) -> tuple[float, float]:
    m0 = 0.5 - 0.25 * (params.mu_max_plus + params.beta_max_plus) * rho / c4**4
    return m0, m0 * rho


def feasibility_report(
    params: SystemParams,
    basis: SpectralBasis,
    k: int,
    c4: float,
    d: int | None = None,
    rho_override: float | None = None,
    c4_converged: bool = True,
    c4_tol: float | None = None,
) -> FeasibilityReport:
    """Evaluate every smallness condition for linking index ``k`` (and ``d``).

    Without an override, ρ is the midpoint of the recipe interval
    (4/3, 2)·Λ_{k+1}Σc.
    """
    if basis.K < k + 1:
        raise ValueError(f"basis needs at least {k + 1} eigenpairs")
    m = params.m
    if d is not None and not 1 <= d <= m - 1:
        raise ValueError("d must satisfy 1 <= d <= m-1")
    c = np.asarray(params.masses)
    lam_k, lam_k1, lam_1 = basis.eigenvalue(k), basis.eigenvalue(k + 1), basis.eigenvalue(1)
    gap = basis.has_gap(k)
    s = float(c.sum())
    recipe = (4.0 / 3.0 * lam_k1 * s, 2.0 * lam_k1 * s)
    rho = float(rho_override) if rho_override is not None else 0.5 * (recipe[0] + recipe[1])
    upper = rho_upper_bound(params, c4)
    m0, m1 = barrier_constants(params, c4, rho)
    neg = params.mu_min_minus + params.beta_min_minus
    w = 2.0 - neg * rho / c4**4
    conds: dict[str, Condition] = {}
    conds["ball_cap"] = Condition(0.25 * w * lam_k1 * s, m1)
    b_mix = params.beta_max_plus - params.mu_min_minus - params.beta_min_minus
    if d is None:
        lin = lam_k1 * s
        quad = lam_k1**2 * float(np.sum(c**2))
        cmin = float(c.min())
        name = "level_gap"
    else:
        lin = lam_k1 * float(c[:d].sum()) + lam_1 * float(c[d:].sum())
        quad = lam_k1**2 * float(np.sum(c[:d] ** 2)) + lam_1**2 * float(np.sum(c[d:] ** 2))
        cmin = float(c[:d].min())
        name = "seminodal_level_gap"
    conds[name] = Condition(
        b_mix * rho * lin / c4**4 + params.mu_max_plus * quad / c4**4,
        w * (lam_k1 - lam_k) * cmin,
    )
    cone = tuple(
        Condition((max(params.mu[i], 0.0) + params.beta_max_plus) ** 2 * rho**3, lam_1 * c4**8 * c[i]) for i in range(m)
    )
    pos = params.mu_max_plus + params.beta_max_plus
    n4_level = 0.25 * c4**4 / pos if pos > 0 else float("inf")
    n4_rho = Condition(2.0 * rho, c4**2 / params.beta_max_plus) if params.beta_max_plus > 0 else None
    notes = []
    if not params.in_theorem_scope:
        notes.append(f"dim={params.dim} is outside theorem scope; conditions evaluated for the discrete mechanics only")
    if not c4_converged:
        notes.append("Sobolev constant estimate did not meet its convergence tolerance")
    if not gap:
        notes.append(f"no spectral gap between modes {k} and {k + 1}")
    return FeasibilityReport(
        c4=float(c4),
        c4_converged=bool(c4_converged),
        rho_window=(0.0, float(upper)),
        rho_chosen=rho,
        rho_recipe=recipe,
        m0=float(m0),
        m1=float(m1),
        k=k,
        d=d,
        spectral_gap=gap,
        conditions=conds,
        cone_mass=cone,
        n4_level_threshold=float(n4_level),
        n4_rho_cond=n4_rho,
        in_theorem_scope=params.in_theorem_scope,
        notes=tuple(notes),
        c4_tol=c4_tol,
    )


# --------------------------------------------------------------------------- samplers


@dataclass(frozen=True, eq=False)
class LinkSampleSet:
    kind: str
    k: int
    d: int | None
    coeffs: np.ndarray  # (S, m, K) coefficients of each component on the unit eigenbasis
    points: np.ndarray  # (S, m, N) grid values
    attempts: int = 0

    def __len__(self) -> int:
        return self.points.shape[0]

    def field(self, s: int, grid) -> VecField:
        return VecField(grid, self.points[s])


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    n[n == 0] = 1.0
    return x / n


def _to_points(coeffs: np.ndarray, basis: SpectralBasis, masses: np.ndarray) -> np.ndarray:
    K = coeffs.shape[-1]
    return np.sqrt(masses)[None, :, None] * np.einsum("smj,jn->smn", coeffs, basis.vectors[:K])


def distinguished_coeffs(k: int, d: int | None, m: int, K: int) -> np.ndarray:
    """(√c_i φ_{k+1})_i, or with components past d sitting on √c_i φ_1."""
    t = np.zeros((m, K))
    t[:, k] = 1.0
    if d is not None:
        t[d:, :] = 0.0
        t[d:, 0] = 1.0
    return t


def _half_sphere(rng, shape, k: int) -> np.ndarray:
    t = _unit_rows(rng.standard_normal(shape + (k + 1,)))
    t[..., k] = np.abs(t[..., k])
    return t


def _perp_block(rng, shape, k: int, J: int, lam: np.ndarray) -> np.ndarray:
    # weights Λ_{k+1}/Λ_j bias the draw toward low energy so the ball filter keeps enough points
    w = lam[k] / lam[k : k + J]
    return _unit_rows(rng.standard_normal(shape + (J,)) * w)


def sample_linking_set(
    kind: str,
    k: int,
    d: int | None,
    basis: SpectralBasis,
    masses: Sequence[float],
    count: int,
    seed: int = 0,
    J: int = 8,
    op: LaplacianOp | None = None,
    rho: float | None = None,
    max_rounds: int = 50,
) -> LinkSampleSet:
    """Random points of one of the linking sets.

    Coefficient vectors are normalized Gaussians. M-type sets always contain
    the distinguished point; the orthogonal-complement sets are truncated to
    J modes above k, include the distinguished point and are filtered by the
    kinetic ball Σ‖∇u_i‖² < ρ when ``rho`` and ``op`` are given.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if count < 1:
        raise ValueError("count must be positive")
    c = np.asarray(masses, dtype=float)
    m = len(c)
    semi = kind in ("M_k1d_ground", "dM_k1d_ground", "S_kd_perp_S")
    if semi and (d is None or not 1 <= d <= m - 1):
        raise ValueError("semi-nodal sets need 1 <= d <= m-1")
    rng = np.random.default_rng(seed)
    lam = basis.values
    perp = kind in ("S_k_perp", "S_kd_perp_S")
    K = k + J if perp else k + 1
    if K > basis.K:
        raise ValueError(f"basis has {basis.K} modes, sampler needs {K}")
    nd = d if semi else m
    base = distinguished_coeffs(k, d if semi else None, m, K)

    def draw(n: int) -> np.ndarray:
        t = np.zeros((n, m, K))
        if kind == "S_k":
            t[:, :, :k] = _unit_rows(rng.standard_normal((n, m, k)))
        elif kind in ("M_k1", "M_k1d_ground"):
            t[:, :nd, : k + 1] = _half_sphere(rng, (n, nd), k)
        elif kind in ("dM_k1", "dM_k1d_ground"):
            t[:, :nd, : k + 1] = _half_sphere(rng, (n, nd), k)
            # one component (at least) moves onto the boundary sphere spanned by φ_1..φ_k
            hit = rng.integers(0, nd, size=n)
            t[np.arange(n), hit, k] = 0.0
            t[np.arange(n), hit, :k] = _unit_rows(rng.standard_normal((n, k)))
        else:
            t[:, :nd, k : k + J] = _perp_block(rng, (n, nd), k, J, lam)
        if semi:
            if kind == "S_kd_perp_S":
                w = lam[0] / lam[:K]
                t[:, nd:, :] = _unit_rows(rng.standard_normal((n, m - nd, K)) * w)
            else:
                t[:, nd:, :] = base[nd:]
        return t

    include_base = kind in ("M_k1", "M_k1d_ground", "S_k_perp", "S_kd_perp_S")
    chunks = [base[None]] if include_base else []
    total = len(chunks)
    attempts = 0
    rounds = 0
    while total < count:
        n = count - total
        t = draw(max(n, 64) if rho is not None else n)
        attempts += len(t)
        if rho is not None and op is not None:
            kin = np.sum(c[None, :] * np.sum(t**2 * lam[None, None, :K], axis=-1), axis=1)
            t = t[kin < rho]
        t = t[: count - total]
        chunks.append(t)
        total += len(t)
        rounds += 1
        if rounds > max_rounds and total < count:
            if total <= int(include_base):
                raise SamplingError("kinetic-ball filter rejected every candidate; ρ is too small for this k")
            break
    coeffs = np.concatenate(chunks, axis=0)
    pts = _to_points(coeffs, basis, c)
    if rho is not None and op is not None:
        # the exact kinetic energy of the grid fields is the final arbiter
        keep = np.sum(kinetic_norms(pts, op), axis=-1) < rho
        coeffs, pts = coeffs[keep], pts[keep]
        if len(pts) == 0:
            raise SamplingError("kinetic-ball filter rejected every candidate; ρ is too small for this k")
    return LinkSampleSet(kind, k, d, coeffs, pts, attempts)


# --------------------------------------------------------------------------- minimax bracket


@dataclass(frozen=True)
class BracketResult:
    k: int
    d: int | None
    boundary_sup: float
    lower: float
    upper: float
    m1: float
    counts: tuple[int, int, int]
    boundary_argmax: int = 0
    lower_argmin: int = 0
    upper_argmax: int = 0

    @property
    def margin_left(self) -> float:
        """lower - sup over the boundary set; positive when separated."""
        return self.lower - self.boundary_sup

    @property
    def margin_mid(self) -> float:
        return self.upper - self.lower

    @property
    def margin_right(self) -> float:
        return self.m1 - self.upper

    @property
    def sandwich_holds(self) -> bool:
        return self.margin_left > 0 and self.margin_mid >= 0 and self.margin_right > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(margin_left=self.margin_left, margin_mid=self.margin_mid, margin_right=self.margin_right, holds=self.sandwich_holds)
        return d

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "d", "lower", "upper", "margin_left", "margin_right"])
            w.writerow(
                [self.k, "" if self.d is None else self.d, repr(self.lower), repr(self.upper), repr(self.margin_left), repr(self.margin_right)]
            )


def _energies(points: np.ndarray, params: SystemParams, op: LaplacianOp, chunk: int = 2000) -> np.ndarray:
    out = [energy_terms(points[s : s + chunk], params, op)[:, -1] for s in range(0, len(points), chunk)]
    return np.concatenate(out)


def estimate_minimax_bracket(
    k: int,
    d: int | None,
    params: SystemParams,
    basis: SpectralBasis,
    op: LaplacianOp,
    report: FeasibilityReport,
    sample_count: int = 10_000,
    seed: int = 0,
    J: int = 8,
) -> BracketResult:
    """Sampled sup over the boundary set, inf over the linked set and sup over M."""
    semi = d is not None
    kinds = ("dM_k1d_ground", "S_kd_perp_S", "M_k1d_ground") if semi else ("dM_k1", "S_k_perp", "M_k1")
    rho = report.rho_chosen
    sets = [
        sample_linking_set(kinds[0], k, d, basis, params.masses, sample_count, seed),
        sample_linking_set(kinds[1], k, d, basis, params.masses, sample_count, seed + 1, J=J, op=op, rho=rho),
        sample_linking_set(kinds[2], k, d, basis, params.masses, sample_count, seed + 2),
    ]
    e = [_energies(s.points, params, op) for s in sets]
    return BracketResult(
        k=k,
        d=d,
        boundary_sup=float(e[0].max()),
        lower=float(e[1].min()),
        upper=float(e[2].max()),
        m1=report.m1,
        counts=tuple(len(s) for s in sets),
        boundary_argmax=int(e[0].argmax()),
        lower_argmin=int(e[1].argmin()),
        upper_argmax=int(e[2].argmax()),
    )


def lower_bound_ladder(
    k: int,
    d: int | None,
    params: SystemParams,
    basis: SpectralBasis,
    op: LaplacianOp,
    rho: float,
    Js: Sequence[int],
    sample_count: int = 2000,
    seed: int = 0,
) -> list[float]:
    """Running infimum over nested truncations J_1 < J_2 < ...; nonincreasing by construction."""
    kind = "S_kd_perp_S" if d is not None else "S_k_perp"
    best = np.inf
    out = []
    for n, J in enumerate(sorted(Js)):
        s = sample_linking_set(kind, k, d, basis, params.masses, sample_count, seed + n, J=J, op=op, rho=rho)
        best = min(best, float(_energies(s.points, params, op).min()))
        out.append(best)
    return out


def highest_energy_point(samples: LinkSampleSet, params: SystemParams, op: LaplacianOp) -> VecField:
    e = _energies(samples.points, params, op)
    return VecField(op.grid, samples.points[int(np.argmax(e))])


# --------------------------------------------------------------------------- δ₀


def cone_lower_bounds(points: np.ndarray, op: LaplacianOp, c4: float, components: Sequence[int] | None = None) -> np.ndarray:
    """Per sample, min over the chosen components and both signs of C·‖u_i∓‖₄."""
    pts = points if components is None else points[:, list(components), :]
    neg = norm_lp(op.grid, np.maximum(-pts, 0.0), 4)
    pos = norm_lp(op.grid, np.maximum(pts, 0.0), 4)
    return c4 * np.minimum(neg, pos).min(axis=-1)


def delta0_estimate(
    k: int,
    d: int | None,
    basis: SpectralBasis,
    masses: Sequence[float],
    rho: float,
    op: LaplacianOp,
    c4: float,
    sample_count: int = 10_000,
    seed: int = 0,
    J: int = 8,
    components: Sequence[int] | None = None,
) -> float:
    """Sampled minimum of the cone-distance lower bracket over the linked set.

    By default only the components required to change sign are scanned
    (all of them, or the first d).
    """
    kind = "S_kd_perp_S" if d is not None else "S_k_perp"
    s = sample_linking_set(kind, k, d, basis, masses, sample_count, seed, J=J, op=op, rho=rho)
    if components is None:
        components = range(d) if d is not None else range(len(masses))
    return float(cone_lower_bounds(s.points, op, c4, components).min())
