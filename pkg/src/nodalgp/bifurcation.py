"""Mass-to-zero sweeps: multipliers and normalized profiles against the Dirichlet spectrum."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import SystemParams, VecField, classify, validate_params
from .discretization import LaplacianOp, SpectralBasis, inner_l2
from .energy import euler_lagrange_residual, kinetic_norms
from .flow import StepControl, project_to_spheres, run_to_critical


@dataclass(frozen=True)
class Target:
    """Which branch to follow.

    ``kind`` is positive, sign_changing or semi_nodal; ``k`` is the eigen index
    the sign-changing components approach (ignored for positive), ``d`` the
    number of sign-changing components in the semi-nodal case.
    """

    kind: str
    k: int = 1
    d: int | None = None

    def __post_init__(self):
        if self.kind not in ("positive", "sign_changing", "semi_nodal"):
            raise ValueError("target kind must be positive, sign_changing or semi_nodal")
        if self.kind == "sign_changing" and self.k < 2:
            raise ValueError("sign-changing targets need eigen index k >= 2")
        if self.kind == "semi_nodal" and (self.d is None or self.k < 2):
            raise ValueError("semi-nodal targets need k >= 2 and d")

    def indices(self, m: int) -> list[int]:
        if self.kind == "positive":
            return [1] * m
        if self.kind == "sign_changing":
            return [self.k] * m
        if not 1 <= self.d <= m - 1:
            raise ValueError("d must satisfy 1 <= d <= m-1")
        return [self.k] * self.d + [1] * (m - self.d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepRecord:
    r: float
    masses: list[float]
    lambdas: list[float]
    minus_lambdas: list[float]
    targets: list[float]
    rel_errors: list[float]
    energy: float
    profile_dist: list[float]
    profile_index: list[int]
    target_dist: list[float]
    kinetic_ratio: float
    classification: str
    converged: bool
    status: str
    el_residual: float
    profile_norms: list[float]
    cold_start: bool = False
    on_branch: bool = True
    mode: str = "descent"


@dataclass
class SweepReport:
    direction: list[float]
    radii: list[float]
    target: Target
    target_indices: list[int]
    records: list[SweepRecord]
    notes: list[str] = field(default_factory=list)
    fields: list[VecField] = field(default_factory=list, repr=False)

    def errors(self) -> np.ndarray:
        """(radii, m) relative gaps |−λ_i − Λ_t|/Λ_t."""
        return np.array([r.rel_errors for r in self.records])

    @property
    def errors_decreasing(self) -> bool:
        e = self.errors()
        return bool(np.all(np.diff(e, axis=0) < 0))

    @property
    def all_converged(self) -> bool:
        return all(r.converged and r.on_branch for r in self.records)

    def summary(self) -> dict:
        e = self.errors()
        return {
            "target": self.target.to_dict(),
            "target_indices": self.target_indices,
            "direction": self.direction,
            "radii": self.radii,
            "errors_decreasing": self.errors_decreasing,
            "final_rel_error": e[-1].tolist() if len(e) else [],
            "final_target_dist": self.records[-1].target_dist if self.records else [],
            "all_converged": self.all_converged,
            "notes": self.notes,
        }

    def write_csv(self, path) -> None:
        m = len(self.direction)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["r"]
                + [f"lambda_{i + 1}" for i in range(m)]
                + [f"minus_lambda_{i + 1}" for i in range(m)]
                + [f"profile_dist_{i + 1}" for i in range(m)]
                + ["energy", "converged", "on_branch"]
            )
            for rec in self.records:
                w.writerow(
                    [repr(rec.r)]
                    + [repr(x) for x in rec.lambdas]
                    + [repr(x) for x in rec.minus_lambdas]
                    + [repr(x) for x in rec.profile_dist]
                    + [repr(rec.energy), rec.converged, rec.on_branch]
                )

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "records": [asdict(r) for r in self.records]}, indent=2)


def _validate_sweep(direction: Sequence[float], radii: Sequence[float], m: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(direction, dtype=float)
    r = np.asarray(radii, dtype=float)
    if t.shape != (m,) or np.any(t <= 0) or abs(t.sum() - 1.0) > 1e-12:
        raise ValueError("direction must be a positive point of the simplex with one entry per component")
    if r.ndim != 1 or len(r) == 0 or np.any(r <= 0) or np.any(np.diff(r) >= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    return t, r


def profile_distances(u: VecField, basis: SpectralBasis, masses: np.ndarray, targets: Sequence[int]):
    """Normalized profiles v_i = u_i/√c_i and their L2 distances to ±φ_k."""
    grid = basis.grid
    v = u.data / np.sqrt(masses)[:, None]
    norms = np.sqrt(inner_l2(grid, v, v))
    ov = inner_l2(grid, basis.vectors[None, :, :], v[:, None, :])  # (m, K)
    # ‖v ∓ φ‖² = 2 ∓ 2⟨v, φ⟩ for unit fields
    d = np.sqrt(np.maximum(norms[:, None] ** 2 + 1.0 - 2.0 * np.abs(ov), 0.0))
    best = d.argmin(axis=1)
    target_d = [float(d[i, t - 1]) for i, t in enumerate(targets)]
    return d.min(axis=1), best + 1, target_d, norms


EXPECTED_TAGS = {"positive": "Positive", "sign_changing": "SignChanging", "semi_nodal": "SemiNodal"}


def on_branch(rep, target: Target) -> bool:
    return rep.converged and rep.classification.tag == EXPECTED_TAGS[target.kind]


def initial_guess(basis: SpectralBasis, masses: np.ndarray, targets: Sequence[int]) -> VecField:
    return VecField(basis.grid, np.sqrt(masses)[:, None] * basis.vectors[np.asarray(targets) - 1])


def sweep(
    params_template: SystemParams,
    direction: Sequence[float],
    radii: Sequence[float],
    target: Target,
    ctl: StepControl,
    op: LaplacianOp,
    basis: SpectralBasis,
    theta: float = 1e-3,
    c4: float | None = None,
) -> SweepReport:
    """Follow one branch from the largest radius to the smallest with warm starts.

    Masses are r·direction. A radius that fails to converge is recorded and the
    next radius restarts from the eigenfunction guess.
    """
    m = params_template.m
    t, r = _validate_sweep(direction, radii, m)
    idx = target.indices(m)
    if max(idx) > basis.K:
        raise ValueError("spectral basis too small for the target")
    lam_t = np.array([basis.eigenvalue(k) for k in idx])
    order = None
    if target.kind == "semi_nodal":
        order = tuple(range(m))
    prev = None
    records, fields, notes = [], [], []
    for radius in r:
        masses = radius * t
        params = params_template.with_masses(masses)
        cold = prev is None
        init = initial_guess(basis, masses, idx) if cold else project_to_spheres(prev, masses)
        rep = run_to_critical(init, ctl, params, op, c4, basis, idx, theta, order)
        mode = ctl.mode
        if not on_branch(rep, target) and not cold:
            notes.append(f"r={radius!r}: warm start ended with {rep.status}, {rep.classification}; retried from the eigenfunction guess")
            rep = run_to_critical(initial_guess(basis, masses, idx), ctl, params, op, c4, basis, idx, theta, order)
            cold = True
        if not on_branch(rep, target) and ctl.mode == "descent":
            # plain descent slid down to a lower branch; cancel the unstable lower modes instead
            notes.append(f"r={radius!r}: descent left the branch ({rep.classification}); retried in saddle mode")
            rep = run_to_critical(initial_guess(basis, masses, idx), replace(ctl, mode="saddle"), params, op, c4, basis, idx, theta, order)
            cold, mode = True, "saddle"
        pd, pk, td, norms = profile_distances(rep.u, basis, masses, idx)
        kin = float(np.sum(kinetic_norms(rep.u, op)))
        records.append(
            SweepRecord(
                r=float(radius),
                masses=masses.tolist(),
                lambdas=rep.lambdas.tolist(),
                minus_lambdas=(-rep.lambdas).tolist(),
                targets=lam_t.tolist(),
                rel_errors=(np.abs(-rep.lambdas - lam_t) / lam_t).tolist(),
                energy=rep.energy,
                profile_dist=pd.tolist(),
                profile_index=pk.tolist(),
                target_dist=td,
                kinetic_ratio=kin / float(np.sum(masses * lam_t)),
                classification=str(rep.classification),
                converged=rep.converged,
                status=rep.status,
                el_residual=rep.el_residual,
                profile_norms=norms.tolist(),
                cold_start=cold,
                on_branch=on_branch(rep, target),
                mode=mode,
            )
        )
        fields.append(rep.u)
        prev = rep.u if on_branch(rep, target) else None
    return SweepReport(t.tolist(), r.tolist(), target, idx, records, notes, fields)


@dataclass
class SemiTrivialReport:
    active: list[int]
    reduced: SweepReport
    embedded: list[VecField] = field(repr=False)
    full_residuals: list[float]
    reduced_residuals: list[float]
    classifications: list[str]
    full_lambdas: list[list[float]] = field(default_factory=list)

    @property
    def residuals_match(self) -> bool:
        return all(
            abs(a - b) <= 1e-14 * max(1.0, abs(b)) for a, b in zip(self.full_residuals, self.reduced_residuals)
        )

    def to_json(self) -> str:
        d = json.loads(self.reduced.to_json())
        d["active"] = self.active
        d["full_residuals"] = self.full_residuals
        d["reduced_residuals"] = self.reduced_residuals
        d["classifications"] = self.classifications
        d["full_lambdas"] = [[None if np.isnan(x) else x for x in row] for row in self.full_lambdas]
        return json.dumps(d, indent=2)


def semi_trivial_sweep(
    params_template: SystemParams,
    active: Sequence[int],
    direction: Sequence[float],
    radii: Sequence[float],
    target: Target,
    ctl: StepControl,
    op: LaplacianOp,
    basis: SpectralBasis,
    theta: float = 1e-3,
) -> SemiTrivialReport:
    """Sweep the subsystem of ``active`` components, then pad with zero components.

    ``direction`` and ``target`` refer to the reduced system. Multipliers of the
    inactive components are free, so they are reported as NaN.
    """
    active = sorted(int(i) for i in active)
    m = params_template.m
    if not active or len(active) >= m or active[0] < 0 or active[-1] >= m:
        raise ValueError("active must be a nonempty proper subset of the components")
    sub = validate_params(params_template.restrict(active))
    rep = sweep(sub, direction, radii, target, ctl, op, basis, theta)
    embedded, full_res, red_res, tags, full_lams = [], [], [], [], []
    for rec, u in zip(rep.records, rep.fields):
        data = np.zeros((m, op.grid.node_count))
        data[active] = u.data
        big = VecField(op.grid, data)
        lam = np.zeros(m)
        lam[active] = rec.lambdas
        embedded.append(big)
        full_res.append(euler_lagrange_residual(big, lam, params_template, op))
        red_res.append(euler_lagrange_residual(u, rec.lambdas, sub, op))
        tags.append(str(classify(big, theta)))
        full = [float("nan")] * m
        for j, i in enumerate(active):
            full[i] = rec.lambdas[j]
        full_lams.append(full)
    return SemiTrivialReport(active, rep, embedded, full_res, red_res, tags, full_lams)
