"""Problem parameters, tensor grids, vector fields and solution classification."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ParamsError(ValueError):
    """Raised when a parameter set violates the model assumptions."""


@dataclass(frozen=True)
class SystemParams:
    """Coefficients of the m-coupled cubic system on a box.

    ``beta`` holds only the inter-species couplings (zero diagonal); the
    self-interactions live in ``mu``.
    """

    mu: tuple[float, ...]
    beta: tuple[tuple[float, ...], ...]
    masses: tuple[float, ...]
    dim: int
    lengths: tuple[float, ...]

    @property
    def m(self) -> int:
        return len(self.mu)

    @property
    def beta_array(self) -> np.ndarray:
        return np.array(self.beta, dtype=float)

    # sign-split aggregates; each max is >= 0 and each min is <= 0 by construction
    @property
    def mu_max_plus(self) -> float:
        return max([0.0] + [x for x in self.mu if x > 0])

    @property
    def mu_min_minus(self) -> float:
        return min([0.0] + [x for x in self.mu if x < 0])

    @property
    def beta_max_plus(self) -> float:
        return max([0.0] + [x for x in self._offdiag() if x > 0])

    @property
    def beta_min_minus(self) -> float:
        return min([0.0] + [x for x in self._offdiag() if x < 0])

    def _offdiag(self) -> list[float]:
        return [self.beta[i][j] for i in range(self.m) for j in range(self.m) if i != j]

    @property
    def in_theorem_scope(self) -> bool:
        # the existence theory covers N in {3, 4}; dims 1-2 run the same mechanics
        return self.dim in (3, 4)

    def with_masses(self, masses: Sequence[float]) -> "SystemParams":
        return validate_params(
            SystemParams(self.mu, self.beta, tuple(float(c) for c in masses), self.dim, self.lengths)
        )

    def restrict(self, active: Sequence[int]) -> "SystemParams":
        """Parameters of the subsystem formed by the ``active`` components."""
        idx = list(active)
        beta = tuple(tuple(self.beta[i][j] for j in idx) for i in idx)
        return SystemParams(
            tuple(self.mu[i] for i in idx), beta, tuple(self.masses[i] for i in idx), self.dim, self.lengths
        )

    def to_dict(self) -> dict:
        return {
            "mu": list(self.mu),
            "beta": [list(r) for r in self.beta],
            "masses": list(self.masses),
            "dim": self.dim,
            "lengths": list(self.lengths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        return make_params(d["mu"], d["beta"], d["masses"], d["dim"], d["lengths"])


def make_params(mu, beta, masses, dim, lengths) -> SystemParams:
    """Build and validate a :class:`SystemParams` from plain sequences.

    ``beta`` may be given as a scalar when ``m == 2``.
    """
    mu = tuple(float(x) for x in mu)
    if np.isscalar(beta):
        if len(mu) != 2:
            raise ParamsError("scalar coupling only allowed for m == 2")
        b = float(beta)
        beta = ((0.0, b), (b, 0.0))
    beta = tuple(tuple(float(x) for x in row) for row in beta)
    p = SystemParams(
        mu=mu,
        beta=beta,
        masses=tuple(float(c) for c in masses),
        dim=int(dim),
        lengths=tuple(float(x) for x in lengths),
    )
    return validate_params(p)


def validate_params(params: SystemParams) -> SystemParams:
    """Check the model assumptions and return ``params`` unchanged."""
    m = len(params.mu)
    # zero couplings are reported before shape problems: it is the more specific defect
    for i, row in enumerate(params.beta):
        for j, x in enumerate(row):
            if i != j and x == 0.0:
                raise ParamsError("coupling must be nonzero")
    if m < 1:
        raise ParamsError("need at least one component")
    if any(x == 0.0 for x in params.mu):
        raise ParamsError("self-interaction must be nonzero")
    if len(params.beta) != m or any(len(r) != m for r in params.beta):
        raise ParamsError(f"beta must be {m}x{m}")
    for i in range(m):
        if params.beta[i][i] != 0.0:
            raise ParamsError("beta diagonal must be zero (self-interaction goes in mu)")
        for j in range(i + 1, m):
            if params.beta[i][j] != params.beta[j][i]:
                raise ParamsError("coupling matrix must be symmetric")
    if len(params.masses) != m:
        raise ParamsError(f"need {m} masses")
    if any(not c > 0 for c in params.masses):
        raise ParamsError("masses must be positive")
    if params.dim not in (1, 2, 3):
        raise ParamsError("dim must be 1, 2 or 3")
    if len(params.lengths) != params.dim or any(not x > 0 for x in params.lengths):
        raise ParamsError("need dim positive box lengths")
    if not all(np.isfinite(v) for v in params.mu + params.masses + params.lengths):
        raise ParamsError("non-finite parameter")
    return params


@dataclass(frozen=True)
class Grid:
    """Interior nodes of a uniform tensor grid on a box with zero boundary data."""

    lengths: tuple[float, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.lengths) != len(self.sizes) or len(self.sizes) not in (1, 2, 3):
            raise ParamsError("grid needs 1-3 axes with matching lengths and sizes")
        if any(n < 1 for n in self.sizes):
            raise ParamsError("grid sizes must be positive")

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.lengths, self.sizes))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axes(self) -> list[np.ndarray]:
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacings, self.sizes)]

    def coordinates(self) -> list[np.ndarray]:
        """Flattened node coordinates per axis, lexicographic (C) order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return [x.ravel() for x in mesh]

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(*coords)`` on the interior nodes."""
        return np.asarray(fn(*self.coordinates()), dtype=float)

    def to_dict(self) -> dict:
        return {"lengths": list(self.lengths), "sizes": list(self.sizes)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(float(x) for x in d["lengths"]), tuple(int(n) for n in d["sizes"]))


def grid_for(params: SystemParams, sizes: Iterable[int]) -> Grid:
    sizes = tuple(int(n) for n in sizes)
    if len(sizes) != params.dim:
        raise ParamsError("grid sizes do not match params.dim")
    return Grid(params.lengths, sizes)


@dataclass(frozen=True, eq=False)
class VecField:
    """An m-tuple of grid functions sharing one grid, stored as an (m, N) array."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.grid.node_count:
            raise ValueError(f"expected (m, {self.grid.node_count}) values, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.data[i]

    def __iter__(self):
        return iter(self.data)

    def replace(self, data: np.ndarray) -> "VecField":
        return VecField(self.grid, data)

    def __add__(self, other: "VecField") -> "VecField":
        _same_grid(self, other)
        return VecField(self.grid, self.data + other.data)

    def __sub__(self, other: "VecField") -> "VecField":
        _same_grid(self, other)
        return VecField(self.grid, self.data - other.data)

    def __mul__(self, s: float) -> "VecField":
        return VecField(self.grid, self.data * s)

    __rmul__ = __mul__

    def __neg__(self) -> "VecField":
        return VecField(self.grid, -self.data)

    def masses(self) -> np.ndarray:
        return np.sum(self.data**2, axis=1) * self.grid.cell_volume

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "components": self.data.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "VecField":
        return cls(Grid.from_dict(d["grid"]), np.array(d["components"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "VecField":
        return cls.from_dict(json.loads(text))


def _same_grid(a: VecField, b: VecField) -> None:
    if a.grid != b.grid or a.m != b.m:
        raise ValueError("vector fields live on different grids")


def stack(grid: Grid, fields: Sequence[np.ndarray]) -> VecField:
    return VecField(grid, np.vstack([np.asarray(f, dtype=float) for f in fields]))


# --------------------------------------------------------------------------- classification

ZERO, POSITIVE, NEGATIVE, SIGN_CHANGING = "Zero", "Positive", "Negative", "SignChanging"


@dataclass(frozen=True)
class Classification:
    """Sign structure of a vector field.

    ``tag`` is one of Trivial, SemiTrivial, SignChanging, SemiNodal, Positive,
    Mixed; ``d`` is set for SemiNodal, and ``order`` is the component
    permutation that puts the sign-changing components first.
    """

    tag: str
    per_component: tuple[str, ...]
    d: int | None = None
    order: tuple[int, ...] | None = None

    def __str__(self) -> str:
        return f"SemiNodal({self.d})" if self.tag == "SemiNodal" else self.tag


def classify_component(values: np.ndarray, theta: float, floor: float = 1e-14) -> str:
    amp = float(np.max(np.abs(values))) if values.size else 0.0
    if amp <= floor:
        return ZERO
    lo, hi = float(values.min()), float(values.max())
    neg, pos = lo < -theta * amp, hi > theta * amp
    if neg and pos:
        return SIGN_CHANGING
    return POSITIVE if pos else NEGATIVE


def classify(u: VecField, theta: float = 1e-3, order: Sequence[int] | None = None, floor: float = 1e-14) -> Classification:
    """Classify each component and the whole field.

    With ``order`` given, SemiNodal(d) is reported only if the first ``d``
    components of that order change sign and the rest are positive.
    Without it, the sign-changing components are moved to the front.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    tags = tuple(classify_component(u[i], theta, floor) for i in range(u.m))
    n_zero = tags.count(ZERO)
    if n_zero == u.m:
        return Classification("Trivial", tags)
    if n_zero:
        return Classification("SemiTrivial", tags)
    if all(t == SIGN_CHANGING for t in tags):
        return Classification("SignChanging", tags)
    if all(t == POSITIVE for t in tags):
        return Classification("Positive", tags)
    if set(tags) == {SIGN_CHANGING, POSITIVE}:
        d = tags.count(SIGN_CHANGING)
        if order is None:
            perm = tuple(i for i in range(u.m) if tags[i] == SIGN_CHANGING) + tuple(
                i for i in range(u.m) if tags[i] == POSITIVE
            )
        else:
            perm = tuple(order)
            if sorted(perm) != list(range(u.m)):
                raise ValueError("order must be a permutation of the components")
            if any(tags[perm[i]] != SIGN_CHANGING for i in range(d)):
                return Classification("Mixed", tags)
        return Classification("SemiNodal", tags, d=d, order=perm)
    return Classification("Mixed", tags)
