"""Discrete measures, couplings and conditional kernels.

Measures are weight vectors on a fixed, ordered support. Couplings are
nonnegative matrices over a product support and conditional kernels are
row-stochastic matrices. No support geometry is stored; costs and Gram
matrices carry whatever geometry an algorithm needs.

Total variation uses the l1 convention: ``tv_norm`` of two disjoint Diracs is
2, not 1. This is the convention under which Pinsker reads
``tv_norm(mu, nu) ** 2 <= 2 * kl(mu, nu)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

import numpy as np
from numpy.typing import ArrayLike

from mirrorcert.errors import (
    DomainViolation,
    EmptyVector,
    RowOfZeroMass,
    ShapeMismatch,
    SupportMismatch,
)

# Mass tolerance for objects flagged as probabilities
PROBABILITY_TOL = 1e-12


def _readonly(values: ArrayLike, ndim: int, what: str) -> np.ndarray:
    """Copy values into a read-only float64 array of the given rank."""
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise ShapeMismatch(f"{what} must be {ndim}-dimensional, got shape {array.shape}")
    if array.size == 0:
        raise EmptyVector(f"{what} has no entries")
    if not np.all(np.isfinite(array)):
        raise DomainViolation(f"{what} has non-finite entries")
    if np.any(array < 0):
        raise DomainViolation(f"{what} has negative entries (min {array.min()!r})")
    array.setflags(write=False)
    return array


def _check_probability(array: np.ndarray, what: str) -> None:
    total = float(array.sum())
    if abs(total - 1.0) > PROBABILITY_TOL:
        raise DomainViolation(f"{what} is flagged as a probability but has mass {total!r}")


def _ids(ids: tuple, size: int, what: str) -> tuple:
    if not ids:
        return tuple(range(size))
    ids = tuple(ids)
    if len(ids) != size:
        raise ShapeMismatch(f"{what}: {len(ids)} ids for {size} entries")
    return ids


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Nonnegative weights over an ordered finite support."""

    weights: np.ndarray
    probability: bool = False
    support_ids: tuple = ()

    def __post_init__(self) -> None:
        weights = _readonly(self.weights, 1, "measure weights")
        if self.probability:
            _check_probability(weights, "measure")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "support_ids", _ids(self.support_ids, weights.size, "measure"))

    @classmethod
    def uniform(cls, n: int) -> DiscreteMeasure:
        return cls(np.full(n, 1.0 / n), probability=True)

    @classmethod
    def dirac(cls, n: int, index: int) -> DiscreteMeasure:
        weights = np.zeros(n)
        weights[index] = 1.0
        return cls(weights, probability=True)

    @classmethod
    def counting(cls, n: int) -> DiscreteMeasure:
        """All weights equal to one (the reference measure of the plain entropy)."""
        return cls(np.ones(n))

    @classmethod
    def from_dict(cls, data: dict, *, probability: bool = False) -> DiscreteMeasure:
        if not isinstance(data, dict) or "weights" not in data:
            raise ShapeMismatch("measure JSON must be an object with a 'weights' list")
        return cls(data["weights"], probability=probability)

    def to_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights]}

    @property
    def n(self) -> int:
        return int(self.weights.size)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> DiscreteMeasure:
        """Rescale to mass one."""
        mass = self.mass
        if mass <= 0:
            raise DomainViolation("cannot normalise a measure of zero mass")
        return DiscreteMeasure(self.weights / mass, probability=True, support_ids=self.support_ids)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self.support_ids == other.support_ids
            and self.probability == other.probability
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Coupling:
    """Nonnegative n x m matrix over the product support X x Y."""

    weights: np.ndarray
    probability: bool = False
    row_ids: tuple = ()
    col_ids: tuple = ()

    def __post_init__(self) -> None:
        weights = _readonly(self.weights, 2, "coupling weights")
        if self.probability:
            _check_probability(weights, "coupling")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "row_ids", _ids(self.row_ids, weights.shape[0], "coupling rows"))
        object.__setattr__(self, "col_ids", _ids(self.col_ids, weights.shape[1], "coupling columns"))

    @classmethod
    def from_dict(cls, data: dict, *, probability: bool = False) -> Coupling:
        if not isinstance(data, dict) or "weights" not in data:
            raise ShapeMismatch("coupling JSON must be an object with a 'weights' matrix")
        return cls(data["weights"], probability=probability)

    def to_dict(self) -> dict:
        return {"weights": [[float(w) for w in row] for row in self.weights]}

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape  # type: ignore[return-value]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Coupling):
            return NotImplemented
        return (
            self.row_ids == other.row_ids
            and self.col_ids == other.col_ids
            and self.probability == other.probability
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ConditionalKernel:
    """Row-stochastic n x m matrix: row i is the law of Y given X = i."""

    weights: np.ndarray
    row_ids: tuple = ()
    col_ids: tuple = ()

    def __post_init__(self) -> None:
        weights = _readonly(self.weights, 2, "kernel weights")
        row_sums = weights.sum(axis=1)
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > PROBABILITY_TOL:
            raise DomainViolation(f"kernel rows must sum to one (worst deviation {worst!r})")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "row_ids", _ids(self.row_ids, weights.shape[0], "kernel rows"))
        object.__setattr__(self, "col_ids", _ids(self.col_ids, weights.shape[1], "kernel columns"))

    @classmethod
    def from_dict(cls, data: dict) -> ConditionalKernel:
        if not isinstance(data, dict) or "weights" not in data:
            raise ShapeMismatch("kernel JSON must be an object with a 'weights' matrix")
        return cls(data["weights"])

    def to_dict(self) -> dict:
        return {"weights": [[float(w) for w in row] for row in self.weights]}

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConditionalKernel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    __hash__ = None  # type: ignore[assignment]


MeasureLike = Union[DiscreteMeasure, Coupling, ConditionalKernel, np.ndarray]


def weights_of(x: Any) -> np.ndarray:
    """Weights of a measure-like value as a float64 array (no validation)."""
    if isinstance(x, (DiscreteMeasure, Coupling, ConditionalKernel)):
        return x.weights
    return np.asarray(x, dtype=np.float64)


def marginal_x(pi: Coupling) -> DiscreteMeasure:
    """First marginal: row sums."""
    return DiscreteMeasure(pi.weights.sum(axis=1), probability=pi.probability, support_ids=pi.row_ids)


def marginal_y(pi: Coupling) -> DiscreteMeasure:
    """Second marginal: column sums."""
    return DiscreteMeasure(pi.weights.sum(axis=0), probability=pi.probability, support_ids=pi.col_ids)


def transpose(pi: Coupling) -> Coupling:
    return Coupling(pi.weights.T, probability=pi.probability, row_ids=pi.col_ids, col_ids=pi.row_ids)


def product(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    """Tensor product mu x nu."""
    return Coupling(
        np.outer(mu.weights, nu.weights),
        probability=mu.probability and nu.probability,
        row_ids=mu.support_ids,
        col_ids=nu.support_ids,
    )


def joint(mu: DiscreteMeasure, kernel: ConditionalKernel) -> Coupling:
    """The coupling mu(dx) K(x, dy)."""
    if mu.n != kernel.shape[0]:
        raise ShapeMismatch(f"measure of size {mu.n} vs kernel with {kernel.shape[0]} rows")
    return Coupling(
        mu.weights[:, None] * kernel.weights,
        probability=mu.probability,
        row_ids=mu.support_ids,
        col_ids=kernel.col_ids,
    )


def disintegrate(pi: Coupling) -> tuple[DiscreteMeasure, ConditionalKernel]:
    """Split pi into its first marginal and the conditional kernel.

    Raises:
        RowOfZeroMass: If some row of pi sums to zero.
    """
    mu = marginal_x(pi)
    empty = np.flatnonzero(mu.weights <= 0)
    if empty.size:
        raise RowOfZeroMass(f"rows {empty.tolist()} have zero mass; restrict the support first")
    kernel = ConditionalKernel(pi.weights / mu.weights[:, None], row_ids=pi.row_ids, col_ids=pi.col_ids)
    return mu, kernel


def _same_support(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise SupportMismatch(f"supports differ: {a.shape} vs {b.shape}")


def tv_norm(mu: MeasureLike, nu: MeasureLike) -> float:
    """Total variation, l1 convention: sum_i |mu_i - nu_i|."""
    a, b = weights_of(mu), weights_of(nu)
    _same_support(a, b)
    return float(np.abs(a - b).sum())


def variation_seminorm(f: ArrayLike) -> float:
    """Oscillation max(f) - min(f)."""
    values = np.asarray(f, dtype=np.float64)
    if values.size == 0:
        raise EmptyVector("variation seminorm of an empty vector")
    return float(values.max() - values.min())
