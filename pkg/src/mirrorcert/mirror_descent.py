"""Mirror descent over finitely supported measures.

One step solves ``argmin_{nu in C} <grad F(mu_n), nu - mu_n> + L D_phi(nu|mu_n)``
in closed form. Entropy potentials give the multiplicative update, computed
in the log domain; the squared norm gives a gradient step, optionally followed
by the Euclidean projection onto the simplex.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from scipy.special import logsumexp

from mirrorcert import io
from mirrorcert.divergences import BregmanPotential, Functional, NegEntropy, SquaredNorm
from mirrorcert.errors import DomainViolation, InvalidConstants, ShapeMismatch, UnsupportedCombination
from mirrorcert.measures import PROBABILITY_TOL, Coupling, DiscreteMeasure, variation_seminorm, weights_of

logger = logging.getLogger(__name__)

TRACE_HEADER = ("n", "objective", "bregman_to_ref", "rate_bound", "constraint_residual")


# ---------------------------------------------------------------------------
# Constraint sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Unconstrained:
    """The whole domain of the potential."""

    def residual(self, x: np.ndarray) -> float:
        return 0.0


@dataclass(frozen=True)
class Simplex:
    """Weights summing to one."""

    def residual(self, x: np.ndarray) -> float:
        return abs(float(x.sum()) - 1.0)


@dataclass(frozen=True, eq=False)
class FixedMarginalY:
    """Couplings whose second marginal equals nu."""

    nu: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "nu", np.asarray(weights_of(self.nu), dtype=np.float64))

    def residual(self, x: np.ndarray) -> float:
        if x.ndim != 2 or x.shape[1] != self.nu.size:
            raise ShapeMismatch(f"coupling of shape {x.shape} vs second marginal of size {self.nu.size}")
        return float(np.abs(x.sum(axis=0) - self.nu).sum())


Constraint = Union[Unconstrained, Simplex, FixedMarginalY]


@dataclass(frozen=True)
class MDConfig:
    """Step and stopping parameters of a mirror descent run.

    Raises:
        InvalidConstants: Unless L > 0, 0 <= l <= L, max_iters >= 0 and stop_tol >= 0.
    """

    L: float
    l: float = 0.0
    max_iters: int = 100
    constraint: Constraint = field(default_factory=Unconstrained)
    stop_tol: float = 0.0

    def __post_init__(self) -> None:
        _check_constants(self.l, self.L)
        if self.max_iters < 0:
            raise InvalidConstants(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.stop_tol >= 0:
            raise InvalidConstants(f"stop_tol must be >= 0, got {self.stop_tol}")


def _check_constants(l: float, L: float) -> None:
    if not (math.isfinite(L) and L > 0):
        raise InvalidConstants(f"L must be positive and finite, got {L}")
    if not (0 <= l <= L):
        raise InvalidConstants(f"need 0 <= l <= L, got l={l}, L={L}")


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def project_simplex(x: Any, mass: float = 1.0) -> np.ndarray:
    """Euclidean projection of a vector onto {p >= 0, sum p = mass}."""
    v = np.asarray(x, dtype=np.float64)
    shape = v.shape
    v = v.ravel() / mass
    u = np.sort(v)[::-1]
    cumsum_u = np.cumsum(u)
    ind = np.arange(1, v.size + 1)
    idx = int(np.count_nonzero(1.0 / ind + (u - cumsum_u / ind) > 0))
    projected = np.maximum(1.0 / idx + (v - cumsum_u[idx - 1] / idx), 0.0)
    return (mass * projected).reshape(shape)


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


def _entropy_step(x: np.ndarray, grad: np.ndarray, L: float, constraint: Constraint) -> np.ndarray:
    z = _log(x) - grad / L
    if isinstance(constraint, Unconstrained):
        return np.exp(z)
    if isinstance(constraint, Simplex):
        return np.exp(z - logsumexp(z))
    if isinstance(constraint, FixedMarginalY):
        constraint.residual(x)
        with np.errstate(divide="ignore"):
            return np.exp(z - logsumexp(z, axis=0, keepdims=True) + _log(constraint.nu)[None, :])
    raise UnsupportedCombination(f"unknown constraint {constraint!r}")


def _squared_norm_step(x: np.ndarray, grad: np.ndarray, L: float, constraint: Constraint) -> np.ndarray:
    y = x - grad / (2.0 * L)
    if isinstance(constraint, Unconstrained):
        return y
    if isinstance(constraint, Simplex):
        return project_simplex(y)
    raise UnsupportedCombination("squared norm has no closed-form step onto a fixed-marginal set")


def _like(template: Any, weights: np.ndarray, probability: bool) -> Any:
    if isinstance(template, DiscreteMeasure):
        return DiscreteMeasure(weights, probability=probability, support_ids=template.support_ids)
    if isinstance(template, Coupling):
        return Coupling(weights, probability=probability, row_ids=template.row_ids, col_ids=template.col_ids)
    return weights


def md_step(F: Functional, phi: BregmanPotential, mu: Any, cfg: MDConfig) -> Any:
    """One mirror descent step with step size 1/L.

    Args:
        F: Objective providing the first variation at mu.
        phi: NegEntropy (any constraint) or SquaredNorm (Unconstrained, Simplex).
        mu: Current iterate; a measure, a coupling or a bare array.
        cfg: Step constants and constraint set.

    Returns:
        The next iterate, of the same kind as mu.

    Raises:
        UnsupportedCombination: If (phi, constraint) has no closed form.
        DomainViolation: If mu is outside the domain of F or phi.
    """
    x = weights_of(mu)
    constraint = cfg.constraint
    if isinstance(phi, NegEntropy):
        step = _entropy_step
    elif isinstance(phi, SquaredNorm):
        step = _squared_norm_step
    else:
        raise UnsupportedCombination(f"no closed-form step for potential {phi.name}")
    if isinstance(constraint, FixedMarginalY) and x.ndim != 2:
        raise ShapeMismatch("the fixed-marginal constraint acts on couplings")

    grad = F.first_variation(x)
    nxt = step(x, grad, cfg.L, constraint)
    if not np.all(np.isfinite(nxt)):
        raise DomainViolation("mirror step left the domain (non-finite weights)")

    if isinstance(constraint, Simplex):
        probability = True
    elif isinstance(constraint, FixedMarginalY):
        probability = abs(float(constraint.nu.sum()) - 1.0) <= PROBABILITY_TOL
    else:
        probability = False
    return _like(mu, nxt, probability)


# ---------------------------------------------------------------------------
# Runs and certificates
# ---------------------------------------------------------------------------


def rate_bound(l: float, L: float, D0: float, n: int) -> float:
    """Upper bound on F(mu_n) - F(nu) after n steps.

    ``l D0 / ((1 + l/(L - l))^n - 1)`` for 0 < l < L, its limit ``L D0 / n``
    at l = 0 and 0 at l = L. The result never exceeds ``L D0 / n``.

    Raises:
        InvalidConstants: If L <= 0, l outside [0, L], D0 < 0 or n < 1.
    """
    _check_constants(l, L)
    if n < 1:
        raise InvalidConstants(f"rate bound needs n >= 1, got {n}")
    if not D0 >= 0:
        raise InvalidConstants(f"D0 must be nonnegative, got {D0}")
    if D0 == 0:
        return 0.0
    sublinear = L * D0 / n
    if l == 0:
        return sublinear
    if l == L:
        return 0.0
    exponent = n * math.log1p(l / (L - l))
    denom = math.expm1(exponent) if exponent < 700 else math.inf
    return min(l * D0 / denom, sublinear)


@dataclass(frozen=True)
class MDRecord:
    n: int
    objective: float
    bregman_to_ref: float
    rate_bound: float
    constraint_residual: float


@dataclass(frozen=True)
class Trace:
    """Records and iterates of a mirror descent run."""

    records: tuple[MDRecord, ...]
    iterates: tuple[np.ndarray, ...]
    status: str

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def is_monotone(self, tol: float = 1e-10) -> bool:
        values = self.objectives
        return bool(np.all(np.diff(values) <= tol))

    def rows(self) -> list[tuple]:
        return [
            (r.n, r.objective, r.bregman_to_ref, r.rate_bound, r.constraint_residual)
            for r in self.records
        ]

    def to_csv(self, path: Path) -> None:
        io.write_csv(path, TRACE_HEADER, self.rows())

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "records": [dict(zip(TRACE_HEADER, row)) for row in self.rows()],
            "final": weights_of(self.final).tolist(),
        }


def run_md(
    F: Functional,
    phi: BregmanPotential,
    mu0: Any,
    nu_ref: Optional[Any] = None,
    cfg: Optional[MDConfig] = None,
) -> Trace:
    """Run mirror descent from mu0 for at most cfg.max_iters steps.

    Stops early only when stop_tol > 0 and the objective decrease of a step
    falls below it. With a reference point the trace carries
    D_phi(nu_ref|mu_n) and the rate bound with D0 = D_phi(nu_ref|mu0).
    """
    if cfg is None:
        raise InvalidConstants("run_md needs an MDConfig")
    x = weights_of(mu0)
    # Bregman divergences are nonnegative; clamp roundoff below zero
    d0 = max(phi.divergence(nu_ref, x), 0.0) if nu_ref is not None else math.nan

    def record(n: int, point: np.ndarray, value: float) -> MDRecord:
        if nu_ref is None:
            to_ref, bound = math.nan, math.nan
        else:
            to_ref = phi.divergence(nu_ref, point)
            bound = math.inf if n == 0 else rate_bound(cfg.l, cfg.L, d0, n)
        return MDRecord(n, value, to_ref, bound, cfg.constraint.residual(point))

    current = mu0
    value = F.value(x)
    records = [record(0, x, value)]
    iterates = [x]
    status = "max_iters"
    for n in range(1, cfg.max_iters + 1):
        current = md_step(F, phi, current, cfg)
        point = weights_of(current)
        new_value = F.value(point)
        records.append(record(n, point, new_value))
        iterates.append(point)
        logger.debug("md step %d: objective %.6e", n, new_value)
        decrease = value - new_value
        value = new_value
        if cfg.stop_tol > 0 and decrease < cfg.stop_tol:
            status = "converged"
            break

    logger.info("mirror descent %s/%s: %d steps, objective %.6e (%s)", F.name, phi.name, len(records) - 1, value, status)
    return Trace(records=tuple(records), iterates=tuple(iterates), status=status)


def three_point_residual(G: Functional, phi: BregmanPotential, mu: Any, nu: Any, nu_bar: Any) -> float:
    """G(nu) + D(nu|mu) - G(nu_bar) - D(nu_bar|mu) - D(nu|nu_bar).

    nu_bar must minimise G + D_phi(.|mu) over the constraint set. For the
    mirror step with constant L pass G = <grad F(mu), .> / L.
    """
    return float(
        G.value(nu)
        + phi.divergence(nu, mu)
        - G.value(nu_bar)
        - phi.divergence(nu_bar, mu)
        - phi.divergence(nu, nu_bar)
    )


def dual_iteration_residual(F: Functional, phi: BregmanPotential, mu_n: Any, mu_next: Any, L: float) -> float:
    """Oscillation of grad phi(mu_{n+1}) - grad phi(mu_n) + grad F(mu_n) / L.

    Zero for the unconstrained entropy step and, up to the normalising
    constant, for the simplex step.
    """
    residual = phi.first_variation(mu_next) - phi.first_variation(mu_n) + F.first_variation(mu_n) / L
    return variation_seminorm(np.ravel(residual))
