"""Latent EM, equivalently Richardson-Lucy deconvolution.

The observation model is a fixed conditional kernel K; only the latent
distribution mu is fitted, by minimising KL(nu | T_K mu) with the
multiplicative update

    mu_{n+1}(x) = mu_n(x) sum_y K(x, y) nu(y) / (T_K mu_n)(y).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
from scipy.special import logsumexp

from mirrorcert import io
from mirrorcert.divergences import FEMK, kl
from mirrorcert.errors import DomainViolation, NotConverged, ShapeMismatch, UnreachableObservation
from mirrorcert.measures import (
    PROBABILITY_TOL,
    ConditionalKernel,
    Coupling,
    DiscreteMeasure,
    marginal_y,
    weights_of,
)
from mirrorcert.sinkhorn import step_cols

logger = logging.getLogger(__name__)

TRACE_HEADER = ("n", "objective", "femk", "mass_residual")

# First-order residual a reference minimiser must reach before certifying
STAR_RESIDUAL_TOL = 1e-10

CERT_ABS_TOL = 1e-8
CERT_REL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LatentProblem:
    """Kernel K (n x m), observations nu over Y and initial latent mu0 over X.

    With ``strict`` the kernel must be entrywise positive; degenerate kernels
    such as the identity need ``strict=False``.

    Raises:
        ShapeMismatch: If sizes disagree.
        DomainViolation: If nu or mu0 is not a probability, mu0 is not strictly
            positive, or (strict) K has zero entries.
        UnreachableObservation: If T_K mu0 misses an observed point.
    """

    kernel: ConditionalKernel
    nu: DiscreteMeasure
    mu0: DiscreteMeasure
    strict: bool = True

    def __post_init__(self) -> None:
        n, m = self.kernel.shape
        if self.mu0.n != n or self.nu.n != m:
            raise ShapeMismatch(
                f"kernel of shape {(n, m)} for latent size {self.mu0.n} and observation size {self.nu.n}"
            )
        if abs(self.nu.mass - 1.0) > PROBABILITY_TOL:
            raise DomainViolation("observations must be a probability")
        if abs(self.mu0.mass - 1.0) > PROBABILITY_TOL or np.any(self.mu0.weights <= 0):
            raise DomainViolation("initial latent distribution must be a strictly positive probability")
        if self.strict and np.any(self.kernel.weights <= 0):
            raise DomainViolation("kernel must have strictly positive entries")
        _ratio(self.kernel.weights, self.mu0.weights, self.nu.weights)

    @property
    def shape(self) -> tuple[int, int]:
        return self.kernel.shape

    @classmethod
    def from_gibbs_cost(cls, cost: Any, epsilon: float, nu: DiscreteMeasure, mu0: DiscreteMeasure) -> LatentProblem:
        """K(x, y) proportional to exp(-c(x, y) / eps) nu(y), rows normalised in the log domain."""
        c = np.asarray(cost, dtype=np.float64)
        if not (math.isfinite(epsilon) and epsilon > 0):
            raise DomainViolation(f"epsilon must be positive, got {epsilon}")
        if c.ndim != 2 or c.shape[1] != nu.n:
            raise ShapeMismatch(f"cost of shape {c.shape} for observation size {nu.n}")
        with np.errstate(divide="ignore"):
            log_k = -c / epsilon + np.log(nu.weights)[None, :]
        kernel = ConditionalKernel(np.exp(log_k - logsumexp(log_k, axis=1, keepdims=True)))
        return cls(kernel=kernel, nu=nu, mu0=mu0)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "nu": self.nu.to_dict(), "mu0": self.mu0.to_dict()}

    @classmethod
    def from_dict(cls, data: dict, *, strict: bool = True) -> LatentProblem:
        return cls(
            kernel=ConditionalKernel.from_dict(data["kernel"]),
            nu=DiscreteMeasure.from_dict(data["nu"], probability=True),
            mu0=DiscreteMeasure.from_dict(data["mu0"], probability=True),
            strict=strict,
        )


def _ratio(kernel: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """nu / T_K mu where nu > 0, zero elsewhere."""
    predicted = mu @ kernel
    observed = nu > 0
    missing = np.flatnonzero(observed & (predicted <= 0))
    if missing.size:
        raise UnreachableObservation(f"observations {missing.tolist()} have zero predicted mass")
    ratio = np.zeros_like(nu)
    ratio[observed] = nu[observed] / predicted[observed]
    return ratio


def forward(K: Any, mu: Any) -> DiscreteMeasure:
    """T_K mu (y) = sum_x mu(x) K(x, y)."""
    k, x = weights_of(K), weights_of(mu)
    if x.ndim != 1 or k.ndim != 2 or k.shape[0] != x.size:
        raise ShapeMismatch(f"measure of shape {x.shape} vs kernel of shape {k.shape}")
    probability = isinstance(mu, DiscreteMeasure) and mu.probability
    return DiscreteMeasure(x @ k, probability=probability)


def rl_step(mu: Any, p: LatentProblem) -> DiscreteMeasure:
    """One Richardson-Lucy (latent EM) update.

    Raises:
        UnreachableObservation: If some observed point has zero predicted mass.
    """
    x = weights_of(mu)
    k = p.kernel.weights
    return DiscreteMeasure(x * (k @ _ratio(k, x, p.nu.weights)), probability=True)


def e_step(mu: Any, p: LatentProblem) -> Coupling:
    """pi(x, y) = mu(x) K(x, y) nu(y) / (T_K mu)(y); its second marginal is nu."""
    x = weights_of(mu)
    k = p.kernel.weights
    return Coupling(x[:, None] * k * _ratio(k, x, p.nu.weights)[None, :], probability=True)


def femk(pi: Any, K: Any) -> float:
    """KL(pi | p_X pi (x) K)."""
    return FEMK(K).value(pi)


def objective(mu: Any, p: LatentProblem) -> float:
    """KL(nu | T_K mu)."""
    return kl(p.nu, weights_of(mu) @ p.kernel.weights)


def first_order_residual(mu: Any, p: LatentProblem) -> float:
    """KKT residual of min KL(nu | T_K mu) over the simplex.

    With s = K (nu / T_K mu), optimality reads s <= 1 everywhere and s = 1
    on the support of mu.
    """
    x = weights_of(mu)
    k = p.kernel.weights
    s = k @ _ratio(k, x, p.nu.weights)
    return float(max(np.max(x * np.abs(s - 1.0)), np.max(np.maximum(s - 1.0, 0.0))))


@dataclass(frozen=True)
class EMRecord:
    n: int
    objective: float
    femk: float
    mass_residual: float


@dataclass(frozen=True, eq=False)
class EMTrace:
    problem: LatentProblem
    iterates: tuple[np.ndarray, ...]
    records: tuple[EMRecord, ...]

    @property
    def n_iters(self) -> int:
        return len(self.records) - 1

    @property
    def final(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.iterates[-1], probability=True)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def is_monotone(self, tol: float = 1e-10) -> bool:
        return bool(np.all(np.diff(self.objectives) <= tol))

    def rows(self) -> list[tuple]:
        return [(r.n, r.objective, r.femk, r.mass_residual) for r in self.records]

    def to_csv(self, path: Path) -> None:
        io.write_csv(path, TRACE_HEADER, self.rows())

    def to_dict(self) -> dict:
        return {
            "records": [dict(zip(TRACE_HEADER, row)) for row in self.rows()],
            "final": self.iterates[-1].tolist(),
        }


def _em_record(p: LatentProblem, n: int, mu: np.ndarray) -> EMRecord:
    return EMRecord(
        n=n,
        objective=objective(mu, p),
        femk=femk(e_step(mu, p), p.kernel),
        mass_residual=abs(float(mu.sum()) - 1.0),
    )


def run_latent_em(p: LatentProblem, n_iters: int = 100, mu0: Optional[Any] = None) -> EMTrace:
    """Iterate rl_step n_iters times from mu0 (default: the problem's mu0)."""
    if n_iters < 0:
        raise ValueError(f"n_iters must be >= 0, got {n_iters}")
    mu = np.array(weights_of(p.mu0 if mu0 is None else mu0), dtype=np.float64)
    iterates = [mu]
    records = [_em_record(p, 0, mu)]
    for n in range(1, n_iters + 1):
        mu = rl_step(mu, p).weights
        iterates.append(mu)
        records.append(_em_record(p, n, mu))
        logger.debug("latent em step %d: KL(nu|T_K mu) = %.6e", n, records[-1].objective)
    logger.info("latent em %dx%d: %d steps, objective %.6e", *p.shape, n_iters, records[-1].objective)
    return EMTrace(problem=p, iterates=tuple(iterates), records=tuple(records))


@dataclass(frozen=True)
class EMRateRecord:
    n: int
    objective: float
    bound: float
    ok: bool


@dataclass
class EMRateCertificate:
    """KL(nu|T_K mu_n) <= KL(nu|T_K mu_*) + numerator / n."""

    optimum: float
    numerator: float
    star_residual: float
    records: list[EMRateRecord]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.records)

    def to_dict(self) -> dict:
        return {
            "optimum": self.optimum,
            "numerator": self.numerator,
            "star_residual": self.star_residual,
            "ok": self.ok,
            "records": [vars(r) for r in self.records],
        }


def em_rate_certificate(trace: EMTrace, mu_star: Any, p: LatentProblem) -> EMRateCertificate:
    """Certify the 1/n rate of latent EM against a reference minimiser.

    The numerator KL(mu_*|mu_0) + F(mu_*) - F(mu_0) equals the KL distance
    between the optimal and initial E-step couplings.

    Raises:
        NotConverged: If mu_star has first-order residual above 1e-10.
    """
    star = weights_of(mu_star)
    residual = first_order_residual(star, p)
    if residual > STAR_RESIDUAL_TOL:
        raise NotConverged(f"reference minimiser has first-order residual {residual:.3e}")
    optimum = objective(star, p)
    start = trace.iterates[0]
    numerator = kl(star, start) + optimum - objective(start, p)

    records = []
    for record in trace.records[1:]:
        bound = optimum + numerator / record.n
        slack = CERT_ABS_TOL + CERT_REL_TOL * abs(bound)
        records.append(EMRateRecord(record.n, record.objective, bound, bool(record.objective <= bound + slack)))
    cert = EMRateCertificate(optimum=optimum, numerator=numerator, star_residual=residual, records=records)
    logger.info("latent em rate certificate: ok=%s (numerator %.3e, optimum %.6e)", cert.ok, numerator, optimum)
    return cert


@dataclass
class EMIdentity:
    """E-step identity KL(nu | p_Y q) = KL(pi_E | q) and, optionally, KL(pi | q) >= it."""

    kl_marginal: float
    kl_e_step: float
    identity_gap: float
    kl_other: Optional[float]
    ok: bool

    def to_dict(self) -> dict:
        return vars(self).copy()


def em_identity_check(p_q: Coupling, nu: DiscreteMeasure, pi: Optional[Coupling] = None) -> EMIdentity:
    """Check the E-step identity for a model coupling q and observations nu.

    The minimiser of KL(. | q) over couplings with second marginal nu is the
    column rescaling of q, and its value is KL(nu | p_Y q). Any other pi with
    second marginal nu does no better.
    """
    kl_marginal = kl(nu, marginal_y(p_q))
    kl_e_step = kl(step_cols(p_q, nu), p_q)
    gap = abs(kl_marginal - kl_e_step)
    ok = gap <= 1e-10 * max(1.0, abs(kl_marginal))
    kl_other = None
    if pi is not None:
        if np.abs(weights_of(pi).sum(axis=0) - nu.weights).sum() > 1e-10:
            raise DomainViolation("comparison coupling must have second marginal nu")
        kl_other = kl(pi, p_q)
        ok = ok and kl_marginal <= kl_other + 1e-10 * max(1.0, abs(kl_other))
    return EMIdentity(kl_marginal, kl_e_step, gap, kl_other, bool(ok))
