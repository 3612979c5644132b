"""Independent reference computations.

These are slower, simpler or higher-precision routes to the quantities the
main modules compute in closed form: finite-difference derivatives, secant
convexity probes, a Newton solver for the mirror step subproblem, converged
reference optima, and extended-precision KL and soft c-transforms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Union

import mpmath as mp
import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, rel_entr

from mirrorcert.divergences import BregmanPotential, Functional, NegEntropy, SquaredNorm
from mirrorcert.em import LatentProblem, first_order_residual, objective, rl_step
from mirrorcert.errors import (
    InvalidConstants,
    NotConverged,
    OracleDisagreement,
    ShapeMismatch,
    SizeTooLarge,
)
from mirrorcert.measures import Coupling, DiscreteMeasure, weights_of
from mirrorcert.mirror_descent import Constraint, FixedMarginalY, Simplex, Unconstrained, project_simplex
from mirrorcert.sinkhorn import EOTProblem, Potentials, col_scaling, primal_objective, row_scaling

logger = logging.getLogger(__name__)

# Largest subproblem (number of weights) the Newton oracle accepts
ORACLE_MAX_SIZE = 64


# ---------------------------------------------------------------------------
# Finite differences and convexity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FDSchedule:
    """Step sizes of a one-sided difference quotient, strictly decreasing."""

    h_values: tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5)
    norm: str = "abs"

    def __post_init__(self) -> None:
        h = self.h_values
        if not h or any(v <= 0 for v in h) or any(a <= b for a, b in zip(h, h[1:])):
            raise InvalidConstants(f"h_values must be positive and strictly decreasing, got {h}")
        if self.norm not in ("abs", "rel"):
            raise InvalidConstants(f"norm must be 'abs' or 'rel', got {self.norm!r}")


@dataclass
class FDReport:
    h_values: list[float]
    quotients: list[float]
    analytic: float
    extrapolated: float
    gaps: list[float]
    gaps_shrink: bool
    quotients_monotone: bool

    @property
    def final_gap(self) -> float:
        return self.gaps[-1]


def fd_directional_derivative(F: Functional, mu: Any, xi: Any, sched: Optional[FDSchedule] = None) -> FDReport:
    """Compare one-sided difference quotients of F at mu along xi with <grad F(mu), xi>.

    The extrapolated limit removes the O(h) term from the two smallest steps.
    For convex F the quotients shrink with h, which is reported as
    ``quotients_monotone``.

    Raises:
        DomainViolation: If mu + h xi leaves the domain of F for a scheduled h.
    """
    sched = sched or FDSchedule()
    x = np.asarray(weights_of(mu), dtype=np.float64)
    direction = np.asarray(weights_of(xi), dtype=np.float64)
    if direction.shape != x.shape:
        raise ShapeMismatch(f"direction of shape {direction.shape} for point of shape {x.shape}")

    base = F.value(x)
    quotients = []
    for h in sched.h_values:
        shifted = x + h * direction
        F.check_domain(shifted)
        quotients.append((F.value(shifted) - base) / h)

    analytic = float(np.sum(F.first_variation(x) * direction))
    if len(quotients) >= 2:
        h1, h2 = sched.h_values[-2], sched.h_values[-1]
        r = h1 / h2
        extrapolated = (r * quotients[-1] - quotients[-2]) / (r - 1.0)
    else:
        extrapolated = quotients[-1]

    scale = max(1.0, abs(analytic)) if sched.norm == "rel" else 1.0
    gaps = [abs(q - analytic) / scale for q in quotients]
    # roundoff floor of a quotient is about eps * |F| / h
    floors = [4e-16 * max(1.0, abs(base)) / h for h in sched.h_values]
    gaps_shrink = all(b <= a + fa + fb for a, b, fa, fb in zip(gaps, gaps[1:], floors, floors[1:]))
    monotone = all(b <= a + fa + fb for a, b, fa, fb in zip(quotients, quotients[1:], floors, floors[1:]))
    return FDReport(
        h_values=list(sched.h_values),
        quotients=quotients,
        analytic=analytic,
        extrapolated=float(extrapolated),
        gaps=gaps,
        gaps_shrink=gaps_shrink,
        quotients_monotone=monotone,
    )


def convexity_probe(F: Functional, mu: Any, nu: Any, grid_size: int = 101) -> float:
    """Smallest secant gap (1-t) F(mu) + t F(nu) - F(mu + t (nu - mu)) on a grid."""
    a, b = np.asarray(weights_of(mu), dtype=np.float64), np.asarray(weights_of(nu), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"segment endpoints of shapes {a.shape} and {b.shape}")
    fa, fb = F.value(a), F.value(b)
    worst = math.inf
    for t in np.linspace(0.0, 1.0, grid_size):
        point = a + t * (b - a)
        F.check_domain(point)
        worst = min(worst, (1.0 - t) * fa + t * fb - F.value(point))
    return float(worst)


# ---------------------------------------------------------------------------
# Mirror step subproblem
# ---------------------------------------------------------------------------


def _constraint_matrix(constraint: Constraint, shape: tuple[int, ...]) -> Optional[np.ndarray]:
    size = int(np.prod(shape))
    if isinstance(constraint, Unconstrained):
        return None
    if isinstance(constraint, Simplex):
        return np.ones((1, size))
    if isinstance(constraint, FixedMarginalY):
        if len(shape) != 2 or shape[1] != constraint.nu.size:
            raise ShapeMismatch(f"fixed-marginal constraint on a point of shape {shape}")
        # row j selects column j of the row-major flattened coupling
        return np.tile(np.eye(shape[1]), shape[0])
    raise InvalidConstants(f"unknown constraint {constraint!r}")


def _feasible_start(x: np.ndarray, constraint: Constraint) -> np.ndarray:
    if isinstance(constraint, Simplex):
        return x / x.sum()
    if isinstance(constraint, FixedMarginalY):
        return x * (constraint.nu / x.sum(axis=0))[None, :]
    return x.copy()


def _kkt_direction(hess: np.ndarray, grad: np.ndarray, A: Optional[np.ndarray]) -> np.ndarray:
    if A is None:
        system, rhs = hess, -grad
    else:
        k = A.shape[0]
        system = np.block([[hess, A.T], [A, np.zeros((k, k))]])
        rhs = np.concatenate([-grad, np.zeros(k)])
    solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
    return solution[: grad.size]


def _stationarity(grad: np.ndarray, A: Optional[np.ndarray]) -> float:
    if A is None:
        return float(np.max(np.abs(grad)))
    multipliers = np.linalg.lstsq(A.T, grad, rcond=None)[0]
    return float(np.max(np.abs(grad - A.T @ multipliers)))


def _squared_norm_simplex(y: np.ndarray) -> np.ndarray:
    # threshold tau solves sum max(y - tau, 0) = 1
    excess = lambda tau: float(np.maximum(y - tau, 0.0).sum() - 1.0)  # noqa: E731
    tau = brentq(excess, float(y.min()) - 1.0, float(y.max()), xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    return np.maximum(y - tau, 0.0)


def subproblem_argmin_oracle(
    G: Functional,
    phi: BregmanPotential,
    mu: Any,
    constraint: Constraint,
    *,
    L: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> np.ndarray:
    """Solve argmin_{nu in C} <g, nu> + L D_phi(nu|mu) with g the first variation of G at mu.

    A feasible-direction Newton method: equality-constrained KKT steps with a
    fraction-to-boundary rule keeping entropy iterates positive and Armijo
    backtracking. The squared norm on the simplex is solved through its
    threshold equation instead.

    Raises:
        SizeTooLarge: If mu has more than 64 weights.
        NotConverged: If the first-order residual stays above tol.
    """
    x = np.asarray(weights_of(mu), dtype=np.float64)
    if x.size > ORACLE_MAX_SIZE:
        raise SizeTooLarge(f"oracle subproblems are capped at {ORACLE_MAX_SIZE} weights, got {x.size}")
    g = np.ravel(G.first_variation(x))
    shape = x.shape

    if isinstance(phi, SquaredNorm) and isinstance(constraint, Simplex):
        return _squared_norm_simplex(x.ravel() - g / (2.0 * L)).reshape(shape)

    A = _constraint_matrix(constraint, shape)
    positive = isinstance(phi, NegEntropy)
    grad_phi_mu = np.ravel(phi.first_variation(x))

    def value(z: np.ndarray) -> float:
        return float(g @ z + L * phi.divergence(z.reshape(shape), x))

    def gradient(z: np.ndarray) -> np.ndarray:
        return g + L * (np.ravel(phi.first_variation(z.reshape(shape))) - grad_phi_mu)

    z = _feasible_start(x, constraint).ravel()
    scale = max(1.0, float(np.max(np.abs(g))))
    for it in range(max_iter):
        grad = gradient(z)
        if _stationarity(grad, A) <= tol * scale:
            logger.debug("subproblem oracle converged in %d Newton steps", it)
            return z.reshape(shape)
        d = _kkt_direction(L * phi.hessian(z.reshape(shape)), grad, A)
        t = 1.0
        if positive and np.any(d < 0):
            blocking = d < 0
            t = min(1.0, 0.99 * float(np.min(-z[blocking] / d[blocking])))
        slope = float(grad @ d)
        current = value(z)
        while t > 1e-20:
            trial = z + t * d
            if value(trial) <= current + 1e-4 * t * slope + 1e-15 * abs(current):
                break
            t *= 0.5
        z = z + t * d
    raise NotConverged(f"subproblem oracle: residual {_stationarity(gradient(z), A):.3e} after {max_iter} steps")


# ---------------------------------------------------------------------------
# Reference optima
# ---------------------------------------------------------------------------


@dataclass
class ReferenceSolution:
    """A converged optimum with an independent cross-check."""

    solution: Union[Coupling, DiscreteMeasure]
    objective: float
    residual: float
    method: str
    cross_check_objective: Optional[float] = None
    agreement: Optional[float] = None
    potentials: Optional[Potentials] = None

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "residual": self.residual,
            "method": self.method,
            "cross_check_objective": self.cross_check_objective,
            "agreement": self.agreement,
            "solution": self.solution.to_dict(),
        }


def _marginal_residual(p: EOTProblem, log_pi: np.ndarray) -> float:
    rows = np.exp(logsumexp(log_pi, axis=1))
    cols = np.exp(logsumexp(log_pi, axis=0))
    return float(np.abs(rows - p.mu.weights).sum() + np.abs(cols - p.nu.weights).sum())


def _dual_newton(p: EOTProblem, tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Maximise <u, mu> + <v, nu> - sum exp(log_reference + u (+) v) with the gauge v[-1] = 0."""
    n, m = p.shape
    u = np.zeros(n)
    v = col_scaling(p, u)
    u, v = u + v[-1], v - v[-1]

    def dual(u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ p.mu.weights + v @ p.nu.weights - np.exp(logsumexp(p.log_reference + u[:, None] + v[None, :])))

    for it in range(max_iter):
        log_pi = p.log_reference + u[:, None] + v[None, :]
        residual = _marginal_residual(p, log_pi)
        if residual <= tol:
            logger.debug("dual newton converged in %d steps", it)
            return u, v, residual
        pi = np.exp(log_pi)
        rows, cols = pi.sum(axis=1), pi.sum(axis=0)
        grad = np.concatenate([p.mu.weights - rows, (p.nu.weights - cols)[:-1]])
        hess = np.block([
            [np.diag(rows), pi[:, :-1]],
            [pi[:, :-1].T, np.diag(cols[:-1])],
        ])
        step = np.linalg.solve(hess, grad)
        du, dv = step[:n], np.append(step[n:], 0.0)
        slope = float(grad @ step)
        current = dual(u, v)
        t = 1.0
        while t > 1e-20 and dual(u + t * du, v + t * dv) < current + 1e-4 * t * slope - 1e-15 * abs(current):
            t *= 0.5
        u, v = u + t * du, v + t * dv
    raise NotConverged(f"dual newton: marginal residual {_marginal_residual(p, p.log_reference + u[:, None] + v[None, :]):.3e}")


def _eot_reference(p: EOTProblem, tol: float, max_iter: int, sinkhorn_iters: int) -> ReferenceSolution:
    u, v, residual = _dual_newton(p, tol, max_iter)
    pi = Coupling(np.exp(p.log_reference + u[:, None] + v[None, :]))
    value = primal_objective(p, pi)
    a = float(u @ p.mu.weights)
    potentials = Potentials(f=p.epsilon * (u - a), g=p.epsilon * (v - p.log_mass + a))

    # Sinkhorn cross-check, used only when it reaches the tolerance in budget
    su = np.zeros(p.shape[0])
    sv = col_scaling(p, su)
    cross = None
    for _ in range(sinkhorn_iters):
        su = row_scaling(p, sv)
        sv = col_scaling(p, su)
        if _marginal_residual(p, p.log_reference + su[:, None] + sv[None, :]) <= tol:
            cross = primal_objective(p, Coupling(np.exp(p.log_reference + su[:, None] + sv[None, :])))
            break

    agreement = None
    if cross is not None:
        agreement = abs(cross - value)
        if agreement > max(10.0 * tol, 1e-10) * max(1.0, abs(value)):
            raise OracleDisagreement(f"dual newton {value!r} vs sinkhorn {cross!r}")
    return ReferenceSolution(
        solution=Coupling(pi.weights, probability=abs(pi.mass - 1.0) <= 1e-12),
        objective=value,
        residual=residual,
        method="dual-newton",
        cross_check_objective=cross,
        agreement=agreement,
        potentials=potentials,
    )


def _latent_newton(p: LatentProblem, mu: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Active-set Newton on faces of the simplex for min KL(nu | T_K mu)."""
    k, nu = p.kernel.weights, p.nu.weights
    observed = nu > 0
    mu = mu.copy()
    mu[mu < 1e-12 * mu.max()] = 0.0
    mu /= mu.sum()

    def value(z: np.ndarray) -> float:
        return objective(z, p)

    for it in range(max_iter):
        if first_order_residual(mu, p) <= tol:
            logger.debug("latent newton converged in %d steps", it)
            return mu
        predicted = mu @ k
        ratio = np.zeros_like(nu)
        ratio[observed] = nu[observed] / predicted[observed]
        s = k @ ratio
        free = mu > 0
        outside = ~free & (s > 1.0 + tol)
        if outside.any():
            # release the coordinate with the most negative reduced gradient
            candidates = np.flatnonzero(outside)
            free[candidates[np.argmax(s[candidates])]] = True

        weights = np.zeros_like(nu)
        weights[observed] = nu[observed] / predicted[observed] ** 2
        for _ in range(mu.size):
            idx = np.flatnonzero(free)
            hess = (k[idx] * weights[None, :]) @ k[idx].T
            d = np.zeros_like(mu)
            d[idx] = _kkt_direction(hess, -s[idx], np.ones((1, idx.size)))
            # a zero coordinate the step would push negative stays on the boundary
            stuck = free & (mu == 0) & (d < 0)
            if not stuck.any():
                break
            free &= ~stuck

        t = 1.0
        blocking = (d < 0) & (mu > 0)
        if blocking.any():
            t = min(1.0, float(np.min(-mu[blocking] / d[blocking])))
        slope = float(-s @ d)
        current = value(mu)
        while t > 1e-20:
            trial = np.maximum(mu + t * d, 0.0)
            if np.all((trial @ k)[observed] > 0) and value(trial) <= current + 1e-4 * t * slope + 1e-15 * abs(current):
                break
            t *= 0.5
        mu = np.maximum(mu + t * d, 0.0)
        mu[mu <= 1e-15 * mu.max()] = 0.0
        mu /= mu.sum()
    raise NotConverged(f"latent newton: first-order residual {first_order_residual(mu, p):.3e}")


def _latent_spg(p: LatentProblem, mu: np.ndarray, max_iter: int, memory: int = 10) -> np.ndarray:
    """Spectral projected gradient on the simplex with a nonmonotone Armijo rule."""
    k, nu = p.kernel.weights, p.nu.weights
    observed = nu > 0

    def gradient(z: np.ndarray) -> np.ndarray:
        ratio = np.zeros_like(nu)
        ratio[observed] = nu[observed] / (z @ k)[observed]
        return -(k @ ratio)

    x = mu.copy()
    grad = gradient(x)
    history = [objective(x, p)]
    alpha = 1.0
    for _ in range(max_iter):
        if float(np.max(np.abs(project_simplex(x - grad) - x))) <= 1e-13:
            break
        d = project_simplex(x - alpha * grad) - x
        reference = max(history[-memory:])
        slope = float(grad @ d)
        t = 1.0
        while t > 1e-20:
            trial = x + t * d
            if np.all((trial @ k)[observed] > 0) and objective(trial, p) <= reference + 1e-4 * t * slope:
                break
            t *= 0.5
        step = t * d
        x = x + step
        new_grad = gradient(x)
        y = new_grad - grad
        sy = float(step @ y)
        alpha = min(1e10, max(1e-10, float(step @ step) / sy)) if sy > 0 else 1e10
        grad = new_grad
        history.append(objective(x, p))
    return x


def _summed_objective(mu: np.ndarray, p: LatentProblem) -> float:
    """KL(nu | T_K mu) accumulated with kl_compensated."""
    return kl_compensated(p.nu, mu @ p.kernel.weights)


def _latent_reference(p: LatentProblem, tol: float, max_iter: int, warm_start: int, agree_tol: float) -> ReferenceSolution:
    mu = p.mu0.weights.copy()
    for _ in range(warm_start):
        mu = rl_step(mu, p).weights
    star = _latent_newton(p, mu, tol, max_iter)
    value = _summed_objective(star, p)

    cross = _summed_objective(_latent_spg(p, mu, max_iter=25 * max_iter), p)
    agreement = abs(cross - value)
    if agreement > agree_tol:
        raise OracleDisagreement(f"active-set newton {value!r} vs projected gradient {cross!r}")
    return ReferenceSolution(
        solution=DiscreteMeasure(star, probability=True),
        objective=value,
        residual=first_order_residual(star, p),
        method="rl+active-set-newton",
        cross_check_objective=cross,
        agreement=agreement,
    )


def reference_solution(
    problem: Union[EOTProblem, LatentProblem],
    tol: float = 1e-12,
    *,
    max_iter: int = 200,
    sinkhorn_iters: int = 5000,
    warm_start: int = 500,
    agree_tol: float = 1e-8,
) -> ReferenceSolution:
    """Converged optimum of an entropic transport or latent problem.

    Transport problems use damped Newton on the dual scalings, cross-checked
    against Sinkhorn when Sinkhorn reaches ``tol`` within ``sinkhorn_iters``.
    Latent problems run ``warm_start`` Richardson-Lucy steps, then active-set
    Newton to a first-order residual of ``tol``, cross-checked by spectral
    projected gradient.

    Raises:
        NotConverged: If the primary solver misses the tolerance.
        OracleDisagreement: If the cross-check disagrees in objective.
    """
    if isinstance(problem, EOTProblem):
        return _eot_reference(problem, tol, max_iter, sinkhorn_iters)
    if isinstance(problem, LatentProblem):
        return _latent_reference(problem, tol, max_iter, warm_start, agree_tol)
    raise TypeError(f"no reference solver for {type(problem).__name__}")


# ---------------------------------------------------------------------------
# Extended precision
# ---------------------------------------------------------------------------


def kl_compensated(mu: Any, nu: Any) -> float:
    """KL(mu|nu) with math.fsum accumulation of the terms."""
    a, b = weights_of(mu), weights_of(nu)
    if a.shape != b.shape:
        raise ShapeMismatch(f"supports differ: {a.shape} vs {b.shape}")
    terms = rel_entr(a, b).ravel()
    if np.any(np.isinf(terms)):
        return math.inf
    return math.fsum(terms.tolist())


def soft_c_transform_precise(
    f: Sequence[float], mu: Any, cost: Any, epsilon: float, dps: int = 50
) -> np.ndarray:
    """soft_c_transform_x evaluated in mpmath at dps digits, rounded to float64."""
    f = [float(v) for v in f]
    weights = [float(w) for w in weights_of(mu)]
    c = np.asarray(cost, dtype=np.float64)
    with mp.workdps(dps):
        eps = mp.mpf(epsilon)
        out = []
        for j in range(c.shape[1]):
            total = mp.fsum(
                mp.mpf(w) * mp.exp((mp.mpf(fi) - mp.mpf(float(c[i, j]))) / eps)
                for i, (fi, w) in enumerate(zip(f, weights))
            )
            out.append(float(-eps * mp.log(total)))
    return np.array(out)
