"""Bregman potentials, objectives and relative smoothness certificates.

Every functional acts on the weight array of a measure (1-D) or of a coupling
(2-D) and exposes its value and first variation. Bregman divergences follow
the generic definition ``phi(nu) - phi(mu) - <grad phi(mu), nu - mu>``;
potentials with a numerically nicer closed form override ``divergence``.

The squared-norm potential uses ``||nu - mu||^2`` without the classical 1/2,
so a function that is L-smooth in the usual ``L/2 ||.||^2`` sense is
``L/2``-smooth relative to ``SquaredNorm``.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import rel_entr

from mirrorcert.errors import DomainViolation, NotPSD, ShapeMismatch, SupportMismatch, UnsupportedCombination
from mirrorcert.measures import weights_of

logger = logging.getLogger(__name__)

# Slack of every relative-bound certificate: absolute + relative * magnitude
CERT_ABS_TOL = 1e-9
CERT_REL_TOL = 1e-9

# Quadratic forms below this are reported as a non-PSD Gram matrix
PSD_TOL = 1e-8


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise SupportMismatch(f"supports differ: {a.shape} vs {b.shape}")


def _generalized_kl(nu: np.ndarray, mu: np.ndarray) -> float:
    """sum nu ln(nu/mu) - nu + mu, with 0 ln 0 = 0."""
    return float(rel_entr(nu, mu).sum() - nu.sum() + mu.sum())


# ---------------------------------------------------------------------------
# Plain divergences
# ---------------------------------------------------------------------------


def kl(mu: Any, nu: Any) -> float:
    """KL(mu|nu) = sum mu ln(mu/nu), returning math.inf when mu is not << nu.

    Raises:
        SupportMismatch: If the two measures have different shapes.
    """
    a, b = weights_of(mu), weights_of(nu)
    _same_shape(a, b)
    value = float(rel_entr(a, b).sum())
    return math.inf if math.isinf(value) else value


def neg_entropy(mu: Any, rho: Any) -> float:
    """Negative entropy of mu relative to rho, i.e. KL(mu|rho)."""
    return kl(mu, rho)


def mmd_sq(mu: Any, nu: Any, gram: np.ndarray) -> float:
    """Squared MMD ``(mu - nu)^T G (mu - nu)``.

    Raises:
        SupportMismatch: If mu and nu differ in shape.
        ShapeMismatch: If the Gram matrix does not match the support.
        NotPSD: If the quadratic form is below -1e-8.
    """
    a, b = weights_of(mu), weights_of(nu)
    _same_shape(a, b)
    gram = np.asarray(gram, dtype=np.float64)
    d = (a - b).ravel()
    if gram.shape != (d.size, d.size):
        raise ShapeMismatch(f"gram of shape {gram.shape} for support of size {d.size}")
    value = float(d @ gram @ d)
    if value < -PSD_TOL:
        raise NotPSD(f"quadratic form is {value!r}; the Gram matrix is not PSD")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------


class Functional(ABC):
    """A convex functional on weight arrays."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Short identifier used in reports."""
        ...

    @abstractmethod
    def value(self, x: Any) -> float:
        """Functional value at x."""
        ...

    @abstractmethod
    def first_variation(self, x: Any) -> np.ndarray:
        """Array g with d+F(x)(xi) = <g, xi>."""
        ...

    def hessian(self, x: Any) -> np.ndarray:
        """Hessian on the flattened weights."""
        raise UnsupportedCombination(f"{self.name} has no Hessian")

    def check_domain(self, x: Any) -> None:
        """Raise DomainViolation if x is outside the domain."""
        if not np.all(np.isfinite(weights_of(x))):
            raise DomainViolation(f"{self.name}: non-finite point")

    def divergence(self, nu: Any, mu: Any) -> float:
        """Bregman divergence D(nu|mu) generated by this functional."""
        a, b = weights_of(nu), weights_of(mu)
        _same_shape(a, b)
        return float(self.value(a) - self.value(b) - np.sum(self.first_variation(b) * (a - b)))


class BregmanPotential(Functional):
    """Strictly convex functional generating a Bregman divergence."""


class Objective(Functional):
    """Functional minimised by mirror descent.

    ``constants`` maps a potential name to declared (L, l) relative bounds.
    """

    constants: dict[str, tuple[float, float]] = {}


def _nonnegative(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise DomainViolation(f"{name}: point has negative or non-finite weights")


def _positive(x: np.ndarray, where: np.ndarray, name: str) -> None:
    if np.any(x[where] <= 0):
        raise DomainViolation(f"{name}: first variation needs strictly positive weights")


class NegEntropy(BregmanPotential):
    """phi(mu) = sum mu ln(mu/rho); the reference defaults to the counting measure."""

    def __init__(self, reference: Any = None) -> None:
        self.reference = None if reference is None else np.asarray(weights_of(reference), dtype=np.float64)

    @property
    def name(self) -> str:
        return "neg_entropy"

    def _ref(self, x: np.ndarray) -> np.ndarray:
        if self.reference is None:
            return np.ones_like(x)
        _same_shape(x, self.reference)
        return self.reference

    def value(self, x: Any) -> float:
        x = weights_of(x)
        return kl(x, self._ref(x))

    def first_variation(self, x: Any) -> np.ndarray:
        x = weights_of(x)
        ref = self._ref(x)
        support = ref > 0
        _positive(x, support, self.name)
        out = np.zeros_like(x)
        out[support] = np.log(x[support] / ref[support]) + 1.0
        return out

    def hessian(self, x: Any) -> np.ndarray:
        x = weights_of(x).ravel()
        _positive(x, np.ones_like(x, dtype=bool), self.name)
        return np.diag(1.0 / x)

    def check_domain(self, x: Any) -> None:
        _nonnegative(weights_of(x), self.name)

    def divergence(self, nu: Any, mu: Any) -> float:
        a, b = weights_of(nu), weights_of(mu)
        _same_shape(a, b)
        value = _generalized_kl(a, b)
        if math.isinf(value) or math.isnan(value):
            raise DomainViolation("neg_entropy divergence: nu charges a point where mu is zero")
        return value


class SquaredNorm(BregmanPotential):
    """phi(mu) = ||mu||^2 (Euclidean, no 1/2)."""

    @property
    def name(self) -> str:
        return "squared_norm"

    def value(self, x: Any) -> float:
        x = weights_of(x)
        return float(np.sum(x * x))

    def first_variation(self, x: Any) -> np.ndarray:
        return 2.0 * weights_of(x)

    def hessian(self, x: Any) -> np.ndarray:
        return 2.0 * np.eye(weights_of(x).size)

    def divergence(self, nu: Any, mu: Any) -> float:
        a, b = weights_of(nu), weights_of(mu)
        _same_shape(a, b)
        return float(np.sum((a - b) ** 2))


def _check_gram(gram: Any) -> np.ndarray:
    gram = np.array(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ShapeMismatch(f"gram must be square, got shape {gram.shape}")
    if not np.allclose(gram, gram.T, rtol=0.0, atol=1e-12):
        raise NotPSD("gram matrix is not symmetric")
    gram.setflags(write=False)
    return gram


class MMDKernel(BregmanPotential):
    """phi_k(mu) = mu^T G mu, the squared RKHS norm of the mean embedding."""

    def __init__(self, gram: Any) -> None:
        self.gram = _check_gram(gram)

    @property
    def name(self) -> str:
        return "mmd"

    @property
    def c_k(self) -> float:
        """Kernel bound max_i G[i, i]."""
        return float(np.max(np.diag(self.gram)))

    def value(self, x: Any) -> float:
        x = weights_of(x).ravel()
        return float(x @ self.gram @ x)

    def first_variation(self, x: Any) -> np.ndarray:
        return 2.0 * (self.gram @ weights_of(x).ravel())

    def hessian(self, x: Any) -> np.ndarray:
        return 2.0 * self.gram

    def divergence(self, nu: Any, mu: Any) -> float:
        return mmd_sq(nu, mu, self.gram)


class ShiftedPotential(BregmanPotential):
    """The potential nu -> D_phi(nu|xi).

    Its Bregman divergence coincides with the one of phi.
    """

    def __init__(self, base: BregmanPotential, anchor: Any) -> None:
        self.base = base
        self.anchor = np.asarray(weights_of(anchor), dtype=np.float64)
        self._anchor_grad = base.first_variation(self.anchor)

    @property
    def name(self) -> str:
        return f"shifted_{self.base.name}"

    def value(self, x: Any) -> float:
        return self.base.divergence(x, self.anchor)

    def first_variation(self, x: Any) -> np.ndarray:
        return self.base.first_variation(x) - self._anchor_grad

    def hessian(self, x: Any) -> np.ndarray:
        return self.base.hessian(x)

    def check_domain(self, x: Any) -> None:
        self.base.check_domain(x)


class SumPotential(BregmanPotential):
    """phi + psi."""

    def __init__(self, first: BregmanPotential, second: BregmanPotential) -> None:
        self.first = first
        self.second = second

    @property
    def name(self) -> str:
        return f"{self.first.name}+{self.second.name}"

    def value(self, x: Any) -> float:
        return self.first.value(x) + self.second.value(x)

    def first_variation(self, x: Any) -> np.ndarray:
        return self.first.first_variation(x) + self.second.first_variation(x)

    def hessian(self, x: Any) -> np.ndarray:
        return self.first.hessian(x) + self.second.hessian(x)

    def check_domain(self, x: Any) -> None:
        self.first.check_domain(x)
        self.second.check_domain(x)


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


class KLToTarget(Objective):
    """F(mu) = KL(mu|tau); 1-smooth and 1-convex relative to NegEntropy."""

    constants = {"neg_entropy": (1.0, 1.0)}

    def __init__(self, target: Any) -> None:
        self.target = np.asarray(weights_of(target), dtype=np.float64)

    @property
    def name(self) -> str:
        return "kl_to_target"

    def value(self, x: Any) -> float:
        return kl(x, self.target)

    def first_variation(self, x: Any) -> np.ndarray:
        return NegEntropy(self.target).first_variation(x)

    def hessian(self, x: Any) -> np.ndarray:
        return NegEntropy(self.target).hessian(x)

    def check_domain(self, x: Any) -> None:
        _nonnegative(weights_of(x), self.name)


class MMDToTarget(Objective):
    """F(mu) = MMD^2(mu, tau); 4 c_k-smooth relative to NegEntropy."""

    def __init__(self, gram: Any, target: Any) -> None:
        self.gram = _check_gram(gram)
        self.target = np.asarray(weights_of(target), dtype=np.float64)
        self.constants = {"neg_entropy": (4.0 * float(np.max(np.diag(self.gram))), 0.0)}

    @property
    def name(self) -> str:
        return "mmd_to_target"

    def value(self, x: Any) -> float:
        return mmd_sq(x, self.target, self.gram)

    def first_variation(self, x: Any) -> np.ndarray:
        return 2.0 * (self.gram @ (weights_of(x) - self.target))

    def hessian(self, x: Any) -> np.ndarray:
        return 2.0 * self.gram


class SinkhornMarginal(Objective):
    """F(pi) = KL(p_X pi | mu) on couplings; 1-smooth relative to the coupling entropy."""

    constants = {"neg_entropy": (1.0, 0.0)}

    def __init__(self, target_x: Any) -> None:
        self.target_x = np.asarray(weights_of(target_x), dtype=np.float64)

    @property
    def name(self) -> str:
        return "sinkhorn_marginal"

    def _rows(self, x: Any) -> np.ndarray:
        x = weights_of(x)
        if x.ndim != 2 or x.shape[0] != self.target_x.size:
            raise ShapeMismatch(f"coupling of shape {x.shape} vs first marginal of size {self.target_x.size}")
        return x.sum(axis=1)

    def value(self, x: Any) -> float:
        return kl(self._rows(x), self.target_x)

    def first_variation(self, x: Any) -> np.ndarray:
        rows = self._rows(x)
        grad = NegEntropy(self.target_x).first_variation(rows)
        return np.broadcast_to(grad[:, None], weights_of(x).shape).copy()

    def check_domain(self, x: Any) -> None:
        _nonnegative(weights_of(x), self.name)


class FEMK(Objective):
    """F(pi) = KL(pi | p_X pi (x) K), the latent-EM objective on couplings."""

    constants = {"neg_entropy": (1.0, 0.0)}

    def __init__(self, kernel: Any) -> None:
        self.kernel = np.asarray(weights_of(kernel), dtype=np.float64)

    @property
    def name(self) -> str:
        return "femk"

    def _model(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.kernel.shape:
            raise ShapeMismatch(f"coupling of shape {x.shape} vs kernel of shape {self.kernel.shape}")
        return x.sum(axis=1)[:, None] * self.kernel

    def value(self, x: Any) -> float:
        x = weights_of(x)
        value = kl(x, self._model(x))
        if math.isinf(value):
            raise DomainViolation("femk: coupling is not absolutely continuous w.r.t. p_X pi (x) K")
        return value

    def first_variation(self, x: Any) -> np.ndarray:
        x = weights_of(x)
        model = self._model(x)
        if np.any(x <= 0) or np.any(model <= 0):
            raise DomainViolation("femk: first variation needs a strictly positive coupling")
        return np.log(x / model)

    def check_domain(self, x: Any) -> None:
        _nonnegative(weights_of(x), self.name)


class LinearObjective(Objective):
    """F(x) = <g, x>."""

    def __init__(self, gradient: Any) -> None:
        self.gradient = np.asarray(gradient, dtype=np.float64)

    @property
    def name(self) -> str:
        return "linear"

    def value(self, x: Any) -> float:
        x = weights_of(x)
        _same_shape(x, self.gradient)
        return float(np.sum(self.gradient * x))

    def first_variation(self, x: Any) -> np.ndarray:
        return self.gradient.copy()

    def hessian(self, x: Any) -> np.ndarray:
        return np.zeros((self.gradient.size, self.gradient.size))


class NegatedObjective(Objective):
    """-F. Concave whenever F is convex; used as a negative control."""

    def __init__(self, inner: Functional) -> None:
        self.inner = inner

    @property
    def name(self) -> str:
        return f"neg_{self.inner.name}"

    def value(self, x: Any) -> float:
        return -self.inner.value(x)

    def first_variation(self, x: Any) -> np.ndarray:
        return -self.inner.first_variation(x)

    def hessian(self, x: Any) -> np.ndarray:
        return -self.inner.hessian(x)

    def check_domain(self, x: Any) -> None:
        self.inner.check_domain(x)


def bregman(phi: Functional, nu: Any, mu: Any) -> float:
    """D_phi(nu|mu).

    Raises:
        SupportMismatch: If nu and mu differ in shape.
        DomainViolation: If mu is outside the domain of the first variation.
    """
    _same_shape(weights_of(nu), weights_of(mu))
    return phi.divergence(nu, mu)


# ---------------------------------------------------------------------------
# Relative smoothness and convexity
# ---------------------------------------------------------------------------


@dataclass
class PairCertificate:
    d_F: float
    d_phi: float
    smooth_ok: bool
    convex_ok: bool


@dataclass
class CertificateReport:
    """Per-pair relative bounds D_F <= L D_phi and D_F >= l D_phi."""

    objective: str
    potential: str
    L: float
    l: float
    pairs: list[PairCertificate] = field(default_factory=list)

    @property
    def smooth_ok(self) -> bool:
        return all(p.smooth_ok for p in self.pairs)

    @property
    def convex_ok(self) -> bool:
        return all(p.convex_ok for p in self.pairs)

    @property
    def ok(self) -> bool:
        return self.smooth_ok and self.convex_ok

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "potential": self.potential,
            "L": self.L,
            "l": self.l,
            "pairs": [asdict(p) for p in self.pairs],
            "smooth_ok": self.smooth_ok,
            "convex_ok": self.convex_ok,
        }


def _certify_pair(F: Functional, phi: Functional, nu: Any, mu: Any, L: float, l: float) -> PairCertificate:
    d_F = F.divergence(nu, mu)
    d_phi = phi.divergence(nu, mu)
    upper, lower = L * d_phi, l * d_phi
    tol_up = CERT_ABS_TOL + CERT_REL_TOL * max(abs(d_F), abs(upper))
    tol_low = CERT_ABS_TOL + CERT_REL_TOL * max(abs(d_F), abs(lower))
    return PairCertificate(
        d_F=d_F,
        d_phi=d_phi,
        smooth_ok=bool(d_F <= upper + tol_up),
        convex_ok=bool(d_F >= lower - tol_low),
    )


def certify_relative_bounds(
    F: Functional,
    phi: Functional,
    pairs: Sequence[tuple[Any, Any]],
    L: float,
    l: float,
    *,
    workers: int = 1,
) -> CertificateReport:
    """Check L-smoothness and l-convexity of F relative to phi on (nu, mu) pairs.

    Args:
        F: Objective under test.
        phi: Reference potential.
        pairs: Sequence of (nu, mu); the divergences are D(nu|mu).
        L: Claimed smoothness constant.
        l: Claimed convexity constant.
        workers: Thread count; the report keeps the input order.

    Returns:
        CertificateReport with one entry per pair.
    """
    def check(pair: tuple[Any, Any]) -> PairCertificate:
        return _certify_pair(F, phi, pair[0], pair[1], L, l)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(check, pairs))
    else:
        results = [check(pair) for pair in pairs]

    report = CertificateReport(objective=F.name, potential=phi.name, L=L, l=l, pairs=results)
    logger.info(
        "relative bounds %s vs %s on %d pairs: smooth=%s convex=%s",
        F.name, phi.name, len(results), report.smooth_ok, report.convex_ok,
    )
    return report


def equivalence_check_iii(F: Functional, phi: Functional, mu: Any, nu: Any, L: float) -> float:
    """L <grad phi(mu) - grad phi(nu), mu - nu> - <grad F(mu) - grad F(nu), mu - nu>.

    Nonnegative exactly when the monotone-gradient form of L-smoothness holds
    at this pair.
    """
    a, b = weights_of(mu), weights_of(nu)
    _same_shape(a, b)
    d = (a - b).ravel()
    phi_gap = np.ravel(phi.first_variation(a) - phi.first_variation(b))
    f_gap = np.ravel(F.first_variation(a) - F.first_variation(b))
    return float(L * (phi_gap @ d) - f_gap @ d)
