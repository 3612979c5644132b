"""Randomised verification battery.

Oracle checks run first. If any of them fails the certificate checks are
reported as skipped, since they compare against the oracles.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from mirrorcert.config import VerifyScale
from mirrorcert.divergences import (
    BregmanPotential,
    KLToTarget,
    LinearObjective,
    MMDToTarget,
    NegatedObjective,
    NegEntropy,
    ShiftedPotential,
    SinkhornMarginal,
    SquaredNorm,
    SumPotential,
    equivalence_check_iii,
    kl,
)
from mirrorcert.em import LatentProblem, em_rate_certificate, rl_step, run_latent_em
from mirrorcert.errors import MirrorcertError
from mirrorcert.instances import (
    random_eot_problem,
    random_gram,
    random_kernel,
    random_latent_problem,
    random_simplex_point,
)
from mirrorcert.measures import ConditionalKernel, Coupling, DiscreteMeasure, disintegrate, joint, tv_norm
from mirrorcert.mirror_descent import (
    FixedMarginalY,
    MDConfig,
    Simplex,
    Unconstrained,
    md_step,
    rate_bound,
    run_md,
    three_point_residual,
)
from mirrorcert.oracles import (
    convexity_probe,
    fd_directional_derivative,
    reference_solution,
    subproblem_argmin_oracle,
)
from mirrorcert.sinkhorn import (
    contraction_check,
    rate_certificate,
    run_sinkhorn,
    sinkhorn_iteration,
    stability_check,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
SLACK_TOL = 1e-9
EPSILONS = (0.1, 1.0, 10.0)


@dataclass
class Tally:
    """Running count of trials, failures and the smallest slack seen."""

    trials: int = 0
    failures: int = 0
    worst: float = math.inf
    notes: list[str] = field(default_factory=list)

    def add(self, ok: bool, slack: float = math.inf, note: str = "") -> None:
        self.trials += 1
        if not ok:
            self.failures += 1
            if note and len(self.notes) < 5:
                self.notes.append(note)
        if not math.isnan(slack):
            self.worst = min(self.worst, slack)


@dataclass
class CheckResult:
    name: str
    description: str
    stage: str
    ok: Optional[bool]
    trials: int = 0
    failures: int = 0
    worst_slack: Optional[float] = None
    elapsed: float = 0.0
    detail: str = ""


@dataclass
class BatteryReport:
    seed: int
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.ok is True for c in self.checks)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "ok": self.ok, "checks": [asdict(c) for c in self.checks]}


CheckFn = Callable[[np.random.Generator, VerifyScale, Tally], None]


# ---------------------------------------------------------------------------
# Oracle checks
# ---------------------------------------------------------------------------


def _finite_differences(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for _ in range(max(1, scale.oracle_instances // 4)):
        n = int(rng.integers(2, 11))
        F = KLToTarget(random_simplex_point(rng, n, 5.0))
        mu = random_simplex_point(rng, n, 5.0)
        nu = random_simplex_point(rng, n, 5.0)
        report = fd_directional_derivative(F, mu, nu - mu)
        gap = abs(report.extrapolated - report.analytic)
        bound = 1e-6 * max(1.0, abs(report.analytic))
        tally.add(report.gaps_shrink and gap <= bound, bound - gap, f"fd gap {gap:.3e}")

        secant = convexity_probe(F, mu, nu)
        tally.add(secant >= -IDENTITY_TOL, secant, f"secant gap {secant:.3e}")
        # the negated objective is concave and must be caught
        concave = convexity_probe(NegatedObjective(F), mu, nu)
        tally.add(concave < 0, math.inf, "concave control not detected")


def _positive_coupling(rng: np.random.Generator, n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pi, mu, nu): a positive coupling with second marginal nu, plus a first-marginal target mu."""
    nu = random_simplex_point(rng, m, 2.0)
    pi = rng.uniform(0.1, 1.0, size=(n, m))
    pi *= nu / pi.sum(axis=0)
    return pi, random_simplex_point(rng, n, 2.0), nu


def _subproblem_oracle(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for trial in range(scale.oracle_instances):
        branch = trial % 5
        n = int(rng.integers(2, 13))
        if branch == 0:
            G = MMDToTarget(random_gram(rng, n), random_simplex_point(rng, n))
            phi, constraint, L = NegEntropy(), Simplex(), G.constants["neg_entropy"][0]
            mu = random_simplex_point(rng, n, 2.0)
        elif branch == 1:
            G = KLToTarget(rng.uniform(0.1, 2.0, size=n))
            phi, constraint, L = NegEntropy(), Unconstrained(), 2.0
            mu = rng.uniform(0.1, 2.0, size=n)
        elif branch == 2:
            mu, target_x, nu = _positive_coupling(rng, int(rng.integers(2, 6)), int(rng.integers(2, 6)))
            G = SinkhornMarginal(target_x)
            phi, constraint, L = NegEntropy(), FixedMarginalY(nu), 1.0
        elif branch == 3:
            G = LinearObjective(rng.standard_normal(n))
            phi, constraint, L = SquaredNorm(), Unconstrained(), 1.0
            mu = rng.standard_normal(n)
        else:
            G = LinearObjective(rng.standard_normal(n))
            phi, constraint, L = SquaredNorm(), Simplex(), 1.0
            mu = random_simplex_point(rng, n)

        g = G.first_variation(mu)

        def subproblem(z: np.ndarray) -> float:
            return float(np.sum(g * z) + L * phi.divergence(z, mu))

        closed = np.asarray(md_step(G, phi, mu, MDConfig(L=L, constraint=constraint)), dtype=np.float64)
        oracle = subproblem_argmin_oracle(G, phi, mu, constraint, L=L)
        a, b = subproblem(closed), subproblem(oracle)
        gap = abs(a - b)
        bound = SLACK_TOL * max(1.0, abs(b))
        tally.add(gap <= bound, bound - gap, f"{phi.name}/{type(constraint).__name__}: gap {gap:.3e}")


def _reference_solvers(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for _ in range(max(1, scale.oracle_instances // 20)):
        eot = random_eot_problem(rng, 5, 4, float(rng.choice([0.5, 1.0])))
        ref = reference_solution(eot)
        tally.add(ref.residual < 1e-12, 1e-12 - ref.residual, f"transport residual {ref.residual:.3e}")
        latent = random_latent_problem(rng, 4, 6)
        ref = reference_solution(latent)
        tally.add(ref.residual <= 1e-10, 1e-10 - ref.residual, f"latent residual {ref.residual:.3e}")


# ---------------------------------------------------------------------------
# Certificate checks
# ---------------------------------------------------------------------------


def _md_rate(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    phi = NegEntropy()
    for _ in range(scale.md_instances):
        n = int(rng.integers(2, scale.md_max_size + 1))
        F = KLToTarget(random_simplex_point(rng, n))
        mu0 = DiscreteMeasure(random_simplex_point(rng, n), probability=True)
        refs = [random_simplex_point(rng, n) for _ in range(scale.md_refs)]
        for L in (1.0, 2.0):
            trace = run_md(F, phi, mu0, cfg=MDConfig(L=L, l=1.0, max_iters=scale.md_iters, constraint=Simplex()))
            for ref in refs:
                d0 = max(phi.divergence(ref, mu0), 0.0)
                f_ref = F.value(ref)
                for record in trace.records[1:]:
                    bound = rate_bound(1.0, L, d0, record.n)
                    slack = bound - (record.objective - f_ref) + SLACK_TOL * max(1.0, abs(f_ref))
                    tally.add(slack >= -SLACK_TOL, slack, f"n={record.n} L={L}: slack {slack:.3e}")


def _three_point(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    phi = NegEntropy()
    cfg = MDConfig(L=1.0, constraint=Simplex())
    for _ in range(scale.three_point_trials):
        n = int(rng.integers(2, 21))
        mu = random_simplex_point(rng, n)
        G = LinearObjective(rng.standard_normal(n))
        nu_bar = md_step(G, phi, mu, cfg)
        nu = random_simplex_point(rng, n)
        residual = three_point_residual(G, phi, mu, nu, nu_bar)
        tally.add(residual >= -SLACK_TOL, residual, f"residual {residual:.3e}")


def _sinkhorn_is_md(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for _ in range(scale.sinkhorn_md_instances):
        n = int(rng.integers(1, scale.sinkhorn_md_max_size + 1))
        m = int(rng.integers(1, scale.sinkhorn_md_max_size + 1))
        p = random_eot_problem(rng, n, m, float(rng.choice(EPSILONS)))
        pi = Coupling(rng.uniform(0.1, 1.0, size=(n, m)))
        pi = Coupling(pi.weights * (p.nu.weights / pi.weights.sum(axis=0)), probability=True)
        sinkhorn = sinkhorn_iteration(pi, p).weights
        mirror = md_step(SinkhornMarginal(p.mu), NegEntropy(), pi, MDConfig(L=1.0, constraint=FixedMarginalY(p.nu)))
        gap = float(np.max(np.abs(sinkhorn - mirror.weights) / sinkhorn))
        tally.add(gap <= 1e-12, 1e-12 - gap, f"relative gap {gap:.3e}")


def _sinkhorn_traces(rng: np.random.Generator, scale: VerifyScale, min_epsilon: float = 0.0):
    """Yield (trace, reference coupling) pairs over the epsilon grid."""
    size = scale.sinkhorn_rate_size
    for i in range(scale.sinkhorn_rate_instances):
        epsilon = EPSILONS[i % len(EPSILONS)]
        p = random_eot_problem(rng, size, size, epsilon)
        if epsilon < min_epsilon:
            continue
        trace = run_sinkhorn(p, n_iters=scale.sinkhorn_rate_iters)
        yield trace, reference_solution(p).solution


def _sinkhorn_sublinear(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for trace, pi_star in _sinkhorn_traces(rng, scale):
        cert = rate_certificate(trace, pi_star)
        for r in cert.records:
            slack = r.sublinear_bound - r.kl_gap
            tally.add(r.sublinear_ok, slack, f"eps={trace.problem.epsilon} n={r.n}: slack {slack:.3e}")


def _sinkhorn_linear(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for trace, pi_star in _sinkhorn_traces(rng, scale, min_epsilon=1.0):
        cert = rate_certificate(trace, pi_star)
        for r in cert.records:
            slack = r.linear_bound - r.kl_gap
            tally.add(r.linear_ok, slack, f"eps={trace.problem.epsilon} n={r.n}: slack {slack:.3e}")


def _contraction(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    per_instance = max(1, scale.contraction_pairs // max(1, scale.contraction_instances))
    for i in range(scale.contraction_instances):
        n, m = int(rng.integers(2, 16)), int(rng.integers(2, 16))
        p = random_eot_problem(rng, n, m, EPSILONS[i % len(EPSILONS)])
        for _ in range(per_instance):
            f, f_tilde = rng.standard_normal(n), rng.standard_normal(n)
            result = contraction_check(f, f_tilde, p.mu, p.cost, p.epsilon)
            tally.add(result.ok, result.rhs - result.lhs, f"lhs {result.lhs:.3e} > rhs {result.rhs:.3e}")


def _stability(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for trace, pi_star in _sinkhorn_traces(rng, scale):
        p = trace.problem
        for n in range(len(trace)):
            pi = trace.coupling(n)
            pairs = [(pi, pi_star)]
            if n + 1 < len(trace):
                pairs.append((pi, trace.coupling(n + 1)))
            for a, b in pairs:
                report = stability_check(a, b, p)
                slack = min(report.kl_rhs - report.kl_lhs, report.potential_rhs - report.potential_lhs)
                tally.add(report.ok, slack, f"eps={p.epsilon} n={n}: slack {slack:.3e}")


def _em_rate(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for _ in range(scale.em_instances):
        p = random_latent_problem(rng, 10, 15)
        trace = run_latent_em(p, n_iters=scale.em_iters)
        cert = em_rate_certificate(trace, reference_solution(p).solution, p)
        tally.add(trace.is_monotone(), math.inf, "objective increased")
        for r in cert.records:
            tally.add(r.ok, r.bound - r.objective, f"n={r.n}: {r.objective:.6e} > {r.bound:.6e}")


def _em_degenerate(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for _ in range(max(1, scale.em_instances)):
        n = int(rng.integers(2, 16))
        nu = DiscreteMeasure(random_simplex_point(rng, n), probability=True)

        identity = LatentProblem(ConditionalKernel(np.eye(n)), nu, DiscreteMeasure.uniform(n), strict=False)
        tv = tv_norm(rl_step(identity.mu0, identity), nu)
        tally.add(tv <= 1e-12, 1e-12 - tv, f"identity kernel: TV {tv:.3e}")

        mu0 = DiscreteMeasure(random_simplex_point(rng, n), probability=True)
        uniform = LatentProblem(ConditionalKernel(np.full((n, n), 1.0 / n)), nu, mu0)
        tv = tv_norm(rl_step(mu0, uniform), mu0)
        tally.add(tv <= 1e-13, 1e-13 - tv, f"uniform kernel: TV {tv:.3e}")

        trace = run_latent_em(random_latent_problem(rng, n, int(rng.integers(2, 16))), n_iters=20)
        drift = max(r.mass_residual for r in trace.records)
        tally.add(drift <= 1e-13, 1e-13 - drift, f"mass drift {drift:.3e}")


def _mmd(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    per_gram = max(1, scale.mmd_pairs // max(1, scale.mmd_grams))
    phi = NegEntropy()
    for _ in range(scale.mmd_grams):
        n = int(rng.integers(2, scale.mmd_max_size + 1))
        gram = random_gram(rng, n)
        target = random_simplex_point(rng, n)
        F = MMDToTarget(gram, target)
        L = F.constants["neg_entropy"][0]
        for _ in range(per_gram):
            mu, nu = random_simplex_point(rng, n), random_simplex_point(rng, n)
            residual = equivalence_check_iii(F, phi, mu, nu, L)
            tally.add(residual >= -SLACK_TOL, residual, f"monotone-gradient residual {residual:.3e}")
        trace = run_md(F, phi, DiscreteMeasure.uniform(n), cfg=MDConfig(L=L, max_iters=scale.mmd_iters, constraint=Simplex()))
        rise = float(np.max(np.diff(trace.objectives), initial=0.0))
        tally.add(trace.is_monotone(), -rise, f"objective rose by {rise:.3e}")


def _identities(rng: np.random.Generator, scale: VerifyScale, tally: Tally) -> None:
    for _ in range(scale.identity_instances):
        n, m = int(rng.integers(2, 12)), int(rng.integers(2, 12))
        mu = DiscreteMeasure(random_simplex_point(rng, n), probability=True)
        nu = DiscreteMeasure(random_simplex_point(rng, n), probability=True)
        rho = random_simplex_point(rng, n)

        pi = joint(mu, random_kernel(rng, n, m))
        gap = float(np.max(np.abs(joint(*disintegrate(pi)).weights - pi.weights)))
        tally.add(gap <= IDENTITY_TOL, IDENTITY_TOL - gap, f"disintegration gap {gap:.3e}")

        pi_bar = joint(nu, random_kernel(rng, n, m))
        (p, k), (p_bar, k_bar) = disintegrate(pi), disintegrate(pi_bar)
        whole = kl(pi, pi_bar)
        chained = kl(p, p_bar) + sum(p.weights[i] * kl(k.weights[i], k_bar.weights[i]) for i in range(n))
        gap = abs(whole - chained) / max(1.0, abs(whole))
        tally.add(gap <= IDENTITY_TOL, IDENTITY_TOL - gap, f"chain rule gap {gap:.3e}")

        K = random_kernel(rng, n, m).weights
        slack = kl(mu, nu) - kl(mu.weights @ K, nu.weights @ K)
        tally.add(slack >= -IDENTITY_TOL, slack, f"data processing slack {slack:.3e}")

        slack = 2.0 * kl(mu, nu) - tv_norm(mu, nu) ** 2
        tally.add(slack >= -IDENTITY_TOL, slack, f"Pinsker slack {slack:.3e}")

        base = NegEntropy()
        gap = abs(ShiftedPotential(base, rho).divergence(nu, mu) - base.divergence(nu, mu))
        tally.add(gap <= IDENTITY_TOL, IDENTITY_TOL - gap, f"shifted potential gap {gap:.3e}")

        a, b = rng.uniform(0.1, 3.0, size=2)
        combined = SumPotential(_Scaled(base, a), _Scaled(SquaredNorm(), b))
        expected = a * base.divergence(nu, mu) + b * SquaredNorm().divergence(nu, mu)
        gap = abs(combined.divergence(nu, mu) - expected)
        tally.add(gap <= IDENTITY_TOL, IDENTITY_TOL - gap, f"linearity gap {gap:.3e}")

        gap = abs(NegEntropy(rho).divergence(nu, mu) - kl(nu, mu))
        tally.add(gap <= IDENTITY_TOL, IDENTITY_TOL - gap, f"KL as Bregman gap {gap:.3e}")


class _Scaled(BregmanPotential):
    """factor * inner, with the generic Bregman divergence."""

    def __init__(self, inner: BregmanPotential, factor: float) -> None:
        self.inner = inner
        self.factor = float(factor)

    @property
    def name(self) -> str:
        return f"{self.factor:g}*{self.inner.name}"

    def value(self, x: Any) -> float:
        return self.factor * self.inner.value(x)

    def first_variation(self, x: Any) -> np.ndarray:
        return self.factor * self.inner.first_variation(x)


# ---------------------------------------------------------------------------
# Battery
# ---------------------------------------------------------------------------

ORACLE_CHECKS: list[tuple[str, str, CheckFn]] = [
    ("oracle_finite_differences", "first variations match finite differences; convexity probe", _finite_differences),
    ("oracle_subproblem", "closed-form mirror steps match the Newton subproblem oracle", _subproblem_oracle),
    ("oracle_reference", "reference optima converge and agree with their cross-checks", _reference_solvers),
]

CERTIFICATE_CHECKS: list[tuple[str, str, CheckFn]] = [
    ("md_rate", "mirror descent rate bound on KL to a target", _md_rate),
    ("three_point", "three-point inequality of the entropic simplex step", _three_point),
    ("sinkhorn_is_mirror_descent", "Sinkhorn iteration equals the entropic mirror step", _sinkhorn_is_md),
    ("sinkhorn_sublinear_rate", "KL(p_X pi_n|mu) <= D0 / n", _sinkhorn_sublinear),
    ("sinkhorn_linear_rate", "linear Sinkhorn rate for eps >= 1", _sinkhorn_linear),
    ("soft_c_transform_contraction", "soft c-transform contracts in the variation seminorm", _contraction),
    ("sinkhorn_stability", "strong convexity of the marginal objective and potential stability", _stability),
    ("latent_em_rate", "latent EM is monotone with a 1/n rate", _em_rate),
    ("latent_em_degenerate", "identity and uniform kernels, mass conservation", _em_degenerate),
    ("mmd_smoothness", "MMD^2 is 4 c_k-smooth relative to entropy; mirror descent is monotone", _mmd),
    ("identities", "disintegration, KL chain rule, data processing, Pinsker and Bregman identities", _identities),
]


def _run_check(name: str, description: str, stage: str, fn: CheckFn, rng: np.random.Generator, scale: VerifyScale) -> CheckResult:
    tally = Tally()
    start = time.perf_counter()
    error = ""
    try:
        fn(rng, scale, tally)
    except MirrorcertError as e:
        error = f"{type(e).__name__}: {e}"
        logger.warning("check %s raised %s", name, error)
    elapsed = time.perf_counter() - start
    ok = not error and tally.failures == 0 and tally.trials > 0
    detail = error or "; ".join(tally.notes)
    logger.info("check %s: %d trials, %d failures (%.2fs)", name, tally.trials, tally.failures, elapsed)
    return CheckResult(
        name=name,
        description=description,
        stage=stage,
        ok=ok,
        trials=tally.trials,
        failures=tally.failures,
        worst_slack=None if math.isinf(tally.worst) else tally.worst,
        elapsed=elapsed,
        detail=detail,
    )


def run_battery(scale: VerifyScale, seed: int = 0, *, only: Optional[Sequence[str]] = None) -> BatteryReport:
    """Run the oracle checks, then the certificate checks.

    Each check draws from its own PCG64 stream spawned from ``seed``, so a
    check's outcome does not depend on which other checks run.

    Args:
        scale: Trial counts.
        seed: Root seed.
        only: Names of certificate checks to run; oracle checks always run.

    Returns:
        BatteryReport with one entry per check.
    """
    streams = np.random.SeedSequence(seed).spawn(len(ORACLE_CHECKS) + len(CERTIFICATE_CHECKS))
    rngs = [np.random.Generator(np.random.PCG64(s)) for s in streams]

    results = [
        _run_check(name, description, "oracle", fn, rng, scale)
        for (name, description, fn), rng in zip(ORACLE_CHECKS, rngs)
    ]
    oracles_ok = all(r.ok for r in results)
    if not oracles_ok:
        logger.warning("oracle checks failed; certificate checks are skipped")

    for (name, description, fn), rng in zip(CERTIFICATE_CHECKS, rngs[len(ORACLE_CHECKS):]):
        if only is not None and name not in only:
            continue
        if not oracles_ok:
            results.append(CheckResult(name, description, "certificate", None, detail="skipped: oracle checks failed"))
            continue
        results.append(_run_check(name, description, "certificate", fn, rng, scale))
    return BatteryReport(seed=seed, checks=results)
