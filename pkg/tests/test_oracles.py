"""Tests for the independent reference computations."""

import math

import numpy as np
import pytest

from mirrorcert.divergences import (
    KLToTarget,
    LinearObjective,
    MMDToTarget,
    NegatedObjective,
    NegEntropy,
    SinkhornMarginal,
    SquaredNorm,
    kl,
)
from mirrorcert.errors import InvalidConstants, SizeTooLarge
from mirrorcert.instances import random_eot_problem, random_gram, random_latent_problem
from mirrorcert.measures import marginal_x, marginal_y, tv_norm
from mirrorcert.mirror_descent import FixedMarginalY, MDConfig, Simplex, Unconstrained, md_step
from mirrorcert.oracles import (
    FDSchedule,
    convexity_probe,
    fd_directional_derivative,
    kl_compensated,
    reference_solution,
    soft_c_transform_precise,
    subproblem_argmin_oracle,
)
from mirrorcert.sinkhorn import primal_objective, run_sinkhorn, soft_c_transform_x


class TestFiniteDifferences:
    def test_matches_first_variation(self, simplex_point):
        F = KLToTarget(simplex_point(6, 5.0))
        mu, nu = simplex_point(6, 5.0), simplex_point(6, 5.0)
        report = fd_directional_derivative(F, mu, nu - mu)
        assert report.gaps_shrink
        assert report.extrapolated == pytest.approx(report.analytic, abs=1e-6)

    def test_schedule_must_decrease(self):
        with pytest.raises(InvalidConstants):
            FDSchedule(h_values=(1e-3, 1e-2))
        with pytest.raises(InvalidConstants):
            FDSchedule(norm="max")

    def test_linear_objective_is_exact(self, rng):
        F = LinearObjective(rng.standard_normal(4))
        report = fd_directional_derivative(F, rng.standard_normal(4), rng.standard_normal(4))
        assert report.final_gap < 1e-8


class TestConvexityProbe:
    def test_convex_and_concave(self, simplex_point):
        F = KLToTarget(simplex_point(5, 5.0))
        mu, nu = simplex_point(5, 5.0), simplex_point(5, 5.0)
        assert convexity_probe(F, mu, nu) >= -1e-12
        assert convexity_probe(NegatedObjective(F), mu, nu) < 0


class TestSubproblemOracle:
    def _assert_same_value(self, G, phi, mu, constraint, L):
        g = G.first_variation(mu)
        closed = np.asarray(md_step(G, phi, mu, MDConfig(L=L, constraint=constraint)), dtype=np.float64)
        oracle = subproblem_argmin_oracle(G, phi, mu, constraint, L=L)
        a = float(np.sum(g * closed) + L * phi.divergence(closed, mu))
        b = float(np.sum(g * oracle) + L * phi.divergence(oracle, mu))
        assert a == pytest.approx(b, abs=1e-9 * max(1.0, abs(b)))

    def test_entropy_on_simplex(self, rng, simplex_point):
        G = MMDToTarget(random_gram(rng, 6), simplex_point(6))
        self._assert_same_value(G, NegEntropy(), simplex_point(6, 2.0), Simplex(), G.constants["neg_entropy"][0])

    def test_entropy_unconstrained(self, rng):
        G = KLToTarget(rng.uniform(0.1, 2.0, size=5))
        self._assert_same_value(G, NegEntropy(), rng.uniform(0.1, 2.0, size=5), Unconstrained(), 2.0)

    def test_entropy_with_fixed_marginal(self, rng, simplex_point):
        nu = simplex_point(3, 2.0)
        pi = rng.uniform(0.1, 1.0, size=(4, 3))
        pi *= nu / pi.sum(axis=0)
        self._assert_same_value(SinkhornMarginal(simplex_point(4, 2.0)), NegEntropy(), pi, FixedMarginalY(nu), 1.0)

    def test_squared_norm(self, rng, simplex_point):
        G = LinearObjective(rng.standard_normal(7))
        self._assert_same_value(G, SquaredNorm(), rng.standard_normal(7), Unconstrained(), 1.0)
        self._assert_same_value(G, SquaredNorm(), simplex_point(7), Simplex(), 1.0)

    def test_size_cap(self):
        G = LinearObjective(np.zeros(65))
        with pytest.raises(SizeTooLarge):
            subproblem_argmin_oracle(G, NegEntropy(), np.full(65, 1.0 / 65), Simplex())


class TestReferenceSolution:
    def test_transport(self, eot_problem):
        ref = reference_solution(eot_problem)
        pi = ref.solution
        assert ref.residual < 1e-12
        assert tv_norm(marginal_x(pi), eot_problem.mu) < 1e-12
        assert tv_norm(marginal_y(pi), eot_problem.nu) < 1e-12
        assert ref.objective == pytest.approx(primal_objective(eot_problem, pi), rel=1e-12)

    def test_transport_agrees_with_sinkhorn(self, eot_problem):
        ref = reference_solution(eot_problem)
        trace = run_sinkhorn(eot_problem, n_iters=500)
        np.testing.assert_allclose(trace.final.weights, ref.solution.weights, atol=1e-10)

    def test_latent(self, rng):
        p = random_latent_problem(rng, 4, 6)
        ref = reference_solution(p)
        assert ref.residual <= 1e-10
        assert ref.agreement <= 1e-8
        assert ref.solution.mass == pytest.approx(1.0, abs=1e-12)
        fitted = ref.solution.weights @ p.kernel.weights
        assert ref.objective == kl_compensated(p.nu, fitted)
        assert ref.objective == pytest.approx(kl(p.nu, fitted), rel=1e-12, abs=1e-15)

    def test_unknown_problem_type(self):
        with pytest.raises(TypeError):
            reference_solution(object())


class TestExtendedPrecision:
    def test_compensated_kl(self, simplex_point):
        mu, nu = simplex_point(50), simplex_point(50)
        assert kl_compensated(mu, nu) == pytest.approx(kl(mu, nu), rel=1e-12, abs=1e-15)

    def test_compensated_kl_infinite(self):
        assert math.isinf(kl_compensated(np.array([0.5, 0.5]), np.array([1.0, 0.0])))

    def test_precise_soft_c_transform(self, rng):
        p = random_eot_problem(rng, 5, 4, 0.1)
        f = rng.standard_normal(5)
        np.testing.assert_allclose(
            soft_c_transform_x(f, p.mu, p.cost, p.epsilon),
            soft_c_transform_precise(f, p.mu, p.cost, p.epsilon),
            atol=1e-12,
        )
