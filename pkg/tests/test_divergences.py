"""Tests for divergences, potentials and relative-bound certificates."""

import math

import numpy as np
import pytest

from mirrorcert.divergences import (
    FEMK,
    Functional,
    KLToTarget,
    LinearObjective,
    MMDKernel,
    MMDToTarget,
    NegEntropy,
    ShiftedPotential,
    SinkhornMarginal,
    SquaredNorm,
    SumPotential,
    bregman,
    certify_relative_bounds,
    equivalence_check_iii,
    kl,
    mmd_sq,
    neg_entropy,
)
from mirrorcert.errors import DomainViolation, NotPSD, SupportMismatch, UnsupportedCombination
from mirrorcert.instances import random_gram
from mirrorcert.measures import DiscreteMeasure


class TestKL:
    def test_self_is_zero(self, simplex_point):
        mu = simplex_point(6)
        assert kl(mu, mu) == 0.0

    def test_two_point_value(self):
        expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, rel=1e-14)

    def test_not_absolutely_continuous(self):
        assert kl(DiscreteMeasure.dirac(2, 0), DiscreteMeasure.dirac(2, 1)) == math.inf

    def test_zero_mass_points_ignored(self):
        assert kl([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2.0))

    def test_nonnegative(self, simplex_point):
        for _ in range(20):
            assert kl(simplex_point(8), simplex_point(8)) >= 0.0

    def test_support_mismatch(self):
        with pytest.raises(SupportMismatch):
            kl([0.5, 0.5], [1.0])


class TestMMD:
    def test_not_psd(self):
        gram = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(NotPSD):
            mmd_sq([1.0, 0.0], [0.0, 1.0], gram)

    def test_asymmetric_gram_rejected(self):
        with pytest.raises(NotPSD):
            MMDKernel(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_identity_gram_is_squared_distance(self, rng):
        a, b = rng.uniform(size=4), rng.uniform(size=4)
        assert mmd_sq(a, b, np.eye(4)) == pytest.approx(float(np.sum((a - b) ** 2)))

    def test_potential_divergence_is_mmd(self, rng, simplex_point):
        gram = random_gram(rng, 5)
        mu, nu = simplex_point(5), simplex_point(5)
        phi = MMDKernel(gram)
        assert phi.divergence(nu, mu) == pytest.approx(mmd_sq(nu, mu, gram), abs=1e-14)
        assert Functional.divergence(phi, nu, mu) == pytest.approx(mmd_sq(nu, mu, gram), abs=1e-12)


class TestBregman:
    def test_neg_entropy_is_kl_on_probabilities(self, simplex_point):
        mu, nu = simplex_point(7), simplex_point(7)
        assert bregman(NegEntropy(), nu, mu) == pytest.approx(kl(nu, mu), abs=1e-14)

    def test_reference_does_not_change_divergence(self, simplex_point):
        mu, nu, rho = simplex_point(7), simplex_point(7), simplex_point(7)
        assert NegEntropy(rho).divergence(nu, mu) == pytest.approx(NegEntropy().divergence(nu, mu), abs=1e-14)

    def test_closed_form_matches_generic(self, simplex_point):
        mu, nu = simplex_point(5), simplex_point(5)
        for phi in (NegEntropy(), SquaredNorm()):
            assert phi.divergence(nu, mu) == pytest.approx(Functional.divergence(phi, nu, mu), abs=1e-12)

    def test_squared_norm_has_no_half(self):
        assert SquaredNorm().divergence([1.0, 0.0], [0.0, 0.0]) == 1.0
        assert bregman(SquaredNorm(), [1.0, 0.0], [0.0, 1.0]) == 2.0

    def test_neg_entropy_against_counting_measure(self):
        value = neg_entropy(DiscreteMeasure.uniform(2), DiscreteMeasure.counting(2))
        assert value == pytest.approx(-math.log(2.0), rel=1e-15)

    def test_unbounded_when_mu_vanishes(self):
        with pytest.raises(DomainViolation):
            NegEntropy().divergence([0.5, 0.5], [1.0, 0.0])

    def test_first_variation_needs_positive_point(self):
        with pytest.raises(DomainViolation):
            NegEntropy().first_variation([0.0, 1.0])

    def test_first_variation(self, simplex_point):
        mu, rho = simplex_point(4), simplex_point(4)
        np.testing.assert_allclose(NegEntropy(rho).first_variation(mu), np.log(mu / rho) + 1.0)

    def test_support_mismatch(self):
        with pytest.raises(SupportMismatch):
            bregman(NegEntropy(), [0.5, 0.5], [1.0 / 3] * 3)

    def test_shifted_potential_keeps_divergence(self, simplex_point):
        mu, nu, xi = simplex_point(6), simplex_point(6), simplex_point(6)
        shifted = ShiftedPotential(NegEntropy(), xi)
        assert shifted.divergence(nu, mu) == pytest.approx(NegEntropy().divergence(nu, mu), abs=1e-12)

    def test_sum_potential_is_linear(self, simplex_point):
        mu, nu = simplex_point(6), simplex_point(6)
        total = SumPotential(NegEntropy(), SquaredNorm())
        expected = NegEntropy().divergence(nu, mu) + SquaredNorm().divergence(nu, mu)
        assert total.divergence(nu, mu) == pytest.approx(expected, abs=1e-12)

    def test_linear_objective_has_zero_divergence(self, rng, simplex_point):
        F = LinearObjective(rng.standard_normal(5))
        assert abs(F.divergence(simplex_point(5), simplex_point(5))) < 1e-14

    def test_no_hessian(self):
        F = FEMK(np.eye(2))
        with pytest.raises(UnsupportedCombination):
            F.hessian(np.eye(2) / 2)


class TestRelativeBounds:
    def test_kl_objective_is_one_smooth_and_one_convex(self, simplex_point):
        F = KLToTarget(simplex_point(6))
        pairs = [(simplex_point(6), simplex_point(6)) for _ in range(30)]
        L, l = F.constants["neg_entropy"]
        report = certify_relative_bounds(F, NegEntropy(), pairs, L, l)
        assert report.ok
        assert len(report.pairs) == 30

    def test_understated_smoothness_is_caught(self, simplex_point):
        F = KLToTarget(simplex_point(6))
        pairs = [(simplex_point(6), simplex_point(6)) for _ in range(10)]
        report = certify_relative_bounds(F, NegEntropy(), pairs, 0.5, 0.0)
        assert not report.smooth_ok
        assert report.convex_ok

    def test_workers_keep_order(self, simplex_point):
        F = KLToTarget(simplex_point(4))
        pairs = [(simplex_point(4), simplex_point(4)) for _ in range(12)]
        serial = certify_relative_bounds(F, NegEntropy(), pairs, 1.0, 1.0)
        threaded = certify_relative_bounds(F, NegEntropy(), pairs, 1.0, 1.0, workers=3)
        assert [p.d_F for p in serial.pairs] == [p.d_F for p in threaded.pairs]

    def test_mmd_smooth_relative_to_entropy(self, rng, simplex_point):
        gram = random_gram(rng, 8)
        F = MMDToTarget(gram, simplex_point(8))
        L, l = F.constants["neg_entropy"]
        assert L == pytest.approx(4.0 * np.max(np.diag(gram)))
        pairs = [(simplex_point(8), simplex_point(8)) for _ in range(30)]
        assert certify_relative_bounds(F, NegEntropy(), pairs, L, l).ok

    def test_mmd_monotone_gradient_form(self, rng, simplex_point):
        gram = random_gram(rng, 8)
        F = MMDToTarget(gram, simplex_point(8))
        L = F.constants["neg_entropy"][0]
        for _ in range(30):
            assert equivalence_check_iii(F, NegEntropy(), simplex_point(8), simplex_point(8), L) >= -1e-9

    def test_sinkhorn_marginal_one_smooth_relative_to_coupling_entropy(self, rng, simplex_point):
        F = SinkhornMarginal(simplex_point(4))
        pairs = [tuple(w / w.sum() for w in rng.uniform(0.05, 1.0, size=(2, 4, 3))) for _ in range(30)]
        report = certify_relative_bounds(F, NegEntropy(), pairs, *F.constants["neg_entropy"])
        assert report.ok
        for (a, b), pair in zip(pairs, report.pairs):
            assert pair.d_F == pytest.approx(kl(a.sum(axis=1), b.sum(axis=1)), abs=1e-13)
            assert pair.d_F <= kl(a, b) + 1e-12

    def test_report_dict(self, simplex_point):
        F = KLToTarget(simplex_point(3))
        report = certify_relative_bounds(F, NegEntropy(), [(simplex_point(3), simplex_point(3))], 1.0, 1.0)
        data = report.to_dict()
        assert data["smooth_ok"] and data["convex_ok"]
        assert data["objective"] == "kl_to_target"


class TestFEMK:
    def test_domain_violation_outside_model_support(self):
        kernel = np.array([[1.0, 0.0], [0.5, 0.5]])
        pi = np.full((2, 2), 0.25)
        with pytest.raises(DomainViolation):
            FEMK(kernel).value(pi)

    def test_zero_at_model_coupling(self, rng, simplex_point):
        kernel = rng.dirichlet(np.ones(4), size=3)
        pi = simplex_point(3)[:, None] * kernel
        assert abs(FEMK(kernel).value(pi)) < 1e-14
