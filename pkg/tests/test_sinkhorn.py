"""Tests for entropic transport, Sinkhorn and its certificates."""

import numpy as np
import pytest

from mirrorcert import io
from mirrorcert.divergences import NegEntropy, SinkhornMarginal
from mirrorcert.errors import DomainViolation, NotConverged, NotExponentialForm, RowOfZeroMass, ShapeMismatch
from mirrorcert.instances import random_eot_problem
from mirrorcert.measures import Coupling, DiscreteMeasure, marginal_x, marginal_y
from mirrorcert.mirror_descent import FixedMarginalY, MDConfig, md_step
from mirrorcert.oracles import reference_solution
from mirrorcert.sinkhorn import (
    TRACE_HEADER,
    EOTProblem,
    contraction_check,
    contraction_factor,
    dc,
    dual_objective,
    extract_potentials,
    half_step_rows,
    primal_objective,
    rate_certificate,
    reference_coupling,
    run_sinkhorn,
    sinkhorn_iteration,
    soft_c_transform_x,
    soft_c_transform_y,
    stability_check,
    step_cols,
)


class TestEOTProblem:
    def test_cost_shape(self):
        with pytest.raises(ShapeMismatch):
            EOTProblem(np.zeros((2, 3)), 1.0, DiscreteMeasure.uniform(2), DiscreteMeasure.uniform(2))

    def test_epsilon_positive(self):
        with pytest.raises(DomainViolation):
            EOTProblem(np.zeros((2, 2)), 0.0, DiscreteMeasure.uniform(2), DiscreteMeasure.uniform(2))

    def test_marginals_strictly_positive(self):
        with pytest.raises(DomainViolation):
            EOTProblem(np.zeros((2, 2)), 1.0, DiscreteMeasure.dirac(2, 0), DiscreteMeasure.uniform(2))

    def test_dict_form_reparses(self, eot_problem):
        again = EOTProblem.from_dict(eot_problem.to_dict())
        np.testing.assert_array_equal(again.cost, eot_problem.cost)
        assert again.mu == eot_problem.mu
        assert again.epsilon == eot_problem.epsilon

    def test_reference_has_unit_mass(self, eot_problem):
        assert reference_coupling(eot_problem).mass == pytest.approx(1.0)


class TestSinkhornIsMirrorDescent:
    def test_iteration_equals_entropic_step(self, rng):
        for _ in range(20):
            p = random_eot_problem(rng, 5, 4, float(rng.choice([0.1, 1.0, 10.0])))
            weights = rng.uniform(0.1, 1.0, size=(5, 4))
            pi = Coupling(weights * (p.nu.weights / weights.sum(axis=0)), probability=True)
            sinkhorn = sinkhorn_iteration(pi, p).weights
            mirror = md_step(SinkhornMarginal(p.mu), NegEntropy(), pi, MDConfig(L=1.0, constraint=FixedMarginalY(p.nu)))
            np.testing.assert_allclose(mirror.weights, sinkhorn, rtol=1e-12)


class TestProjections:
    def test_row_rescaling(self):
        pi = Coupling(np.array([[0.1, 0.3], [0.2, 0.4]]), probability=True)
        out = half_step_rows(pi, DiscreteMeasure.uniform(2))
        np.testing.assert_allclose(out.weights, [[0.125, 0.375], [1 / 6, 1 / 3]], rtol=1e-14)

    def test_column_rescaling(self):
        pi = Coupling(np.array([[0.1, 0.3], [0.2, 0.4]]), probability=True)
        out = step_cols(pi, DiscreteMeasure.uniform(2))
        np.testing.assert_allclose(out.weights, [[1 / 6, 0.3 / 1.4], [1 / 3, 0.4 / 1.4]], rtol=1e-14)

    def test_projection_onto_a_marginal_is_idempotent(self, rng, eot_problem):
        p = eot_problem
        pi = Coupling(rng.uniform(0.1, 1.0, size=p.shape))
        rows = half_step_rows(pi, p.mu)
        np.testing.assert_allclose(marginal_x(rows).weights, p.mu.weights, rtol=1e-14)
        np.testing.assert_allclose(half_step_rows(rows, p.mu).weights, rows.weights, rtol=1e-14)
        cols = step_cols(pi, p.nu)
        np.testing.assert_allclose(marginal_y(cols).weights, p.nu.weights, rtol=1e-14)

    def test_empty_row_rejected(self):
        pi = Coupling(np.array([[0.5, 0.5], [0.0, 0.0]]))
        with pytest.raises(RowOfZeroMass):
            half_step_rows(pi, DiscreteMeasure.uniform(2))


class TestRunSinkhorn:
    def test_zero_iterations(self, eot_problem):
        trace = run_sinkhorn(eot_problem, n_iters=0)
        assert len(trace) == 1
        assert trace.n_iters == 0

    def test_converges_and_descends(self, eot_problem):
        trace = run_sinkhorn(eot_problem, n_iters=200)
        assert trace.is_monotone()
        assert trace.records[-1].tv_x < 1e-10
        assert max(r.tv_y for r in trace.records) < 1e-14

    def test_half_step_matches_first_marginal(self, eot_problem):
        trace = run_sinkhorn(eot_problem, n_iters=3)
        np.testing.assert_allclose(marginal_x(trace.half_coupling(1)).weights, eot_problem.mu.weights, rtol=1e-13)

    def test_deterministic(self, eot_problem):
        assert run_sinkhorn(eot_problem, n_iters=20).rows() == run_sinkhorn(eot_problem, n_iters=20).rows()

    def test_initial_coupling_must_be_rescaled_reference(self, rng, eot_problem):
        with pytest.raises(NotExponentialForm):
            run_sinkhorn(eot_problem, pi0=Coupling(rng.uniform(0.1, 1.0, size=(6, 5))), n_iters=1)

    def test_reference_start(self, eot_problem):
        trace = run_sinkhorn(eot_problem, pi0=reference_coupling(eot_problem), n_iters=1)
        np.testing.assert_allclose(trace.coupling(0).weights, reference_coupling(eot_problem).weights, rtol=1e-12)

    def test_trace_csv(self, tmp_path, eot_problem):
        trace = run_sinkhorn(eot_problem, n_iters=4)
        trace.to_csv(tmp_path / "trace.csv")
        header, rows = io.read_csv(tmp_path / "trace.csv")
        assert tuple(header) == TRACE_HEADER
        assert [int(r[0]) for r in rows] == [0, 1, 2, 3, 4]


class TestPotentials:
    def test_potentials_rebuild_iterates(self, eot_problem):
        p = eot_problem
        trace = run_sinkhorn(p, n_iters=5)
        for n in range(len(trace)):
            rebuilt = trace.potentials(n).coupling(p.cost, p.epsilon, p.mu, p.nu)
            np.testing.assert_allclose(rebuilt.weights, trace.coupling(n).weights, rtol=1e-10)

    def test_gauge(self, eot_problem):
        pot = run_sinkhorn(eot_problem, n_iters=5).potentials(5)
        assert abs(float(pot.f @ eot_problem.mu.weights)) < 1e-12

    def test_g_is_soft_c_transform_of_f(self, eot_problem):
        p = eot_problem
        trace = run_sinkhorn(p, n_iters=5)
        for n in range(len(trace)):
            pot = trace.potentials(n)
            np.testing.assert_allclose(soft_c_transform_x(pot.f, p.mu, p.cost, p.epsilon), pot.g, atol=1e-12)

    def test_extract_matches_own_marginals(self, eot_problem):
        p = eot_problem
        pi = run_sinkhorn(p, n_iters=3).coupling(3)
        pot = extract_potentials(pi, p.cost, p.epsilon)
        rebuilt = pot.coupling(p.cost, p.epsilon, marginal_x(pi), marginal_y(pi))
        np.testing.assert_allclose(rebuilt.weights, pi.weights, rtol=1e-8)
        assert pot.residual < 1e-10

    def test_extract_rejects_zero_entries(self):
        pi = Coupling(np.array([[0.5, 0.0], [0.0, 0.5]]), probability=True)
        with pytest.raises(NotExponentialForm):
            extract_potentials(pi, np.zeros((2, 2)), 1.0)

    def test_strong_duality_at_convergence(self, eot_problem):
        p = eot_problem
        trace = run_sinkhorn(p, n_iters=300)
        primal = primal_objective(p, trace.final)
        dual = dual_objective(p, trace.potentials(trace.n_iters))
        assert primal == pytest.approx(dual, abs=1e-8)


class TestContraction:
    def test_factor_below_one(self, eot_problem):
        assert 0.0 <= contraction_factor(eot_problem.cost, eot_problem.epsilon) < 1.0

    def test_cross_difference_values(self):
        assert dc(np.full((3, 4), 2.5)) == 0.0
        assert dc([[0.0, 1.0], [1.0, 0.0]]) == 1.0

    def test_additive_cost_has_zero_cross_difference(self, rng):
        a, b = rng.standard_normal(4), rng.standard_normal(3)
        assert dc(a[:, None] + b[None, :]) == pytest.approx(0.0, abs=1e-14)

    def test_random_pairs(self, rng):
        for eps in (0.1, 1.0, 10.0):
            p = random_eot_problem(rng, 6, 7, eps)
            for _ in range(30):
                result = contraction_check(rng.standard_normal(6), rng.standard_normal(6), p.mu, p.cost, p.epsilon)
                assert result.ok


class TestStability:
    def test_consecutive_iterates(self, eot_problem):
        trace = run_sinkhorn(eot_problem, n_iters=10)
        for n in range(10):
            assert stability_check(trace.coupling(n), trace.coupling(n + 1), eot_problem).ok


class TestRateCertificate:
    def test_rates_hold(self, rng):
        for eps in (0.1, 1.0, 10.0):
            p = random_eot_problem(rng, 6, 6, eps)
            trace = run_sinkhorn(p, n_iters=50)
            cert = rate_certificate(trace, reference_solution(p).solution)
            assert cert.sublinear_ok
            if eps >= 1.0:
                assert cert.linear_ok

    def test_unconverged_reference_rejected(self, eot_problem):
        trace = run_sinkhorn(eot_problem, n_iters=2)
        with pytest.raises(NotConverged):
            rate_certificate(trace, trace.coupling(0))

    def test_zero_cost_is_solved_at_start(self):
        p = EOTProblem(np.zeros((3, 4)), 1.0, DiscreteMeasure(np.array([0.2, 0.3, 0.5]), probability=True), DiscreteMeasure.uniform(4))
        trace = run_sinkhorn(p, n_iters=5)
        cert = rate_certificate(trace, reference_solution(p).solution)
        assert cert.ok
        assert max(r.kl_gap for r in cert.records) < 1e-15


class TestSoftCTransforms:
    def test_y_side_is_transposed_x_side(self, rng, eot_problem):
        p = eot_problem
        g = rng.standard_normal(p.shape[1])
        np.testing.assert_allclose(
            soft_c_transform_y(g, p.nu, p.cost, p.epsilon),
            soft_c_transform_x(g, p.nu, p.cost.T, p.epsilon),
            atol=1e-13,
        )

    def test_constant_shift_passes_through(self, rng, eot_problem):
        p = eot_problem
        f = rng.standard_normal(p.shape[0])
        np.testing.assert_allclose(
            soft_c_transform_x(f + 3.0, p.mu, p.cost, p.epsilon),
            soft_c_transform_x(f, p.mu, p.cost, p.epsilon) - 3.0,
            atol=1e-12,
        )
