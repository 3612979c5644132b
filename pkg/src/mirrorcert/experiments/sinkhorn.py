"""Sinkhorn experiment."""

from __future__ import annotations

import logging

from mirrorcert import io
from mirrorcert.config import ExperimentConfig
from mirrorcert.errors import ConfigError
from mirrorcert.experiments.base import (
    Experiment,
    ExperimentOutcome,
    require_files,
    sizes_of,
    write_certificate,
    write_trace,
)
from mirrorcert.instances import make_rng, random_eot_problem
from mirrorcert.oracles import reference_solution
from mirrorcert.sinkhorn import TRACE_HEADER, EOTProblem, SinkhornTrace, rate_certificate, run_sinkhorn, stability_check

logger = logging.getLogger(__name__)


def load_problem(cfg: ExperimentConfig) -> EOTProblem:
    """Problem from --cost/--mu/--nu, or a random one drawn from the seed."""
    if require_files(cfg, ("cost", "mu", "nu")):
        if cfg.epsilon is None:
            raise ConfigError("sinkhorn with problem files needs --epsilon")
        return EOTProblem(
            cost=io.read_array(cfg.files["cost"]),
            epsilon=cfg.epsilon,
            mu=io.read_measure(cfg.files["mu"]),
            nu=io.read_measure(cfg.files["nu"]),
        )
    n, m = sizes_of(cfg)
    return random_eot_problem(make_rng(cfg.seed), n, m, cfg.epsilon or 1.0)


def certify(trace: SinkhornTrace) -> tuple[dict, dict[str, bool]]:
    """Rate and stability certificates of a Sinkhorn trace.

    Stability is checked for every iterate against the reference optimum and
    for every pair of consecutive iterates.
    """
    p = trace.problem
    ref = reference_solution(p)
    rate = rate_certificate(trace, ref.solution)
    to_reference = [stability_check(trace.coupling(n), ref.solution, p) for n in range(len(trace))]
    consecutive = [stability_check(trace.coupling(n), trace.coupling(n + 1), p) for n in range(len(trace) - 1)]
    reports = to_reference + consecutive
    stability = {
        "constant": reports[0].constant,
        "pairs": {"reference": len(to_reference), "consecutive": len(consecutive)},
        "strong_convexity_ok": all(r.strong_convexity_ok for r in reports),
        "potential_ok": all(r.potential_ok for r in reports),
        "worst_kl_slack": min(r.kl_rhs - r.kl_lhs for r in reports),
        "worst_potential_slack": min(r.potential_rhs - r.potential_lhs for r in reports),
    }
    checks = {
        "monotone": trace.is_monotone(),
        "sublinear_rate": rate.sublinear_ok,
        "linear_rate": rate.linear_ok,
        "stability": stability["strong_convexity_ok"] and stability["potential_ok"],
    }
    data = {
        "problem": {"shape": list(p.shape), "epsilon": p.epsilon},
        "reference": {k: v for k, v in ref.to_dict().items() if k != "solution"},
        "rate": rate.to_dict(),
        "stability": stability,
        "checks": checks,
        "ok": all(checks.values()),
    }
    return data, checks


class SinkhornExperiment(Experiment):
    """Sinkhorn iterations as mirror descent on the first marginal."""

    @property
    def name(self) -> str:
        return "sinkhorn"

    @property
    def description(self) -> str:
        return "Run Sinkhorn on an entropic transport problem and certify its rate."

    def run(self, cfg: ExperimentConfig) -> ExperimentOutcome:
        p = load_problem(cfg)
        trace = run_sinkhorn(p, n_iters=cfg.iters)
        artifacts = {"trace": write_trace(cfg, TRACE_HEADER, trace.rows())}
        final = trace.records[-1]
        summary = f"{cfg.iters} iterations, KL(p_X pi|mu) = {final.objective:.3e}, TV_x = {final.tv_x:.3e}"

        checks: dict[str, bool | None] = {}
        if cfg.certify:
            data, checks = certify(trace)
            artifacts["certificate"] = write_certificate(cfg, data)
            logger.info("sinkhorn certificate: %s", checks)
        return ExperimentOutcome(summary=summary, artifacts=artifacts, checks=checks)
