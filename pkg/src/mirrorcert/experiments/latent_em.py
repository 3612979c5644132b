"""Latent EM experiment."""

from __future__ import annotations

import logging

from mirrorcert import io
from mirrorcert.config import ExperimentConfig
from mirrorcert.em import TRACE_HEADER, LatentProblem, em_rate_certificate, run_latent_em
from mirrorcert.errors import ConfigError
from mirrorcert.experiments.base import (
    Experiment,
    ExperimentOutcome,
    sizes_of,
    write_certificate,
    write_trace,
)
from mirrorcert.instances import make_rng, random_latent_problem
from mirrorcert.measures import DiscreteMeasure
from mirrorcert.oracles import reference_solution

logger = logging.getLogger(__name__)


def load_problem(cfg: ExperimentConfig) -> LatentProblem:
    """Problem from --kernel (or --gibbs-cost) and --obs, or a random one drawn from the seed."""
    files = cfg.files
    if not files:
        n, m = sizes_of(cfg, default=10)
        return random_latent_problem(make_rng(cfg.seed), n, m)
    if "obs" not in files:
        raise ConfigError("latent-em needs --obs")
    if ("kernel" in files) == ("gibbs_cost" in files):
        raise ConfigError("latent-em needs exactly one of --kernel and --gibbs-cost")

    nu = io.read_measure(files["obs"])
    if "kernel" in files:
        kernel = io.read_kernel(files["kernel"])
        n = kernel.shape[0]
    else:
        cost = io.read_array(files["gibbs_cost"])
        if cfg.epsilon is None:
            raise ConfigError("--gibbs-cost needs --epsilon")
        n = cost.shape[0]
    mu0 = io.read_measure(files["init"]) if "init" in files else DiscreteMeasure.uniform(n)

    if "kernel" in files:
        # degenerate kernels (zero entries) are allowed from files
        return LatentProblem(kernel=kernel, nu=nu, mu0=mu0, strict=False)
    return LatentProblem.from_gibbs_cost(cost, cfg.epsilon, nu, mu0)


class LatentEMExperiment(Experiment):
    """Richardson-Lucy iterations for a latent distribution."""

    @property
    def name(self) -> str:
        return "latent_em"

    @property
    def description(self) -> str:
        return "Run latent EM (Richardson-Lucy) and certify its 1/n rate."

    def run(self, cfg: ExperimentConfig) -> ExperimentOutcome:
        p = load_problem(cfg)
        trace = run_latent_em(p, n_iters=cfg.iters)
        artifacts = {"trace": write_trace(cfg, TRACE_HEADER, trace.rows())}
        final = trace.records[-1]
        summary = f"{cfg.iters} iterations, KL(nu|T_K mu) = {final.objective:.6e}"

        checks: dict[str, bool | None] = {}
        if cfg.certify:
            ref = reference_solution(p)
            cert = em_rate_certificate(trace, ref.solution, p)
            checks = {"monotone": trace.is_monotone(), "rate": cert.ok}
            data = {
                "problem": {"shape": list(p.shape)},
                "reference": {k: v for k, v in ref.to_dict().items() if k != "solution"},
                "rate": cert.to_dict(),
                "checks": checks,
                "ok": all(checks.values()),
            }
            artifacts["certificate"] = write_certificate(cfg, data)
            logger.info("latent em certificate: %s", checks)
        return ExperimentOutcome(summary=summary, artifacts=artifacts, checks=checks)
