"""Instance generation experiment."""

from __future__ import annotations

from mirrorcert.config import ExperimentConfig
from mirrorcert.experiments.base import Experiment, ExperimentOutcome
from mirrorcert.instances import generate_instance


class GenExperiment(Experiment):
    """Write a seeded random problem to disk."""

    @property
    def name(self) -> str:
        return "gen"

    @property
    def description(self) -> str:
        return "Generate a random problem instance with a manifest."

    def run(self, cfg: ExperimentConfig) -> ExperimentOutcome:
        kind = (cfg.gen_kind or "").replace("-", "_")
        paths = generate_instance(kind, cfg.seed, cfg.sizes or [10], cfg.out_dir, epsilon=cfg.epsilon or 1.0)
        artifacts = {path.stem: path for path in paths}
        return ExperimentOutcome(summary=f"{kind} instance written to {cfg.out_dir}", artifacts=artifacts)
