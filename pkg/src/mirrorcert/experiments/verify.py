"""Verification battery experiment."""

from __future__ import annotations

from mirrorcert import io
from mirrorcert.config import ExperimentConfig, VerifyScale
from mirrorcert.experiments.base import Experiment, ExperimentOutcome
from mirrorcert.verify import run_battery


class VerifyExperiment(Experiment):
    """Randomised battery over every certificate."""

    def __init__(self, scale: VerifyScale | None = None) -> None:
        self.scale = scale

    @property
    def name(self) -> str:
        return "verify"

    @property
    def description(self) -> str:
        return "Run the randomised oracle and certificate battery."

    def run(self, cfg: ExperimentConfig) -> ExperimentOutcome:
        scale = VerifyScale.quick() if cfg.quick else (self.scale or VerifyScale())
        report = run_battery(scale, seed=cfg.seed)
        path = io.write_json(cfg.out_dir / "verify_report.json", report.to_dict())
        failed = [c.name for c in report.checks if c.ok is False]
        summary = f"{len(report.checks)} checks, {len(failed)} failed" + (f": {', '.join(failed)}" if failed else "")
        return ExperimentOutcome(
            summary=summary,
            artifacts={"report": path},
            checks={c.name: c.ok for c in report.checks},
        )
