"""Experiment registration and execution."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from mirrorcert import __version__, io
from mirrorcert.config import ExperimentConfig
from mirrorcert.errors import CertificateFailure, ConfigError, MirrorcertError
from mirrorcert.experiments import Experiment, ExperimentOutcome
from mirrorcert.logging import append_log
from mirrorcert.ui import console, render_checks, render_experiment_header, render_result

logger = logging.getLogger(__name__)


class ExperimentRegistry:
    """Experiment registration and lookup."""

    def __init__(self, experiments: list[Experiment]) -> None:
        self._experiments = {experiment.name: experiment for experiment in experiments}

    @property
    def names(self) -> list[str]:
        return list(self._experiments)

    def get(self, name: str) -> Experiment:
        """Look up an experiment.

        Raises:
            ConfigError: If no experiment has this name.
        """
        experiment = self._experiments.get(name)
        if experiment is None:
            raise ConfigError(f"unknown experiment: {name}")
        return experiment

    def run(self, cfg: ExperimentConfig) -> ExperimentOutcome:
        """Validate cfg and run the matching experiment."""
        cfg.validate()
        return self.get(cfg.kind).run(cfg)


@dataclass
class RunResult:
    kind: str
    exit_code: int
    message: str
    elapsed: float
    artifacts: dict[str, Path] = field(default_factory=dict)
    checks: dict[str, bool | None] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return {0: "ok", 1: "config_error", 2: "numeric_error", 3: "certificate_failed"}.get(self.exit_code, "error")


def run_experiment(
    registry: ExperimentRegistry,
    cfg: ExperimentConfig,
    *,
    index: int = 1,
    total: int = 1,
    log_file: Path | None = None,
) -> RunResult:
    """Run one experiment and map its outcome to an exit code.

    0 on success, 1 for configuration and I/O errors, 2 for numerical
    errors, 3 when a certificate did not hold. A run manifest with the
    config echo, library version and wall time is written to cfg.out_dir
    whenever the config was valid enough to name one.

    Args:
        registry: Experiment registry.
        cfg: Experiment configuration.
        index: Position in a batch, for display.
        total: Batch size, for display.
        log_file: Optional JSONL run log.

    Returns:
        RunResult with the exit code and the written artifacts.
    """
    console.print(render_experiment_header(cfg.kind, index, total))
    start = time.perf_counter()
    outcome: ExperimentOutcome | None = None
    try:
        outcome = registry.run(cfg)
        if not outcome.certified:
            failed = [name for name, ok in outcome.checks.items() if ok is False]
            raise CertificateFailure(f"{outcome.summary}; failed: {', '.join(failed)}")
        exit_code, message = 0, outcome.summary
    except MirrorcertError as e:
        exit_code, message = e.exit_code, f"{type(e).__name__}: {e}"
    except OSError as e:
        exit_code, message = 1, f"{type(e).__name__}: {e}"
    except Exception as e:
        logger.exception("experiment %s crashed", cfg.kind)
        exit_code, message = 2, f"Error: {type(e).__name__}: {e}"
    elapsed = time.perf_counter() - start

    result = RunResult(
        kind=cfg.kind,
        exit_code=exit_code,
        message=message,
        elapsed=elapsed,
        artifacts=dict(outcome.artifacts) if outcome else {},
        checks=dict(outcome.checks) if outcome else {},
    )
    if exit_code != 1:
        try:
            result.artifacts["manifest"] = io.write_json(cfg.out_dir / f"{cfg.kind}_manifest.json", {
                "kind": cfg.kind,
                "version": __version__,
                "config": cfg.to_dict(),
                "status": result.status,
                "exit_code": exit_code,
                "wall_time": elapsed,
                "artifacts": {name: str(path) for name, path in result.artifacts.items()},
            })
        except ConfigError as e:
            result.exit_code, result.message = 1, str(e)

    if result.checks:
        console.print(render_checks(f"{cfg.kind} certificates", result.checks))
    console.print(render_result(result.message, is_error=result.exit_code != 0))

    if log_file is not None:
        append_log(log_file, {
            "event": "experiment",
            "kind": cfg.kind,
            "status": result.status,
            "exit_code": result.exit_code,
            "elapsed": round(elapsed, 6),
            "message": result.message,
            "artifacts": {name: str(path) for name, path in result.artifacts.items()},
        })
    return result
