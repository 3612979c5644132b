"""Base class for experiments."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

from mirrorcert import io
from mirrorcert.config import ExperimentConfig
from mirrorcert.errors import ConfigError


@dataclass
class ExperimentOutcome:
    """What an experiment produced.

    ``checks`` maps certificate names to pass/fail; an empty mapping means
    nothing was certified.
    """

    summary: str
    artifacts: dict[str, Path] = field(default_factory=dict)
    checks: dict[str, bool | None] = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return all(ok is not False for ok in self.checks.values())


class Experiment(ABC):
    """Base class for experiments."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Experiment name, as used on the command line."""
        ...

    @property
    @abstractmethod
    def description(self) -> str:
        """One-line description."""
        ...

    @abstractmethod
    def run(self, cfg: ExperimentConfig) -> ExperimentOutcome:
        """Run the experiment and write its artifacts under cfg.out_dir."""
        ...


def require_files(cfg: ExperimentConfig, required: tuple[str, ...]) -> bool:
    """Whether problem files were given; a partial set is an error.

    Raises:
        ConfigError: If some but not all of the required files were given.
    """
    given = [name for name in required if name in cfg.files]
    if not given:
        return False
    missing = [name for name in required if name not in cfg.files]
    if missing:
        raise ConfigError(f"{cfg.kind} also needs --{' --'.join(missing)}")
    return True


def sizes_of(cfg: ExperimentConfig, default: int = 10) -> tuple[int, int]:
    n = cfg.sizes[0] if cfg.sizes else default
    m = cfg.sizes[1] if len(cfg.sizes) > 1 else n
    return n, m


def write_trace(cfg: ExperimentConfig, header: tuple[str, ...], rows: list[tuple]) -> Path:
    path = cfg.trace_out or cfg.out_dir / f"{cfg.kind}_trace.csv"
    return io.write_csv(path, header, rows)


def write_certificate(cfg: ExperimentConfig, data: dict) -> Path:
    return io.write_json(cfg.out_dir / f"{cfg.kind}_certificate.json", data)
