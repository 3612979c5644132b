"""Configuration file loading and management."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from mirrorcert.errors import ConfigError

EXPERIMENT_KINDS = ("sinkhorn", "latent_em", "mmd_md", "verify", "gen")

# Problem files each experiment may read
EXPERIMENT_FILES = {
    "sinkhorn": ("cost", "mu", "nu"),
    "latent_em": ("kernel", "obs", "init", "gibbs_cost"),
    "mmd_md": ("gram", "target", "init"),
    "verify": (),
    "gen": (),
}

MAX_SEED = 2**64 - 1


@dataclass
class RunDefaults:
    """Defaults shared by every experiment."""

    log_level: str = "WARNING"
    out_dir: str = "runs"
    seed: int = 0
    log_file: str | None = None
    workers: int = 1


@dataclass
class VerifyScale:
    """Trial counts of the verify battery."""

    md_instances: int = 100
    md_max_size: int = 50
    md_iters: int = 100
    md_refs: int = 10
    three_point_trials: int = 1000
    sinkhorn_md_instances: int = 200
    sinkhorn_md_max_size: int = 20
    sinkhorn_rate_instances: int = 50
    sinkhorn_rate_size: int = 10
    sinkhorn_rate_iters: int = 200
    contraction_instances: int = 20
    contraction_pairs: int = 1000
    em_instances: int = 50
    em_iters: int = 500
    mmd_grams: int = 10
    mmd_pairs: int = 500
    mmd_max_size: int = 30
    mmd_iters: int = 100
    identity_instances: int = 500
    oracle_instances: int = 200

    @classmethod
    def quick(cls) -> VerifyScale:
        """A few trials per check, for tests and smoke runs."""
        return cls(
            md_instances=5,
            md_max_size=10,
            md_iters=20,
            md_refs=2,
            three_point_trials=50,
            sinkhorn_md_instances=10,
            sinkhorn_md_max_size=6,
            sinkhorn_rate_instances=3,
            sinkhorn_rate_size=5,
            sinkhorn_rate_iters=30,
            contraction_instances=3,
            contraction_pairs=60,
            em_instances=3,
            em_iters=50,
            mmd_grams=2,
            mmd_pairs=40,
            mmd_max_size=8,
            mmd_iters=30,
            identity_instances=30,
            oracle_instances=10,
        )


@dataclass
class MirrorcertConfig:
    """Full configuration for mirrorcert."""

    defaults: RunDefaults = field(default_factory=RunDefaults)
    verify: VerifyScale = field(default_factory=VerifyScale)


def load_config() -> MirrorcertConfig:
    """Load and merge global + local config files.

    Global config: ~/.mirrorcert/config.yaml
    Local config: ./mirrorcert.yaml

    Local config overrides global config.

    Returns:
        MirrorcertConfig with merged settings.
    """
    config = MirrorcertConfig()

    # 1. Load global config
    global_config_path = Path.home() / ".mirrorcert" / "config.yaml"
    if global_config_path.exists():
        config = _merge_configs(config, _load_config_from_file(global_config_path))

    # 2. Load local config (overrides global)
    local_config_path = Path.cwd() / "mirrorcert.yaml"
    if local_config_path.exists():
        config = _merge_configs(config, _load_config_from_file(local_config_path))

    return config


def _known(cls: type, data: Any) -> dict:
    """Keys of data that are fields of the dataclass cls."""
    if not isinstance(data, dict):
        return {}
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names and v is not None}


def _merge_configs(base: MirrorcertConfig, override: dict) -> MirrorcertConfig:
    """Merge parsed file sections into a config, with the file taking precedence.

    Args:
        base: Base configuration.
        override: Parsed YAML document.

    Returns:
        Merged configuration.
    """
    defaults = replace(base.defaults, **_known(RunDefaults, override.get("defaults")))
    verify = replace(base.verify, **_known(VerifyScale, override.get("verify")))
    return MirrorcertConfig(defaults=defaults, verify=verify)


def _load_config_from_file(path: Path) -> dict:
    """Load a YAML config file; unreadable or malformed files count as empty.

    Args:
        path: Path to the YAML config file.

    Returns:
        The parsed document, or an empty dict.
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except Exception:
        return {}

    if not data or not isinstance(data, dict):
        return {}
    return data


def get_effective_defaults(config: MirrorcertConfig) -> RunDefaults:
    """Get effective run defaults with environment variable overrides.

    Environment variables (override YAML):
    - MIRRORCERT_LOG_LEVEL: Logging level name
    - MIRRORCERT_OUT_DIR: Output directory
    - MIRRORCERT_SEED: Default seed

    Args:
        config: Loaded configuration.

    Returns:
        RunDefaults with environment variable overrides applied.

    Raises:
        ConfigError: If MIRRORCERT_SEED is not an integer.
    """
    defaults = replace(config.defaults)

    if env_level := os.environ.get("MIRRORCERT_LOG_LEVEL"):
        defaults.log_level = env_level.upper()

    if env_out := os.environ.get("MIRRORCERT_OUT_DIR"):
        defaults.out_dir = env_out

    if env_seed := os.environ.get("MIRRORCERT_SEED"):
        try:
            defaults.seed = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"MIRRORCERT_SEED must be an integer, got {env_seed!r}") from e

    return defaults


def load_experiment_file(path: Path) -> dict:
    """Read a --config file (YAML or JSON).

    Unlike the global config files, a bad experiment file is an error.

    Raises:
        ConfigError: If the file cannot be read or is not a mapping.
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


@dataclass
class ExperimentConfig:
    """One experiment invocation."""

    kind: str
    seed: int = 0
    out_dir: Path = Path("runs")
    iters: int = 100
    epsilon: float | None = None
    files: dict[str, Path] = field(default_factory=dict)
    sizes: list[int] = field(default_factory=list)
    certify: bool = False
    trace_out: Path | None = None
    gen_kind: str | None = None
    quick: bool = False
    log_file: Path | None = None

    @classmethod
    def from_mapping(cls, data: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
        """Overlay a mapping (e.g. a --config document) on base.

        Keys are the field names; kind may be spelled with a dash.

        Raises:
            ConfigError: On unknown keys or values of the wrong type.
        """
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = asdict(base) if base is not None else {}
        values.update(data)
        if "kind" not in values:
            raise ConfigError("config needs a 'kind'")
        try:
            return cls(
                kind=str(values["kind"]).replace("-", "_"),
                seed=int(values.get("seed", 0)),
                out_dir=Path(values.get("out_dir", "runs")),
                iters=int(values.get("iters", 100)),
                epsilon=None if values.get("epsilon") is None else float(values["epsilon"]),
                files={k: Path(v) for k, v in (values.get("files") or {}).items() if v is not None},
                sizes=[int(s) for s in values.get("sizes") or []],
                certify=bool(values.get("certify", False)),
                trace_out=None if values.get("trace_out") is None else Path(values["trace_out"]),
                gen_kind=values.get("gen_kind"),
                quick=bool(values.get("quick", False)),
                log_file=None if values.get("log_file") is None else Path(values["log_file"]),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid config value: {e}") from e

    def validate(self) -> None:
        """Check the config before anything runs.

        Raises:
            ConfigError: On an unknown kind, a seed outside [0, 2^64 - 1],
                non-positive iterations or epsilon, unknown or missing files.
        """
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(EXPERIMENT_KINDS)}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.iters < 1:
            raise ConfigError(f"iters must be positive, got {self.iters}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        allowed = EXPERIMENT_FILES[self.kind]
        for name, path in self.files.items():
            if name not in allowed:
                raise ConfigError(f"{self.kind} does not read a '{name}' file")
            if not Path(path).is_file():
                raise ConfigError(f"file not found: {path}")
        if self.kind == "gen" and self.gen_kind is None:
            raise ConfigError("gen needs an instance kind")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["out_dir"] = str(self.out_dir)
        data["files"] = {k: str(v) for k, v in self.files.items()}
        data["trace_out"] = None if self.trace_out is None else str(self.trace_out)
        data["log_file"] = None if self.log_file is None else str(self.log_file)
        return data
