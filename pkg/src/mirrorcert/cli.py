"""Command-line entry point."""

from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from mirrorcert import __version__
from mirrorcert.config import (
    EXPERIMENT_FILES,
    ExperimentConfig,
    RunDefaults,
    get_effective_defaults,
    load_config,
    load_experiment_file,
)
from mirrorcert.errors import ConfigError
from mirrorcert.experiments import ALL_EXPERIMENTS, VerifyExperiment
from mirrorcert.logging import setup_logging
from mirrorcert.registry import ExperimentRegistry, RunResult, run_experiment
from mirrorcert.ui import console, render_result

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Seed for random instances")
    common.add_argument("--out-dir", type=Path, help="Directory for traces, certificates and manifests")
    common.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, help="Console log level")
    common.add_argument("--log-file", type=Path, help="Append a JSONL run log to this file")
    common.add_argument("--config", type=Path, help="JSON or YAML file overriding the flags")
    return common


def _problem_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iters", type=int, default=100, help="Number of iterations (default: 100)")
    parser.add_argument("--trace-out", type=Path, help="Trace CSV path (default: <out-dir>/<kind>_trace.csv)")
    parser.add_argument("--certify", action="store_true", help="Certify the run and write a certificate JSON")
    parser.add_argument(
        "--size",
        type=int,
        nargs="+",
        metavar="N",
        help="Size of the random instance used when no problem files are given",
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="mirrorcert", description="Certified mirror descent experiments")
    parser.add_argument("--version", action="version", version=f"mirrorcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sinkhorn", parents=[common], help="Sinkhorn on an entropic transport problem")
    p.add_argument("--cost", type=Path, help="Cost matrix (JSON or CSV)")
    p.add_argument("--mu", type=Path, help="First marginal")
    p.add_argument("--nu", type=Path, help="Second marginal")
    p.add_argument("--epsilon", type=float, help="Entropic regularisation")
    _problem_flags(p)

    p = sub.add_parser("latent-em", parents=[common], help="Latent EM (Richardson-Lucy)")
    p.add_argument("--kernel", type=Path, help="Row-stochastic kernel matrix")
    p.add_argument("--gibbs-cost", type=Path, help="Cost matrix; the kernel is built as exp(-c/eps) nu")
    p.add_argument("--obs", type=Path, help="Observed distribution")
    p.add_argument("--init", type=Path, help="Initial latent distribution (default: uniform)")
    p.add_argument("--epsilon", type=float, help="Temperature for --gibbs-cost")
    _problem_flags(p)

    p = sub.add_parser("mmd-md", parents=[common], help="Mirror descent on MMD^2")
    p.add_argument("--gram", type=Path, help="Gram matrix")
    p.add_argument("--target", type=Path, help="Target distribution")
    p.add_argument("--init", type=Path, help="Initial distribution (default: uniform)")
    _problem_flags(p)

    p = sub.add_parser("verify", parents=[common], help="Run the randomised verification battery")
    p.add_argument("--quick", action="store_true", help="A few trials per check")

    p = sub.add_parser("gen", parents=[common], help="Generate a random problem instance")
    p.add_argument("kind", choices=["sinkhorn", "latent-em", "mmd-md"], help="Instance kind")
    p.add_argument("--size", type=int, nargs="+", default=[10], metavar="N", help="n [m] (default: 10)")
    p.add_argument("--epsilon", type=float, help="Regularisation recorded for transport instances")

    p = sub.add_parser("batch", parents=[common], help="Run several config files in a worker pool")
    p.add_argument("configs", type=Path, nargs="+", help="Experiment config files")
    p.add_argument("--workers", type=int, help="Worker threads")
    return parser


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------


def experiment_config(args: argparse.Namespace, defaults: RunDefaults) -> ExperimentConfig:
    """Build the config for a single-experiment subcommand; --config wins over flags."""
    kind = args.command.replace("-", "_")
    files = {
        name: getattr(args, name)
        for name in EXPERIMENT_FILES.get(kind, ())
        if getattr(args, name, None) is not None
    }
    cfg = ExperimentConfig(
        kind=kind,
        seed=args.seed if args.seed is not None else defaults.seed,
        out_dir=args.out_dir or Path(defaults.out_dir),
        iters=getattr(args, "iters", 100),
        epsilon=getattr(args, "epsilon", None),
        files=files,
        sizes=getattr(args, "size", None) or [],
        certify=getattr(args, "certify", False),
        trace_out=getattr(args, "trace_out", None),
        gen_kind=getattr(args, "kind", None) if kind == "gen" else None,
        quick=getattr(args, "quick", False),
        log_file=args.log_file or (Path(defaults.log_file) if defaults.log_file else None),
    )
    if args.config is not None:
        cfg = ExperimentConfig.from_mapping(load_experiment_file(args.config), base=cfg)
    return cfg


def batch_config(path: Path, defaults: RunDefaults, out_dir: Path) -> ExperimentConfig:
    """Config of one batch entry, isolated in <out_dir>/<file stem>."""
    data = load_experiment_file(path)
    base_out = Path(data.pop("out_dir", out_dir))
    data.setdefault("seed", defaults.seed)
    cfg = ExperimentConfig.from_mapping(data)
    cfg.out_dir = base_out / path.stem
    return cfg


def _run_batch(
    registry: ExperimentRegistry,
    args: argparse.Namespace,
    defaults: RunDefaults,
    log_file: Path | None,
) -> int:
    out_dir = args.out_dir or Path(defaults.out_dir)
    total = len(args.configs)

    def run_one(item: tuple[int, Path]) -> int:
        index, path = item
        try:
            cfg = batch_config(path, defaults, out_dir)
        except ConfigError as e:
            console.print(render_result(f"{path}: {e}", is_error=True))
            return e.exit_code
        return run_experiment(registry, cfg, index=index, total=total, log_file=log_file).exit_code

    workers = args.workers or defaults.workers
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        codes = list(pool.map(run_one, enumerate(args.configs, start=1)))
    return max(codes, default=0)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    """Entry point."""
    args = build_parser().parse_args(argv)

    config = load_config()
    try:
        defaults = get_effective_defaults(config)
    except ConfigError as e:
        console.print(render_result(str(e), is_error=True))
        return e.exit_code

    level = args.log_level or defaults.log_level
    try:
        setup_logging(level)
    except ValueError:
        console.print(render_result(f"unknown log level {level!r}", is_error=True))
        return 1

    registry = ExperimentRegistry([
        VerifyExperiment(config.verify) if e.name == "verify" else e for e in ALL_EXPERIMENTS
    ])
    log_file = args.log_file or (Path(defaults.log_file) if defaults.log_file else None)

    if args.command == "batch":
        return _run_batch(registry, args, defaults, log_file)

    try:
        cfg = experiment_config(args, defaults)
    except ConfigError as e:
        console.print(render_result(str(e), is_error=True))
        return e.exit_code
    result: RunResult = run_experiment(registry, cfg, log_file=cfg.log_file)
    return result.exit_code
