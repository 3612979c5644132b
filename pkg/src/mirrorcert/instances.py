"""Seeded random problem instances.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``; the
algorithm name and the numpy version are written into every instance
manifest so golden hashes can be traced to the generator that produced them.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from mirrorcert import io
from mirrorcert.errors import ConfigError, SizeTooLarge
from mirrorcert.measures import ConditionalKernel, DiscreteMeasure
from mirrorcert.em import LatentProblem
from mirrorcert.sinkhorn import EOTProblem

logger = logging.getLogger(__name__)

PRNG_NAME = "PCG64"
MAX_SIZE = 500
INSTANCE_KINDS = ("sinkhorn", "latent_em", "mmd_md")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def random_simplex_point(rng: np.random.Generator, n: int, concentration: float = 1.0) -> np.ndarray:
    """Dirichlet(concentration) sample, floored away from zero and renormalised."""
    point = rng.dirichlet(np.full(n, concentration))
    point = np.maximum(point, 1e-300)
    return point / point.sum()


def random_eot_problem(rng: np.random.Generator, n: int, m: int, epsilon: float = 1.0) -> EOTProblem:
    """U[0, 1] cost with Dirichlet(1) marginals."""
    cost = rng.uniform(0.0, 1.0, size=(n, m))
    mu = DiscreteMeasure(random_simplex_point(rng, n), probability=True)
    nu = DiscreteMeasure(random_simplex_point(rng, m), probability=True)
    return EOTProblem(cost=cost, epsilon=epsilon, mu=mu, nu=nu)


def random_kernel(rng: np.random.Generator, n: int, m: int) -> ConditionalKernel:
    """Row-stochastic matrix with Dirichlet(1) rows."""
    rows = rng.dirichlet(np.ones(m), size=n)
    rows = np.maximum(rows, 1e-300)
    return ConditionalKernel(rows / rows.sum(axis=1, keepdims=True))


def random_latent_problem(rng: np.random.Generator, n: int, m: int) -> LatentProblem:
    """Dirichlet kernel and observations, uniform initial latent distribution."""
    kernel = random_kernel(rng, n, m)
    nu = DiscreteMeasure(random_simplex_point(rng, m), probability=True)
    return LatentProblem(kernel=kernel, nu=nu, mu0=DiscreteMeasure.uniform(n))


def random_gram(rng: np.random.Generator, n: int, dim: int = 3, bandwidth: float = 1.0) -> np.ndarray:
    """Gaussian-kernel Gram matrix of n standard normal points in R^dim."""
    points = rng.standard_normal((n, dim))
    sq = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    gram = np.exp(-sq / (2.0 * bandwidth**2))
    return 0.5 * (gram + gram.T)


def _check_sizes(sizes: Sequence[int]) -> None:
    for size in sizes:
        if size < 1:
            raise ConfigError(f"instance sizes must be positive, got {list(sizes)}")
        if size > MAX_SIZE:
            raise SizeTooLarge(f"instance size {size} exceeds {MAX_SIZE}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_instance(
    kind: str,
    seed: int,
    sizes: Sequence[int],
    out_dir: Path,
    *,
    epsilon: float = 1.0,
) -> list[Path]:
    """Write a random problem of the given kind to out_dir.

    Args:
        kind: One of "sinkhorn", "latent_em", "mmd_md".
        seed: PCG64 seed.
        sizes: (n, m) for transport and latent problems, (n,) for MMD problems;
            a single size is used for both sides.
        out_dir: Target directory, created if missing.
        epsilon: Regularisation recorded in the manifest of transport problems.

    Returns:
        Paths of the written files; the manifest ``instance.json`` comes last.

    Raises:
        SizeTooLarge: If a size exceeds 500.
        ConfigError: On unknown kinds or non-positive sizes.
    """
    if kind not in INSTANCE_KINDS:
        raise ConfigError(f"unknown instance kind {kind!r}; expected one of {', '.join(INSTANCE_KINDS)}")
    sizes = list(sizes)
    if not sizes:
        raise ConfigError("at least one size is required")
    _check_sizes(sizes)
    n = sizes[0]
    m = sizes[1] if len(sizes) > 1 else n
    rng = make_rng(seed)
    out_dir = Path(out_dir)

    if kind == "sinkhorn":
        p = random_eot_problem(rng, n, m, epsilon)
        files = {
            "cost": io.write_json(out_dir / "cost.json", {"weights": p.cost.tolist()}),
            "mu": io.write_json(out_dir / "mu.json", p.mu.to_dict()),
            "nu": io.write_json(out_dir / "nu.json", p.nu.to_dict()),
        }
    elif kind == "latent_em":
        lp = random_latent_problem(rng, n, m)
        files = {
            "kernel": io.write_json(out_dir / "kernel.json", lp.kernel.to_dict()),
            "obs": io.write_json(out_dir / "obs.json", lp.nu.to_dict()),
            "init": io.write_json(out_dir / "init.json", lp.mu0.to_dict()),
        }
    else:
        gram = random_gram(rng, n)
        target = DiscreteMeasure(random_simplex_point(rng, n), probability=True)
        files = {
            "gram": io.write_json(out_dir / "gram.json", {"weights": gram.tolist()}),
            "target": io.write_json(out_dir / "target.json", target.to_dict()),
            "init": io.write_json(out_dir / "init.json", DiscreteMeasure.uniform(n).to_dict()),
        }

    manifest = {
        "kind": kind,
        "seed": seed,
        "sizes": [n, m] if kind != "mmd_md" else [n],
        "epsilon": epsilon if kind == "sinkhorn" else None,
        "prng": PRNG_NAME,
        "numpy": np.__version__,
        "files": {name: path.name for name, path in files.items()},
        "sha256": {path.name: _sha256(path) for path in files.values()},
    }
    manifest_path = io.write_json(out_dir / "instance.json", manifest)
    logger.info("wrote %s instance (seed %d, sizes %s) to %s", kind, seed, manifest["sizes"], out_dir)
    return [*files.values(), manifest_path]
