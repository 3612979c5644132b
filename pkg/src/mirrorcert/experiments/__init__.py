"""Experiment implementations."""

from mirrorcert.experiments.base import Experiment, ExperimentOutcome
from mirrorcert.experiments.gen import GenExperiment
from mirrorcert.experiments.latent_em import LatentEMExperiment
from mirrorcert.experiments.mmd_md import MMDMirrorDescentExperiment
from mirrorcert.experiments.sinkhorn import SinkhornExperiment
from mirrorcert.experiments.verify import VerifyExperiment

ALL_EXPERIMENTS: list[Experiment] = [
    SinkhornExperiment(),
    LatentEMExperiment(),
    MMDMirrorDescentExperiment(),
    VerifyExperiment(),
    GenExperiment(),
]

ALL_EXPERIMENTS_BY_NAME: dict[str, Experiment] = {e.name: e for e in ALL_EXPERIMENTS}

__all__ = [
    "Experiment",
    "ExperimentOutcome",
    "SinkhornExperiment",
    "LatentEMExperiment",
    "MMDMirrorDescentExperiment",
    "VerifyExperiment",
    "GenExperiment",
    "ALL_EXPERIMENTS",
    "ALL_EXPERIMENTS_BY_NAME",
]
