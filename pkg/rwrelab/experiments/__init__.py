"""Experiment plug-ins, one per experiment kind."""

from __future__ import annotations

from rwrelab.config import ExperimentConfig
from rwrelab.errors import UsageError
from rwrelab.experiments.base import Experiment, ExperimentResult
from rwrelab.experiments.cluster import ClusterExperiment
from rwrelab.experiments.decomposition import DecompositionExperiment
from rwrelab.experiments.diffusion import DiffusionExperiment
from rwrelab.experiments.drift import DriftExperiment
from rwrelab.experiments.lil import LilExperiment
from rwrelab.experiments.quenched_variance import QuenchedVarianceExperiment
from rwrelab.experiments.small_set import SmallSetExperiment

EXPERIMENTS: dict[str, type[Experiment]] = {
    cls.kind: cls
    for cls in (
        DriftExperiment,
        DiffusionExperiment,
        DecompositionExperiment,
        QuenchedVarianceExperiment,
        LilExperiment,
        ClusterExperiment,
        SmallSetExperiment,
    )
}


def make_experiment(config: ExperimentConfig) -> Experiment:
    try:
        return EXPERIMENTS[config.experiment](config)
    except KeyError:
        raise UsageError(f"unknown experiment {config.experiment!r}; expected one of {sorted(EXPERIMENTS)}") from None


__all__ = ["EXPERIMENTS", "Experiment", "ExperimentResult", "make_experiment"]
