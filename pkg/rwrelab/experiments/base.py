"""Base class for experiment plug-ins."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, ClassVar

import numpy as np

from rwrelab.config import ExperimentConfig
from rwrelab.corrector import build_phase_chain, exact_oracle
from rwrelab.env import EnvironmentSpec, annealed_mean_drift, phase_table
from rwrelab.walk import replica_seeds


@dataclass
class ExperimentResult:
    """Uniform result from any experiment."""

    success: bool
    summary: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    criteria: dict[str, bool] = field(default_factory=dict)
    error_message: str = ""

    @property
    def passed(self) -> bool:
        return self.success and all(self.criteria.values())


class Experiment(ABC):
    """One experiment kind: per-replica work plus an order-independent aggregate.

    ``run_chunk`` executes in worker processes, so instances must pickle and
    its return value must be JSON-serialisable (chunks are persisted as JSON).
    """

    kind: ClassVar[str] = ""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    @property
    def spec(self) -> EnvironmentSpec:
        return self.config.spec

    def check(self) -> None:
        """Raise if the experiment cannot run on this model."""

    def replica_indices(self) -> list[int]:
        return list(range(self.config.replicas))

    def replica_seeds(self, index: int) -> tuple[int, int]:
        return replica_seeds(self.config.master_seed, index)

    def run_chunk(self, indices: list[int]) -> list[dict[str, Any]]:
        return [self.replica(i) for i in indices]

    @abstractmethod
    def replica(self, index: int) -> dict[str, Any]: ...

    @abstractmethod
    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult: ...

    # -- shared model facts --

    @property
    def finite(self) -> bool:
        return phase_table(self.spec) is not None

    @cached_property
    def oracle(self) -> tuple[Any, np.ndarray, Any, np.ndarray] | None:
        """(chain, v, limit corrector, exact diffusion matrix) for finite-state models."""
        return exact_oracle(self.spec) if self.finite else None

    @cached_property
    def velocity(self) -> np.ndarray:
        """Configured v, else the stationary drift, else the annealed mean drift."""
        if self.config.velocity is not None:
            return np.array(self.config.velocity, dtype=float)
        if self.finite:
            return build_phase_chain(self.spec).mean_drift()
        return annealed_mean_drift(self.spec)

    def velocity_source(self) -> str:
        if self.config.velocity is not None:
            return "config"
        return "stationary phase average" if self.finite else "annealed mean drift"


def within_se(estimate: Any, exact: Any, stderr: Any, k: float) -> bool:
    """|estimate - exact| <= k * stderr entrywise (with a rounding floor)."""
    est, ex, se = (np.asarray(a, dtype=float) for a in (estimate, exact, stderr))
    return bool(np.all(np.abs(est - ex) <= k * se + 1e-12))
