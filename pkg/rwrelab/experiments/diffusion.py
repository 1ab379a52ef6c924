"""Empirical diffusion matrix from annealed replicas vs the exact corrector-based value."""

from __future__ import annotations

import logging
from typing import Any

from rwrelab.errors import UsageError
from rwrelab.estimators import diffusion_from_endpoints
from rwrelab.experiments.base import ExperimentResult, within_se
from rwrelab.experiments.drift import CheckpointExperiment

logger = logging.getLogger("rwrelab")

SE_BAND = 4


class DiffusionExperiment(CheckpointExperiment):
    kind = "diffusion"

    def check(self) -> None:
        if self.config.replicas < 100:
            raise UsageError(f"diffusion needs at least 100 replicas, got {self.config.replicas}")

    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult:
        pos = self.positions(results)
        v = self.velocity
        exact = self.oracle[3] if self.oracle is not None else None
        rows = []
        final = None
        for j, n in enumerate(self.config.n_grid):
            est = diffusion_from_endpoints(pos[:, j, :], n, v)
            final = est
            for a in range(self.spec.dim):
                for b in range(self.spec.dim):
                    rows.append(
                        {
                            "n": n,
                            "i": a + 1,
                            "j": b + 1,
                            "estimate": float(est.matrix[a, b]),
                            "stderr": float(est.stderr[a, b]),
                            "exact": float(exact[a, b]) if exact is not None else "",
                        }
                    )
        summary = {
            "estimator": "diffusion",
            "n": final.n,
            "replicas": final.replicas,
            "v": v.tolist(),
            "v_source": self.velocity_source(),
            "matrix": final.matrix.tolist(),
            "stderr": final.stderr.tolist(),
            "exact": exact.tolist() if exact is not None else None,
        }
        criteria = {}
        if exact is not None:
            criteria[f"every entry within {SE_BAND} SE of the exact matrix"] = within_se(
                final.matrix, exact, final.stderr, SE_BAND
            )
        else:
            logger.info("No exact diffusion matrix for model %s; reporting the estimate only", self.spec.model.name)
        return ExperimentResult(True, summary, {"diffusion": rows}, criteria)
