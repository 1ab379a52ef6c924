"""Drift v from annealed replicas, checked against the stationary phase average."""

from __future__ import annotations

import logging
from typing import Any

import numpy as np

from rwrelab.estimators import drift_from_endpoints, exact_drift
from rwrelab.experiments.base import Experiment, ExperimentResult, within_se
from rwrelab.walk import simulate_checkpoints

logger = logging.getLogger("rwrelab")


class CheckpointExperiment(Experiment):
    """Replicas report X_n at every n of the grid."""

    def run_chunk(self, indices: list[int]) -> list[dict[str, Any]]:
        positions = simulate_checkpoints(self.spec, self.config.n_grid, self.config.master_seed, indices)
        return [{"index": int(i), "positions": pos.tolist()} for i, pos in zip(indices, positions)]

    def replica(self, index: int) -> dict[str, Any]:
        return self.run_chunk([index])[0]

    @staticmethod
    def positions(results: list[dict[str, Any]]) -> np.ndarray:
        """(replicas, grid points, d)."""
        return np.array([r["positions"] for r in results], dtype=float)


class DriftExperiment(CheckpointExperiment):
    kind = "drift"

    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult:
        if len(results) < 2:
            return ExperimentResult(success=False, error_message="drift needs at least 2 replicas")
        pos = self.positions(results)
        exact = exact_drift(self.spec)
        rows = []
        final = None
        for j, n in enumerate(self.config.n_grid):
            est = drift_from_endpoints(pos[:, j, :], n, exact)
            final = est
            for i in range(self.spec.dim):
                rows.append(
                    {
                        "n": n,
                        "coord": i + 1,
                        "v_hat": float(est.v_hat[i]),
                        "stderr": float(est.stderr[i]),
                        "exact": float(exact[i]) if exact is not None else "",
                    }
                )
        summary = {
            "estimator": "drift",
            "n": final.n,
            "replicas": final.replicas,
            "v_hat": final.v_hat.tolist(),
            "stderr": final.stderr.tolist(),
            "exact": exact.tolist() if exact is not None else None,
        }
        criteria = {}
        if exact is not None:
            criteria["v_hat within 3 SE of exact v"] = within_se(final.v_hat, exact, final.stderr, 3)
        logger.info("Drift at n=%d: %s (SE %s)", final.n, final.v_hat.round(6).tolist(), final.stderr.round(6).tolist())
        return ExperimentResult(True, summary, {"drift": rows}, criteria)
