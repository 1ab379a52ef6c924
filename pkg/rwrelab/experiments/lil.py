"""LIL statistic |X_n - n v| / sqrt(2 n loglog n): running maxima checked against envelopes."""

from __future__ import annotations

import logging
import math
from typing import Any

import numpy as np

from rwrelab.experiments.base import ExperimentResult
from rwrelab.experiments.drift import CheckpointExperiment
from rwrelab.lil import lil_statistic_from_positions

logger = logging.getLogger("rwrelab")


class LilExperiment(CheckpointExperiment):
    kind = "lil"

    def run_chunk(self, indices: list[int]) -> list[dict[str, Any]]:
        out = []
        for r in super().run_chunk(indices):
            stat = lil_statistic_from_positions(np.array(r["positions"]), self.velocity, self.config.n_grid)
            out.append({"index": r["index"], "values": stat.values.tolist(), "running_max": float(stat.running_max[-1])})
        return out

    def scale(self) -> tuple[float, str]:
        """sqrt(tr D) when the exact diffusion matrix is known and scaling is on."""
        if self.config.lil.scale_by_trace and self.oracle is not None:
            trace = float(np.trace(self.oracle[3]))
            if trace > 0:
                return math.sqrt(trace), "sqrt(tr D)"
        return 1.0, "none"

    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult:
        scale, scale_label = self.scale()
        maxima = np.array([r["running_max"] for r in results]) / scale
        values = np.array([r["values"] for r in results]) / scale
        lo, hi = self.config.lil.envelope_median
        median = float(np.median(maxima))
        final_p95 = float(np.percentile(values[:, -1], 95))
        summary = {
            "estimator": "lil",
            "replicas": len(results),
            "n_range": [self.config.n_grid[0], self.config.n_max],
            "grid_points": len(self.config.n_grid),
            "v": self.velocity.tolist(),
            "scale": scale,
            "scale_label": scale_label,
            "running_max_median": median,
            "running_max_max": float(np.max(maxima)),
            "final_p95": final_p95,
            "thresholds": {
                "median": [lo, hi],
                "max": self.config.lil.envelope_max,
                "final_p95": self.config.lil.final_p95_max,
            },
        }
        criteria = {
            f"replica median of running max in [{lo:g}, {hi:g}]": lo <= median <= hi,
            f"replica max of running max <= {self.config.lil.envelope_max:g}": float(np.max(maxima))
            <= self.config.lil.envelope_max,
            f"95th percentile at n={self.config.n_max} <= {self.config.lil.final_p95_max:g}": final_p95
            <= self.config.lil.final_p95_max,
        }
        table = [
            {
                "n": n,
                "median": float(np.median(values[:, j])),
                "p95": float(np.percentile(values[:, j], 95)),
                "max": float(np.max(values[:, j])),
            }
            for j, n in enumerate(self.config.n_grid)
        ]
        logger.info("LIL running max: median %.4f, max %.4f (scale %s)", median, float(np.max(maxima)), scale_label)
        return ExperimentResult(True, summary, {"lil": table}, criteria)
