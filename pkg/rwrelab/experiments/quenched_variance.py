"""Quenched-variance curve E|E_0^omega X_n - n v|^2 over fresh environments and its exponent."""

from __future__ import annotations

import logging
from typing import Any

import numpy as np

from rwrelab.env import EnvironmentView
from rwrelab.errors import ResourceError
from rwrelab.estimators import curve_from_rows, quenched_center_deviation
from rwrelab.experiments.base import Experiment, ExperimentResult
from rwrelab.utils import derive_seed
from rwrelab.walk import quenched_mean

logger = logging.getLogger("rwrelab")


class QuenchedVarianceExperiment(Experiment):
    kind = "quenched-variance"

    def check(self) -> None:
        spec = self.spec
        bound = (2 * self.config.n_max * spec.range + 1) ** spec.dim
        if bound > self.config.quenched.max_sites:
            raise ResourceError(
                f"largest grid point n={self.config.n_max} needs up to {bound} sites, "
                f"budget is quenched.max_sites={self.config.quenched.max_sites}"
            )

    def replica(self, index: int) -> dict[str, Any]:
        env_seed = derive_seed(self.config.master_seed, index, "environment")
        env = EnvironmentView(self.spec.with_seed(env_seed))
        qm = quenched_mean(env, self.config.n_max, self.config.quenched.max_sites)
        grid = np.asarray(self.config.n_grid, dtype=np.int64)
        dev = qm.means[grid] - grid[:, None] * self.velocity[None, :]
        return {
            "index": int(index),
            "env_seed": env_seed,
            "squared_deviation": (dev**2).sum(axis=1).tolist(),
            "center_deviation": quenched_center_deviation(qm.means, self.velocity),
            "pruned_mass": qm.pruned_mass,
        }

    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult:
        rows = np.array([r["squared_deviation"] for r in results], dtype=float)
        curve = curve_from_rows(rows, self.config.n_grid, self.velocity)
        fit = curve.fit
        if fit.status != "ok":
            logger.info("Quenched-variance fit: %s", fit.status)
        summary = {
            "estimator": "quenched-variance",
            "env_replicas": curve.env_replicas,
            "measure": curve.measure,
            "v": self.velocity.tolist(),
            "v_source": self.velocity_source(),
            "fit_status": fit.status,
            "slope": fit.slope,
            "half_width": fit.half_width,
            "alpha_hat": fit.alpha,
            "fit_points": fit.used,
            "max_center_deviation": max(r["center_deviation"] for r in results),
            "max_pruned_mass": max(r["pruned_mass"] for r in results),
        }
        alpha_max = self.config.quenched.alpha_max
        criteria = {
            f"alpha_hat <= {alpha_max:g} or zero curve": fit.status.startswith("degenerate")
            or (fit.status == "ok" and fit.alpha <= alpha_max)
        }
        table = [{"n": n, "mean_squared_deviation": val} for n, val in curve.points]
        return ExperimentResult(True, summary, {"quenched_variance": table}, criteria)
