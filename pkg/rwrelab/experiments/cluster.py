"""Strassen cluster-set probes: distances of rescaled paths xi_n to K and to probe elements."""

from __future__ import annotations

import logging
from functools import cached_property
from typing import Any

import numpy as np

from rwrelab.env import EnvironmentView
from rwrelab.errors import ResourceError, UsageError
from rwrelab.estimators import conditional_covariance
from rwrelab.experiments.base import Experiment, ExperimentResult
from rwrelab.lil import (
    PiecewiseLinearPath,
    build_xi,
    cm_energy,
    k_distance_upper,
    lil_statistic,
    probe_by_name,
    strassen_report,
    sup_distance,
)
from rwrelab.walk import quenched_mean, simulate_annealed

logger = logging.getLogger("rwrelab")


class ClusterExperiment(Experiment):
    kind = "cluster"

    @cached_property
    def probes(self) -> dict[str, PiecewiseLinearPath]:
        return {name: probe_by_name(name, self.spec.dim) for name in self.config.cluster.probes}

    @property
    def limits(self) -> list[int]:
        return [int(lim) for lim in self.config.cluster.limits]

    def check(self) -> None:
        for name, probe in self.probes.items():
            if cm_energy(probe) > 1.0 + 1e-12:
                raise UsageError(f"probe {name!r} has energy > 1 and is not in K")
        if self.limits and (self.limits[0] < self.config.n_grid[0] or self.limits[-1] > self.config.n_max):
            raise UsageError("cluster.limits must lie within the n_grid range")
        if self.config.quenched.centering == "quenched":
            bound = (2 * self.config.n_max * self.spec.range + 1) ** self.spec.dim
            if bound > self.config.quenched.max_sites:
                raise ResourceError(
                    f"quenched centring needs (2nM+1)^d = {bound} sites, above quenched.max_sites = "
                    f"{self.config.quenched.max_sites}"
                )

    def replica(self, index: int) -> dict[str, Any]:
        spec = self.spec
        traj = simulate_annealed(spec, self.config.n_max, self.config.master_seed, index)
        if self.oracle is not None:
            chain, _, h, _ = self.oracle
            track = conditional_covariance(traj, chain=chain, h=h)
        else:
            track = conditional_covariance(traj)
        centre = None
        if self.config.quenched.centering == "quenched":
            centre = quenched_mean(EnvironmentView(traj.spec, traj.origin), traj.n, self.config.quenched.max_sites).means

        k_dist = []
        per_n: dict[str, list[float]] = {name: [] for name in self.probes}
        for n in self.config.n_grid:
            xi = build_xi(traj, self.velocity, track, n=n, quenched_centre=centre)
            k_dist.append(k_distance_upper(xi))
            for name, probe in self.probes.items():
                per_n[name].append(sup_distance(xi, probe))
        grid = np.asarray(self.config.n_grid)
        probe_distance = {
            name: [float(min(d for d, n in zip(dists, grid) if n <= lim)) for lim in self.limits]
            for name, dists in per_n.items()
        }
        stat = lil_statistic(traj, self.velocity, self.config.n_grid, centre=centre)
        return {
            "index": int(index),
            "k_distance": k_dist,
            "probe_distance": probe_distance,
            "lil_max": float(stat.running_max[-1]),
            "label": track.label,
        }

    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult:
        report = strassen_report(
            results,
            self.config.n_grid,
            self.limits,
            {"replicas": len(results), "master_seed": self.config.master_seed, "probes": list(self.probes)},
        )
        final = float(np.median(report.k_distance[self.config.n_max]))
        threshold = self.config.cluster.k_distance_threshold
        summary = {
            "estimator": "cluster",
            "replicas": len(results),
            "clock": results[0]["label"] if results else "",
            "centring": self.config.quenched.centering,
            "k_distance_median_at_n_max": final,
            "monotone_fraction": report.monotone_fraction,
            "lil_running_max_median": float(np.median(report.lil_running_max)),
        }
        criteria = {f"median k-distance at n={self.config.n_max} <= {threshold:g}": final <= threshold}
        for name, frac in report.monotone_fraction.items():
            criteria[f"probe {name}: nonincreasing over limits in >= {self.config.cluster.monotone_fraction:.0%}"] = (
                frac >= self.config.cluster.monotone_fraction
            )
        return ExperimentResult(True, summary, {"strassen": report.table(), "probes": report.probe_table()}, criteria)
