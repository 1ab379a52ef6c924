"""Minorization check Pi^l >= lam mu on the finite environment chain."""

from __future__ import annotations

from functools import cached_property
from typing import Any

from rwrelab.corrector import PhaseChain, build_phase_chain, export_chain
from rwrelab.estimators import check_small_set
from rwrelab.experiments.base import Experiment, ExperimentResult


class SmallSetExperiment(Experiment):
    kind = "small-set"

    @cached_property
    def chain(self) -> PhaseChain:
        return build_phase_chain(self.spec)

    def check(self) -> None:
        _ = self.chain

    def replica_indices(self) -> list[int]:
        # Deterministic check: one unit of work regardless of the replica count.
        return [0]

    def replica(self, index: int) -> dict[str, Any]:
        cfg = self.config.small_set
        report = check_small_set(self.chain, cfg.l, cfg.lam, cfg.mu, cfg.l_max)
        return {
            "passed": report.passed,
            "l": report.l,
            "lam": report.lam,
            "mu": report.mu,
            "violations": [list(v) for v in report.violations],
            "lam_by_l": {str(k): v for k, v in report.lam_by_l.items()},
            "message": report.message,
        }

    def aggregate(self, results: list[dict[str, Any]]) -> ExperimentResult:
        report = results[0]
        summary = {"estimator": "small-set", **report, "chain": export_chain(self.chain)}
        tables = {
            "small_set": [{"l": int(k), "lambda": v} for k, v in report["lam_by_l"].items()],
            "violations": [
                {"p": p, "q": q, "value": val, "bound": bound} for p, q, val, bound in report["violations"]
            ],
        }
        return ExperimentResult(True, summary, tables, {"minorization holds": report["passed"]})
