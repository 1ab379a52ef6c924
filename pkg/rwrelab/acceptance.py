"""Acceptance suites: oracle equivalence plus calibrated finite-n envelopes.

Each criterion returns a :class:`CriterionResult` holding one :class:`Check`
per reported statistic (value and threshold side by side). Criteria that
exercise the harness go through :class:`~rwrelab.pipeline.Runner`, so their
evidence lands in content-addressed run directories under ``<out>/verify``.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from rwrelab.config import ExperimentConfig, build_config
from rwrelab.corrector import PhaseChain, build_phase_chain, exact_oracle, solve_limit, solve_resolvent
from rwrelab.env import spec_from_dict
from rwrelab.errors import RwreError, UsageError
from rwrelab.estimators import check_small_set, conditional_covariance, quenched_variance_curve, verify_minorization
from rwrelab.lil import cm_energy, random_k_element
from rwrelab.pipeline import RunManifest, Runner
from rwrelab.utils import walk_rng
from rwrelab.walk import simulate_annealed

logger = logging.getLogger("rwrelab")

EXACT_TOL = 1e-12
FIXTURE_SEED = 20240601


# -- Fixtures --


def _kernel(pairs: dict[int, float]) -> dict[str, Any]:
    return {"offsets": [[z] for z in pairs], "probs": list(pairs.values())}


PERIOD2 = {
    "dim": 1,
    "range": 1,
    "model": "periodic",
    "model_params": {"period": [2], "kernels": [_kernel({1: 0.8, -1: 0.2}), _kernel({1: 0.4, -1: 0.6})]},
}
DETERMINISTIC = {"dim": 1, "range": 1, "model": "deterministic", "model_params": {"kernel": _kernel({1: 0.7, -1: 0.3})}}
SRW1 = {"dim": 1, "range": 1, "model": "deterministic", "model_params": {"kernel": _kernel({1: 0.5, -1: 0.5})}}
SRW2 = {
    "dim": 2,
    "range": 1,
    "model": "deterministic",
    "model_params": {"kernel": {"offsets": [[1, 0], [-1, 0], [0, 1], [0, -1]], "probs": [0.25] * 4}},
}
BALANCED = {"dim": 1, "range": 2, "model": "balanced", "model_params": {"concentration": 1.0}}
LAZY_PERIOD2 = {
    "dim": 1,
    "range": 1,
    "model": "periodic",
    "model_params": {"period": [2], "kernels": [_kernel({0: 0.5, 1: 0.25, -1: 0.25}), _kernel({1: 0.5, -1: 0.5})]},
}

ORACLE_MODELS = {"period-2": PERIOD2, "deterministic": DETERMINISTIC, "srw-2d": SRW2}
EXACT_DIFFUSION = {"period-2": [[0.8]], "deterministic": [[0.84]], "srw-2d": [[0.5, 0.0], [0.0, 0.5]]}

# Odd step counts: on the period-2 oracle E X_n - n v is 0 for even n.
ODD_GRID = [11, 21, 51, 101, 201, 501, 1001]


def random_chains(count: int = 50, max_states: int = 16, seed: int = FIXTURE_SEED) -> list[PhaseChain]:
    """Irreducible random chains: a cycle through all states plus random sparse extra edges."""
    rng = walk_rng(seed)
    chains = []
    for _ in range(count):
        size = int(rng.integers(2, max_states + 1))
        weights = rng.random((size, size)) * (rng.random((size, size)) < 0.5)
        weights[np.arange(size), (np.arange(size) + 1) % size] += 0.1 + rng.random(size)
        chains.append(PhaseChain.from_transition(weights / weights.sum(axis=1, keepdims=True)))
    return chains


def centred_values(chain: PhaseChain, rng: np.random.Generator) -> np.ndarray:
    raw = rng.uniform(-1.0, 1.0, chain.n_states)
    return raw - chain.stationary @ raw


def period2_chain() -> PhaseChain:
    return build_phase_chain(spec_from_dict(PERIOD2))


# -- Results --


@dataclass
class Check:
    statistic: str
    value: str
    threshold: str
    passed: bool


@dataclass
class CriterionResult:
    number: int
    name: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0
    error: str = ""

    @property
    def passed(self) -> bool:
        return not self.error and bool(self.checks) and all(c.passed for c in self.checks)

    def add(self, statistic: str, value: float | str, threshold: str, passed: bool) -> None:
        text = f"{value:.4g}" if isinstance(value, float) else str(value)
        self.checks.append(Check(statistic, text, threshold, bool(passed)))


@dataclass
class VerifyReport:
    suite: str
    quick: bool
    results: list[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "quick": self.quick,
            "passed": self.passed,
            "criteria": [
                {
                    "number": r.number,
                    "name": r.name,
                    "passed": r.passed,
                    "error": r.error,
                    "checks": [vars(c) for c in r.checks],
                }
                for r in self.results
            ],
        }


# -- Criteria --


class Verifier:
    """Runs acceptance criteria; ``quick`` shrinks replica counts and n for smoke runs."""

    def __init__(self, out_dir: Path, quick: bool = False, workers: int = 1, extra_chains: list[PhaseChain] | None = None):
        self.out_dir = Path(out_dir) / "verify"
        self.quick = quick
        self.workers = workers
        self.extra_chains = list(extra_chains or [])

    def size(self, full: int, quick: int) -> int:
        return quick if self.quick else full

    def config(self, environment: dict[str, Any], experiment: str, **overrides: Any) -> ExperimentConfig:
        cfg = build_config({"environment": environment, "experiment": experiment, **overrides})
        cfg.workers = self.workers
        return cfg

    def run(self, config: ExperimentConfig, root: Path | None = None, resume: bool = True) -> tuple[RunManifest, Path]:
        runner = Runner(config, root or self.out_dir)
        return runner.run(resume=resume), runner.run_dir

    # 1
    def resolvent_exactness(self, result: CriterionResult, epsilons: tuple[float, ...] = (0.1, 1e-3)) -> None:
        rng = walk_rng(FIXTURE_SEED + 1)
        chains = [period2_chain(), *random_chains(self.size(50, 10)), *self.extra_chains]
        worst = {eps: 0.0 for eps in epsilons}
        worst_limit = worst_mean = 0.0
        for i, chain in enumerate(chains):
            try:
                g = np.array([0.4, -0.4]) if i == 0 else centred_values(chain, rng)
                for eps in epsilons:
                    worst[eps] = max(worst[eps], solve_resolvent(chain, g, eps).residual)
                sol = solve_limit(chain, g)
                worst_limit = max(worst_limit, sol.residual)
                worst_mean = max(worst_mean, abs(float(chain.stationary @ sol.h)))
            except RwreError as e:
                result.add(f"chain {i}", "error", "solvable", False)
                logger.warning("Resolvent criterion: chain %d rejected: %s", i, e)
        for eps, res in worst.items():
            result.add(f"max |(1+eps)h - Pi h - g| at eps={eps:g}", res, f"<= {EXACT_TOL:g}", res <= EXACT_TOL)
        result.add("max |(I - Pi)h - g| at eps=0", worst_limit, f"<= {EXACT_TOL:g}", worst_limit <= EXACT_TOL)
        result.add("max |stationary mean of h|", worst_mean, f"<= {EXACT_TOL:g}", worst_mean <= EXACT_TOL)
        result.add("chains checked", str(len(chains)), "-", True)

    # 2
    def decomposition_identity(self, result: CriterionResult) -> None:
        replicas, n = self.size(1000, 50), self.size(10_000, 2_000)
        for eps in (0.1, 0.0):
            cfg = self.config(PERIOD2, "decomposition", n_grid=[n], replicas=replicas, corrector={"epsilon": eps})
            manifest, run_dir = self.run(cfg)
            summary = _summary(run_dir)
            tol = 1e-9
            res = summary["max_identity_residual"]
            result.add(f"identity residual, eps={eps:g}", res, f"<= {tol:g}", res <= tol)
            if eps == 0:
                pos = summary["max_position_residual"]
                result.add("X_n - nv - W_n - M_n - R_n, eps=0", pos, f"<= {tol:g}", pos <= tol)

    # 3
    def diffusion_oracles(self, result: CriterionResult, replicas: int, n: int) -> None:
        for name, env in ORACLE_MODELS.items():
            cfg = self.config(env, "diffusion", n_grid=[n], replicas=replicas)
            manifest, run_dir = self.run(cfg)
            summary = _summary(run_dir)
            exact = np.array(EXACT_DIFFUSION[name])
            err = np.abs(np.array(summary["matrix"]) - exact)
            se = np.array(summary["stderr"])
            z = float(np.max(err / np.maximum(se, 1e-12)))
            result.add(f"{name}: max |D_hat - D| / SE", z, "<= 4", bool(manifest.passed) and z <= 4)
            oracle_err = float(np.max(np.abs(np.array(summary["exact"]) - exact)))
            result.add(f"{name}: exact D vs closed form", oracle_err, f"<= {EXACT_TOL:g}", oracle_err <= EXACT_TOL)

    # 4
    def ergodic_trace(self, result: CriterionResult) -> None:
        replicas, n = self.size(20, 4), self.size(100_000, 20_000)
        for name, env in ORACLE_MODELS.items():
            spec = spec_from_dict(env)
            chain, _, h, diffusion = exact_oracle(spec)
            trace = float(np.trace(diffusion))
            worst = 0.0
            for r in range(replicas):
                track = conditional_covariance(simulate_annealed(spec, n, FIXTURE_SEED, r), chain=chain, h=h)
                worst = max(worst, abs(track.traces[n] / n - trace) / trace)
            result.add(f"{name}: max |v_n^2/n - tr D| / tr D", worst, "<= 0.01", worst <= 0.01)

    # 5
    def quenched_exponent(self, result: CriterionResult) -> None:
        grid = ODD_GRID
        curve = quenched_variance_curve(spec_from_dict(PERIOD2), grid, 2, FIXTURE_SEED)
        ok = curve.fit.status.startswith("degenerate") or (curve.fit.status == "ok" and curve.fit.alpha <= 0.1)
        result.add("period-2: alpha_hat", curve.fit.alpha if curve.fit.status == "ok" else curve.fit.status,
                   "<= 0.1", ok)
        for name, env, reps in (("balanced", BALANCED, self.size(2, 1)), ("deterministic", DETERMINISTIC, 1)):
            fit = quenched_variance_curve(spec_from_dict(env), grid, reps, FIXTURE_SEED).fit
            result.add(f"{name}: fit status", fit.status, "degenerate (zero curve)", fit.status.startswith("degenerate"))

    # 6
    def lil_envelope(self, result: CriterionResult) -> None:
        replicas, stop = self.size(200, 40), self.size(1_000_000, 100_000)
        for name, env in (("srw-1d", SRW1), ("period-2 / sqrt(0.8)", PERIOD2)):
            cfg = self.config(env, "lil", n_grid={"start": 1000, "stop": stop, "points": 31}, replicas=replicas)
            manifest, run_dir = self.run(cfg)
            summary = _summary(run_dir)
            lo, hi = summary["thresholds"]["median"]
            result.add(f"{name}: median running max", summary["running_max_median"], f"in [{lo:g}, {hi:g}]",
                       lo <= summary["running_max_median"] <= hi)
            cap = summary["thresholds"]["max"]
            result.add(f"{name}: max running max", summary["running_max_max"], f"<= {cap:g}",
                       summary["running_max_max"] <= cap)

    # 7
    def strassen(self, result: CriterionResult) -> None:
        replicas = self.size(50, 10)
        stop = self.size(1_000_000, 100_000)
        limits = [10_000, 100_000, 1_000_000] if not self.quick else [1_000, 10_000, 100_000]
        cfg = self.config(
            SRW2, "cluster", n_grid={"start": 1000, "stop": stop, "points": 16}, replicas=replicas,
            cluster={"limits": limits, "probes": ["line", "diagonal"]},
        )
        manifest, run_dir = self.run(cfg)
        summary = _summary(run_dir)
        threshold = cfg.cluster.k_distance_threshold
        median = summary["k_distance_median_at_n_max"]
        result.add(f"median k-distance at n={cfg.n_max}", median, f"<= {threshold:g}", median <= threshold)
        for probe, frac in summary["monotone_fraction"].items():
            need = cfg.cluster.monotone_fraction
            result.add(f"probe {probe}: monotone fraction", frac, f">= {need:g}", frac >= need)

    # 8
    def k_geometry(self, result: CriterionResult) -> None:
        rng = walk_rng(FIXTURE_SEED + 8)
        count = self.size(10_000, 1_000)
        worst_sqrt = worst_sup = worst_scale = 0.0
        for i in range(count):
            path = random_k_element(rng, dim=1 + i % 3, segments=1 + i % 12)
            norms = np.linalg.norm(path.values, axis=1)
            worst_sqrt = max(worst_sqrt, float(np.max(norms - np.sqrt(path.times))))
            worst_sup = max(worst_sup, path.sup_norm())
            c = 0.25 + 2.0 * (i % 7) / 6
            energy = cm_energy(path)
            worst_scale = max(worst_scale, abs(cm_energy(path.scaled(c)) - c * c * energy) / max(c * c * energy, 1.0))
        result.add("max |f(t)| - sqrt(t) at breakpoints", worst_sqrt, f"<= {EXACT_TOL:g}", worst_sqrt <= EXACT_TOL)
        result.add("max sup |f|", worst_sup, f"<= 1 + {EXACT_TOL:g}", worst_sup <= 1 + EXACT_TOL)
        result.add("energy(cf) vs c^2 energy(f)", worst_scale, f"<= {EXACT_TOL:g}", worst_scale <= EXACT_TOL)

    # 9
    def small_set(self, result: CriterionResult) -> None:
        lazy = build_phase_chain(spec_from_dict(LAZY_PERIOD2))
        report = check_small_set(lazy)
        found = report.l == 2 and abs(report.lam - 0.5) <= EXACT_TOL
        result.add("lazy period-2: (l, lambda)", f"({report.l}, {report.lam:.6g})", "(2, 0.5)", found)
        violations = verify_minorization(lazy, 2, 0.5)
        result.add("lazy period-2: violating phase pairs", str(len(violations)), "0", not violations)
        strict = check_small_set(period2_chain())
        result.add("strict period-2: lambda (uniform mu)", strict.lam, "== 0", strict.lam == 0.0 and not strict.passed)

    # 10
    def determinism(self, result: CriterionResult) -> None:
        replicas = self.size(64, 16)
        digests: dict[int, dict[str, str]] = {}
        for workers in (1, 4, 8):
            cfg = self.config(PERIOD2, "drift", n_grid=[100, 1000], replicas=replicas, run={"chunk_size": 4})
            cfg.workers = workers
            manifest, _ = self.run(cfg, root=self.out_dir / "determinism" / f"workers-{workers}", resume=False)
            digests[workers] = manifest.digests
        tables = {w: {k: v for k, v in d.items() if k.startswith("tables/")} for w, d in digests.items()}
        same_tables = bool(tables[1]) and all(t == tables[1] for t in tables.values())
        same_all = all(d == digests[1] for d in digests.values())
        result.add("table digests across workers {1, 4, 8}", "identical" if same_tables else "differ", "identical",
                   same_tables)
        result.add("all result digests across workers", "identical" if same_all else "differ", "identical", same_all)


def _summary(run_dir: Path) -> dict[str, Any]:
    return yaml.safe_load((run_dir / "result.yaml").read_text())["result"]


CRITERIA: dict[int, tuple[str, Callable[[Verifier, CriterionResult], None]]] = {
    1: ("resolvent exactness", Verifier.resolvent_exactness),
    2: ("decomposition identity", Verifier.decomposition_identity),
    3: ("diffusion-matrix oracle equivalence",
        lambda v, r: v.diffusion_oracles(r, v.size(10_000, 1_000), v.size(10_000, 1_000))),
    4: ("ergodic trace limit", Verifier.ergodic_trace),
    5: ("quenched-variance exponent", Verifier.quenched_exponent),
    6: ("LIL envelope", Verifier.lil_envelope),
    7: ("Strassen containment and density", Verifier.strassen),
    8: ("K-geometry properties", Verifier.k_geometry),
    9: ("small-set checker", Verifier.small_set),
    10: ("determinism across worker counts", Verifier.determinism),
}

# Criterion 3 inside "oracles" runs at reduced size; the "diffusion" suite runs it in full.
REDUCED_DIFFUSION = (3, "diffusion-matrix oracle equivalence (reduced)",
                     lambda v, r: v.diffusion_oracles(r, 1_000, 1_000))

SUITES: dict[str, list[int]] = {
    "oracles": [1, 2, 3, 4, 5, 8, 9],
    "diffusion": [3],
    "lil-envelope": [6],
    "strassen": [7],
    "determinism": [10],
    "all": list(range(1, 11)),
}


def run_criterion(verifier: Verifier, number: int, name: str, fn: Callable[[Verifier, CriterionResult], None]) -> CriterionResult:
    result = CriterionResult(number, name)
    started = time.perf_counter()
    logger.info("Criterion %d: %s", number, name)
    try:
        fn(verifier, result)
    except RwreError as e:
        result.error = str(e)
        logger.error("Criterion %d failed with an error: %s", number, e)
    result.seconds = time.perf_counter() - started
    logger.info("Criterion %d %s in %.1fs", number, "passed" if result.passed else "FAILED", result.seconds)
    return result


def verify(suite: str, out_dir: Path, quick: bool = False, workers: int = 1,
           extra_chains: list[PhaseChain] | None = None) -> VerifyReport:
    """Run every criterion of an acceptance suite."""
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)}")
    verifier = Verifier(out_dir, quick, workers, extra_chains)
    results = []
    for number in SUITES[suite]:
        name, fn = CRITERIA[number]
        if suite == "oracles" and number == 3:
            _, name, fn = REDUCED_DIFFUSION
        results.append(run_criterion(verifier, number, name, fn))
    return VerifyReport(suite, quick, results)


def corrupted_chain() -> PhaseChain:
    """Period-2 chain with its first row pushed off the simplex (negative fixture)."""
    chain = period2_chain()
    broken = chain.transition.copy()
    broken[0, 1] += 0.05
    return PhaseChain(broken, chain.stationary.copy(), chain.ergodic)


__all__ = ["CRITERIA", "SUITES", "Check", "CriterionResult", "VerifyReport", "Verifier", "corrupted_chain", "verify"]
