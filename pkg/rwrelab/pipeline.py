"""Run orchestrator: chunked replica sweeps, crash-safe state, manifest and result files."""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from rwrelab import __version__
from rwrelab.config import ExperimentConfig, config_hash, dump_config
from rwrelab.errors import UsageError
from rwrelab.experiments import Experiment, ExperimentResult, make_experiment
from rwrelab.report import (
    SEED_RULE,
    generate_summary,
    result_document,
    write_seeds,
    write_tables,
    write_yaml,
)
from rwrelab.utils import chunked, ensure_dir, file_digest, map_ordered, setup_logging

logger = logging.getLogger("rwrelab")

STATE_FILE = "run_state.json"
MANIFEST_FILE = "manifest.yaml"


@dataclass
class RunManifest:
    config_hash: str
    version: str
    experiment: str
    status: str  # incomplete | complete | failed
    replicas: int
    chunks_total: int
    chunks_done: int
    seed_rule: str = SEED_RULE
    seeds_file: str = "seeds.tsv"
    passed: bool | None = None
    criteria: dict[str, bool] = field(default_factory=dict)
    digests: dict[str, str] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)  # excluded from determinism checks

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_manifest(path: Path) -> RunManifest:
    if path.is_dir():
        path = path / MANIFEST_FILE
    if not path.exists():
        raise UsageError(f"no manifest at {path}")
    data = yaml.safe_load(path.read_text()) or {}
    return RunManifest(**data)


def run_dir_for(config: ExperimentConfig, output_root: Path | None = None) -> Path:
    """Content-addressed run directory ``<out>/<kind>-<hash12>``."""
    root = Path(output_root) if output_root is not None else Path(config.output_dir)
    return root / f"{config.experiment}-{config_hash(config)[:12]}"


class Runner:
    def __init__(self, config: ExperimentConfig, output_root: Path | None = None):
        self.config = config
        self.hash = config_hash(config)
        self.run_dir = run_dir_for(config, output_root)
        self.partials_dir = self.run_dir / "partials"
        self.state_file = self.run_dir / STATE_FILE
        self.state: dict[str, Any] = {}

    def run(self, resume: bool | None = None, log_to_file: bool = False, verbose: bool = False) -> RunManifest:
        """Run the configured experiment, skipping chunks a previous run already finished."""
        resume = self.config.run.resume if resume is None else resume
        experiment = make_experiment(self.config)
        experiment.check()

        ensure_dir(self.run_dir)
        if log_to_file:
            setup_logging(self.run_dir / "logs" / "rwrelab.log", verbose)
        if not resume and self.run_dir.exists():
            logger.info("Restarting: discarding partial results in %s", self.run_dir)
            shutil.rmtree(self.partials_dir, ignore_errors=True)
            self.state_file.unlink(missing_ok=True)
        self.state = self._load_state()
        (self.run_dir / "config.yaml").write_text(dump_config(self.config))

        chunks = chunked(experiment.replica_indices(), self.config.run.chunk_size)
        started = time.time()
        manifest = RunManifest(
            self.hash, __version__, self.config.experiment, "incomplete", len(experiment.replica_indices()),
            len(chunks), sum(self._completed(i) for i in range(len(chunks))),
        )
        self._write_manifest(manifest)
        logger.info(
            "Experiment %s: %d replica(s) in %d chunk(s), %d already done",
            self.config.experiment, manifest.replicas, len(chunks), manifest.chunks_done,
        )

        self._run_chunks(experiment, chunks)
        results = [r for i in range(len(chunks)) for r in self._read_chunk(i)]
        result = experiment.aggregate(results)
        manifest.chunks_done = len(chunks)
        self._write_outputs(result, experiment.replica_indices())
        manifest.status = "complete" if result.success else "failed"
        manifest.passed = result.passed
        manifest.criteria = dict(result.criteria)
        manifest.digests = self._digests()
        manifest.timing = {"started": started, "finished": time.time(), "seconds": time.time() - started}
        self._write_manifest(manifest)
        logger.info("Run %s. Results in: %s", manifest.status, self.run_dir)
        return manifest

    # -- chunks --

    def _run_chunks(self, experiment: Experiment, chunks: list[list[int]]) -> None:
        pending = [i for i in range(len(chunks)) if not self._completed(i)]
        if not pending:
            return
        # One wave per pool round; each wave is persisted before the next starts.
        wave_size = max(1, self.config.workers)
        for start in range(0, len(pending), wave_size):
            wave = pending[start : start + wave_size]
            rows = map_ordered(experiment.run_chunk, [chunks[i] for i in wave], self.config.workers)
            for i, chunk_rows in zip(wave, rows):
                self._save_chunk(i, chunk_rows)

    def _chunk_path(self, i: int) -> Path:
        return self.partials_dir / f"chunk-{i:05d}.json"

    def _save_chunk(self, i: int, rows: list[dict[str, Any]]) -> None:
        ensure_dir(self.partials_dir)
        tmp = self._chunk_path(i).with_suffix(".tmp")
        tmp.write_text(json.dumps(rows))
        tmp.replace(self._chunk_path(i))
        self._mark(f"chunk-{i:05d}", "completed")
        logger.debug("Chunk %d done (%d replicas)", i, len(rows))

    def _read_chunk(self, i: int) -> list[dict[str, Any]]:
        return json.loads(self._chunk_path(i).read_text())

    # -- outputs --

    def _write_outputs(self, result: ExperimentResult, indices: list[int]) -> None:
        write_yaml(self.run_dir / "result.yaml", result_document(self.config, self.hash, result))
        write_tables(self.run_dir / "tables", result.tables)
        generate_summary(self.run_dir, self.config, self.hash, result)
        write_seeds(self.run_dir / "seeds.tsv", self.config.master_seed, indices)

    def _digests(self) -> dict[str, str]:
        files = [self.run_dir / "result.yaml", self.run_dir / "summary.md", self.run_dir / "seeds.tsv"]
        files += sorted((self.run_dir / "tables").glob("*.tsv"))
        return {str(p.relative_to(self.run_dir)): file_digest(p) for p in files if p.exists()}

    def _write_manifest(self, manifest: RunManifest) -> None:
        write_yaml(self.run_dir / MANIFEST_FILE, manifest.to_dict())

    # -- state --

    def _load_state(self) -> dict[str, Any]:
        if self.state_file.exists():
            state = json.loads(self.state_file.read_text())
            if state.get("config_hash") == self.hash:
                return state
            logger.warning("State file belongs to another config; starting over")
        return {"config_hash": self.hash, "chunks": {}}

    def _save_state(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.state_file.write_text(json.dumps(self.state, indent=2))

    def _completed(self, i: int) -> bool:
        return self.state["chunks"].get(f"chunk-{i:05d}") == "completed" and self._chunk_path(i).exists()

    def _mark(self, chunk: str, status: str) -> None:
        self.state["chunks"][chunk] = status
        self._save_state()


def run_experiment(config: ExperimentConfig, output_root: Path | None = None, resume: bool | None = None) -> tuple[RunManifest, Path]:
    runner = Runner(config, output_root)
    return runner.run(resume=resume), runner.run_dir
