"""Result files: result document, flat tables, markdown summary, seed table."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any

import yaml

from rwrelab import __version__
from rwrelab.config import ExperimentConfig
from rwrelab.env import spec_hash
from rwrelab.errors import UsageError
from rwrelab.experiments.base import ExperimentResult
from rwrelab.utils import ensure_dir, to_builtin
from rwrelab.walk import replica_seeds

SEED_RULE = "SeedSequence(master_seed, spawn_key=(replica, role)); role environment=0, walk=1, series=2"


def write_yaml(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_builtin(data), sort_keys=False, default_flow_style=None))
    return path


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path: Path, rows: list[dict[str, Any]], delimiter: str = "\t") -> Path:
    """Flat table with a header row; columns in first-seen order."""
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(to_builtin(row.get(c))) for c in columns])
    return path


def write_tables(tables_dir: Path, tables: dict[str, list[dict[str, Any]]]) -> list[Path]:
    ensure_dir(tables_dir)
    return [write_table(tables_dir / f"{name}.tsv", rows) for name, rows in tables.items() if rows]


def result_document(config: ExperimentConfig, cfg_hash: str, result: ExperimentResult) -> dict[str, Any]:
    return {
        "estimator": config.experiment,
        "model": config.spec.model.name,
        "model_hash": spec_hash(config.spec),
        "config_hash": cfg_hash,
        "version": __version__,
        "replicas": config.replicas,
        "master_seed": config.master_seed,
        "seed_rule": SEED_RULE,
        "success": result.success,
        "error_message": result.error_message,
        "criteria": dict(result.criteria),
        "passed": result.passed,
        "result": result.summary,
    }


def write_seeds(path: Path, master_seed: int, indices: list[int]) -> Path:
    rows = []
    for i in indices:
        env_seed, walk_seed = replica_seeds(master_seed, i)
        rows.append({"replica": i, "env_seed": env_seed, "walk_seed": walk_seed})
    return write_table(path, rows)


def generate_summary(run_dir: Path, config: ExperimentConfig, cfg_hash: str, result: ExperimentResult) -> Path:
    """Write a markdown summary report."""
    report_path = run_dir / "summary.md"
    lines: list[str] = []

    lines.append(f"# rwrelab: {config.experiment} run")
    lines.append("")
    lines.append("## Setup")
    lines.append(f"- **Model**: {config.spec.model.name} (d={config.spec.dim}, M={config.spec.range})")
    lines.append(f"- **Config hash**: `{cfg_hash[:12]}`")
    lines.append(f"- **Replicas**: {config.replicas}, master seed {config.master_seed}")
    lines.append(f"- **n-grid**: {config.n_grid[0]} .. {config.n_max} ({len(config.n_grid)} points)")
    lines.append("")

    lines.append("## Result")
    if not result.success:
        lines.append(f"FAILED: {result.error_message}")
    for key, val in result.summary.items():
        if isinstance(val, (dict, list)) and len(str(val)) > 120:
            continue
        lines.append(f"- **{key}**: {_cell(to_builtin(val))}")
    lines.append("")

    if result.criteria:
        lines.append("## Criteria")
        lines.append("")
        lines.append("| Criterion | Status |")
        lines.append("|-----------|--------|")
        for name, ok in result.criteria.items():
            lines.append(f"| {name} | {'PASS' if ok else 'FAIL'} |")
        lines.append("")

    if result.tables:
        lines.append("## Tables")
        for name, rows in result.tables.items():
            if rows:
                lines.append(f"- `tables/{name}.tsv` ({len(rows)} rows)")
        lines.append("")

    report_path.write_text("\n".join(lines))
    return report_path


def export_tables(run_dir: Path, dest: Path, fmt: str = "csv") -> list[Path]:
    """Copy every flat table of a run as CSV or TSV."""
    if fmt not in ("csv", "tsv"):
        raise UsageError(f"unknown table format {fmt!r}")
    ensure_dir(dest)
    out = []
    for src in sorted((run_dir / "tables").glob("*.tsv")):
        with src.open(newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        target = dest / f"{src.stem}.{fmt}"
        with target.open("w", newline="") as fh:
            csv.writer(fh, delimiter="," if fmt == "csv" else "\t", lineterminator="\n").writerows(rows)
        out.append(target)
    return out
