"""Configuration loading and validation."""

from __future__ import annotations

import logging
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from rwrelab.env import EnvironmentSpec, spec_from_dict, spec_to_dict
from rwrelab.errors import ConfigError
from rwrelab.utils import canonical_json, sha256_text

logger = logging.getLogger("rwrelab")

DEFAULT_CONFIG = Path(__file__).parent.parent / "configs" / "default.yaml"

KINDS = ("drift", "diffusion", "decomposition", "quenched-variance", "lil", "cluster", "small-set")


@dataclass
class CorrectorConfig:
    epsilon: float = 0.0  # 0 = limit corrector
    method: str = "exact"  # exact | series
    series_budget: int = 200
    series_tolerance: float = 1e-6


@dataclass
class QuenchedConfig:
    max_sites: int = 4_000_000
    centering: str = "annealed"  # annealed | quenched
    alpha_max: float = 0.1


@dataclass
class LilConfig:
    envelope_median: list[float] = field(default_factory=lambda: [0.7, 1.1])
    envelope_max: float = 2.5  # 200 replicas x 31-point grid on [1e3, 1e6]; see configs/default.yaml
    final_p95_max: float = 1.3
    scale_by_trace: bool = True


@dataclass
class ClusterConfig:
    probes: list[str] = field(default_factory=lambda: ["line", "diagonal"])
    limits: list[int] = field(default_factory=lambda: [10_000, 100_000, 1_000_000])
    k_distance_threshold: float = 0.35
    monotone_fraction: float = 0.8


@dataclass
class SmallSetConfig:
    l: int | None = None
    lam: float | None = None
    mu: list[float] | None = None
    l_max: int = 10


@dataclass
class RunConfig:
    chunk_size: int = 50
    resume: bool = True


@dataclass
class ExperimentConfig:
    environment: dict[str, Any] = field(default_factory=dict)
    experiment: str = "drift"
    n_grid: list[int] = field(default_factory=lambda: [1000])
    replicas: int = 100
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "results"
    velocity: list[float] | None = None
    corrector: CorrectorConfig = field(default_factory=CorrectorConfig)
    quenched: QuenchedConfig = field(default_factory=QuenchedConfig)
    lil: LilConfig = field(default_factory=LilConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    small_set: SmallSetConfig = field(default_factory=SmallSetConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @cached_property
    def spec(self) -> EnvironmentSpec:
        return spec_from_dict(self.environment)

    @property
    def n_max(self) -> int:
        return int(self.n_grid[-1])

    def scientific_dict(self) -> dict[str, Any]:
        """Everything that determines results (workers and output_dir excluded)."""
        data = to_dict(self)
        for key in HASH_EXCLUDED:
            data.pop(key)
        return data


# Fields left out of the hash do not change any output byte.
HASH_EXCLUDED = ("workers", "output_dir")


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Documented field order, environment normalised to its canonical form."""
    data = asdict(cfg)
    data["environment"] = spec_to_dict(cfg.spec)
    return data


def config_hash(cfg: ExperimentConfig) -> str:
    return sha256_text(canonical_json(cfg.scientific_dict()))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def _deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge override into base."""
    merged = base.copy()
    for key, val in override.items():
        if key == "environment":
            merged[key] = val
        elif key in merged and isinstance(merged[key], dict) and isinstance(val, dict):
            merged[key] = _deep_merge(merged[key], val)
        else:
            merged[key] = val
    return merged


def _key_lines(node: yaml.Node | None, prefix: str = "") -> dict[str, int]:
    """Dotted key path -> 1-based source line, from the composed YAML tree."""
    lines: dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            lines[path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, path))
    return lines


def _read_yaml(path: Path) -> tuple[dict[str, Any], dict[str, int]]:
    text = path.read_text()
    try:
        data = yaml.safe_load(text) or {}
        node = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"cannot parse {path}: {getattr(e, 'problem', e)}",
                          line=mark.line + 1 if mark else None) from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at top level", line=1)
    return data, _key_lines(node)


def _convert(ft: Any, val: Any, where: str, lines: dict[str, int]) -> Any:
    origin = typing.get_origin(ft)
    args = typing.get_args(ft)
    if origin is typing.Union or origin is types.UnionType:
        if val is None:
            return None
        ft = next(a for a in args if a is not type(None))
        return _convert(ft, val, where, lines)
    if is_dataclass(ft):
        if not isinstance(val, dict):
            raise ConfigError("expected a mapping", field=where, line=lines.get(where))
        return _dict_to_dataclass(ft, val, where, lines)
    if origin is list:
        if not isinstance(val, list):
            raise ConfigError("expected a list", field=where, line=lines.get(where))
        return [_convert(args[0], v, where, lines) for v in val]
    if origin is dict:
        return val
    try:
        if ft is bool:
            if not isinstance(val, bool):
                raise TypeError
            return val
        if ft is int:
            if isinstance(val, bool) or float(val) != int(val):
                raise TypeError
            return int(val)
        return ft(val)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected {ft.__name__}, got {val!r}", field=where, line=lines.get(where)) from e


def _dict_to_dataclass(cls: type, data: dict[str, Any], prefix: str = "", lines: dict[str, int] | None = None) -> Any:
    """Recursively convert a dict to a nested dataclass, rejecting unknown keys."""
    lines = lines or {}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        where = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(f"unknown key {key!r}", field=where, line=lines.get(where))
        kwargs[key] = _convert(hints[key], val, where, lines)
    return cls(**kwargs)


def _expand_grid(raw: Any, lines: dict[str, int]) -> Any:
    """n_grid may be a list or {start, stop, points}: log-spaced integers."""
    if not isinstance(raw, dict):
        return raw
    unknown = set(raw) - {"start", "stop", "points"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", field=f"n_grid.{key}", line=lines.get(f"n_grid.{key}"))
    try:
        start, stop, points = int(raw["start"]), int(raw["stop"]), int(raw["points"])
    except KeyError as e:
        raise ConfigError(f"missing key {e.args[0]!r}", field="n_grid", line=lines.get("n_grid")) from e
    if not 1 <= start < stop or points < 2:
        raise ConfigError("need 1 <= start < stop and points >= 2", field="n_grid", line=lines.get("n_grid"))
    grid = np.unique(np.rint(np.geomspace(start, stop, points)).astype(np.int64))
    return [int(n) for n in grid]


def validate(cfg: ExperimentConfig, lines: dict[str, int] | None = None) -> ExperimentConfig:
    lines = lines or {}

    def fail(msg: str, where: str) -> ConfigError:
        return ConfigError(msg, field=where, line=lines.get(where))

    if cfg.experiment not in KINDS:
        raise fail(f"unknown experiment {cfg.experiment!r}; expected one of {list(KINDS)}", "experiment")
    if not cfg.n_grid or any(n < 1 for n in cfg.n_grid) or any(b <= a for a, b in zip(cfg.n_grid, cfg.n_grid[1:])):
        raise fail("n_grid must be non-empty, >= 1 and strictly increasing", "n_grid")
    if cfg.replicas < 1:
        raise fail("replicas must be >= 1", "replicas")
    if cfg.workers < 1:
        raise fail("workers must be >= 1", "workers")
    if not 0 <= cfg.master_seed < 2**64:
        raise fail("master_seed must be a 64-bit unsigned integer", "master_seed")
    if cfg.corrector.method not in ("exact", "series"):
        raise fail("corrector.method must be 'exact' or 'series'", "corrector.method")
    if cfg.corrector.epsilon < 0:
        raise fail("corrector.epsilon must be >= 0", "corrector.epsilon")
    if cfg.quenched.centering not in ("annealed", "quenched"):
        raise fail("quenched.centering must be 'annealed' or 'quenched'", "quenched.centering")
    if cfg.run.chunk_size < 1:
        raise fail("run.chunk_size must be >= 1", "run.chunk_size")
    limits = cfg.cluster.limits
    if any(b <= a for a, b in zip(limits, limits[1:])):
        raise fail("cluster.limits must be strictly increasing", "cluster.limits")
    try:
        spec = cfg.spec
    except ConfigError as e:
        if e.line is None and e.field:
            where = e.field if e.field.startswith("environment") else f"environment.{e.field}"
            raise ConfigError(str(e).split(" [field")[0], field=where, line=lines.get(where)) from e
        raise
    if cfg.velocity is not None and len(cfg.velocity) != spec.dim:
        raise fail(f"velocity must have {spec.dim} components", "velocity")
    return cfg


def config_from_dict(data: dict[str, Any], lines: dict[str, int] | None = None) -> ExperimentConfig:
    lines = lines or {}
    data = dict(data)
    if "n_grid" in data:
        data["n_grid"] = _expand_grid(data["n_grid"], lines)
    return validate(_dict_to_dataclass(ExperimentConfig, data, "", lines), lines)


def _default_data() -> dict[str, Any]:
    if DEFAULT_CONFIG.exists():
        return yaml.safe_load(DEFAULT_CONFIG.read_text()) or {}
    return {}


def load_config(path: Path | None = None) -> ExperimentConfig:
    """Load config from YAML, merging with defaults."""
    base_data = _default_data()
    lines: dict[str, int] = {}
    if path:
        user_data, lines = _read_yaml(path)
        base_data = _deep_merge(base_data, user_data)

    return config_from_dict(base_data, lines)


def build_config(overrides: dict[str, Any]) -> ExperimentConfig:
    """Defaults merged with an in-memory mapping, validated like a file."""
    return config_from_dict(_deep_merge(_default_data(), overrides))


def apply_overrides(
    cfg: ExperimentConfig,
    workers: int | None = None,
    seed: int | None = None,
    out: Path | None = None,
) -> ExperimentConfig:
    if workers is not None:
        cfg.workers = workers
    if seed is not None:
        cfg.master_seed = seed
    if out is not None:
        cfg.output_dir = str(out)
    return validate(cfg)
