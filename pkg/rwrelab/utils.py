"""Shared utilities: logging, seed streams, ordered worker pool, digests."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from rwrelab.errors import UsageError

logger = logging.getLogger("rwrelab")

T = TypeVar("T")
R = TypeVar("R")

# Role codes for derive_seed. Changing these changes every derived stream.
ROLES = {"environment": 0, "walk": 1, "series": 2}


def setup_logging(log_file: Path | None = None, verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    fmt = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format=fmt, handlers=handlers, force=True)


def ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def derive_seed(master_seed: int, replica_index: int, role: str) -> int:
    """Split a master seed into an independent 64-bit seed per (replica, role).

    The seed is the first uint64 word of
    ``SeedSequence(master_seed, spawn_key=(replica_index, ROLES[role]))``.
    """
    if role not in ROLES:
        raise ValueError(f"Unknown seed role: {role!r}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(replica_index), ROLES[role]))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def walk_rng(seed: int) -> np.random.Generator:
    """Counter-based stream used for every walk."""
    return np.random.Generator(np.random.Philox(int(seed)))


def zigzag(value: int) -> int:
    """Map a signed integer onto the non-negative integers (0, -1, 1, -2, ... -> 0, 1, 2, 3, ...)."""
    return 2 * value if value >= 0 else -2 * value - 1


def map_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply ``fn`` to every item, in a process pool when workers > 1.

    Results come back in input order, so downstream reductions do not depend
    on the worker count.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))


def chunked(indices: Sequence[int], size: int) -> list[list[int]]:
    return [list(indices[i : i + size]) for i in range(0, len(indices), size)]


def fsum_mean(rows: np.ndarray) -> np.ndarray:
    """Column means with compensated summation; rows are replicas."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    n = rows.shape[0]
    return np.array([math.fsum(col) / n for col in rows.T])


def fsum_cov(rows: np.ndarray, ddof: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of the rows plus per-entry standard errors."""
    rows = np.asarray(rows, dtype=float)
    n, d = rows.shape
    centred = rows - fsum_mean(rows)
    cov = np.zeros((d, d))
    stderr = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            prod = centred[:, i] * centred[:, j]
            cov[i, j] = cov[j, i] = math.fsum(prod) / (n - ddof)
            spread = float(np.std(prod, ddof=1)) if n > 1 else 0.0
            stderr[i, j] = stderr[j, i] = spread / math.sqrt(n)
    return cov, stderr


def canonical_json(data: Any) -> str:
    return json.dumps(data, separators=(",", ":"), sort_keys=False, default=_json_default)


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"Not JSON serialisable: {type(obj).__name__}")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def to_builtin(obj: Any) -> Any:
    """Recursively turn numpy containers/scalars into plain Python for YAML output."""
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def as_int_vector(x: Iterable[int] | int, dim: int, what: str = "site") -> tuple[int, ...]:
    """Normalise a lattice vector to a tuple of ints, checking the dimension."""
    if isinstance(x, (int, np.integer)):
        vec: tuple[int, ...] = (int(x),)
    else:
        vec = tuple(int(c) for c in x)
    if len(vec) != dim:
        raise UsageError(f"{what} {vec} has dimension {len(vec)}, environment has dimension {dim}")
    return vec
