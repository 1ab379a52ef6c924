"""Quenched and annealed walk simulation, exact quenched means, martingale part W_n."""

from __future__ import annotations

import logging
import math
import struct
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from rwrelab.env import (
    EnvironmentSpec,
    EnvironmentView,
    JumpKernel,
    kernel_at,
    kernel_at_absolute,
    phase_table,
)
from rwrelab.errors import ResourceError, UsageError
from rwrelab.utils import derive_seed, walk_rng

logger = logging.getLogger("rwrelab")

UNIFORM_BLOCK = 1 << 16
PRUNE_BELOW = 1e-15
DEFAULT_MAX_SITES = 4_000_000
BINARY_MAGIC = b"RWRT"
_HEADER = struct.Struct("<4sIQQQ")


@dataclass
class Trajectory:
    positions: np.ndarray  # (n + 1, d) int64, relative to origin, positions[0] == 0
    spec: EnvironmentSpec
    origin: tuple[int, ...]
    walk_seed: int

    @property
    def n(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def env_view(self) -> EnvironmentView:
        return EnvironmentView(self.spec, self.origin)

    def steps(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    def absolute_positions(self) -> np.ndarray:
        return self.positions + np.array(self.origin, dtype=np.int64)


@dataclass
class QuenchedMean:
    means: np.ndarray  # (n + 1, d): E_0^omega X_k
    pruned_mass: float
    max_support: int


# -- Simulation --


def simulate_quenched(env: EnvironmentView, n: int, walk_seed: int) -> Trajectory:
    """Run X_0 = 0, ..., X_n under P_0^omega, stepping from kernel_at at the current site."""
    if n < 0:
        raise UsageError(f"step count must be >= 0, got {n}")
    rng = walk_rng(walk_seed)
    table = phase_table(env.spec)
    if table is not None and all(p == 1 for p in table.period):
        positions = _homogeneous_walk(table.kernels[0], n, rng)
    else:
        positions = _site_walk(env, n, rng)
    return Trajectory(positions, env.spec, env.origin, int(walk_seed))


def _homogeneous_walk(kernel: JumpKernel, n: int, rng: np.random.Generator) -> np.ndarray:
    t = kernel.table
    u = rng.random(n)
    steps = t.step_array[np.searchsorted(t.cdf_array, u, side="right")]
    positions = np.zeros((n + 1, kernel.dim), dtype=np.int64)
    np.cumsum(steps, axis=0, out=positions[1:])
    return positions


def _site_walk(env: EnvironmentView, n: int, rng: np.random.Generator) -> np.ndarray:
    dim = env.spec.dim
    cache: dict[tuple[int, ...], tuple[tuple[float, ...], tuple[tuple[int, ...], ...]]] = {}
    x = (0,) * dim
    path = [x]
    done = 0
    while done < n:
        block = rng.random(min(UNIFORM_BLOCK, n - done)).tolist()
        for u in block:
            entry = cache.get(x)
            if entry is None:
                t = kernel_at(env, x).table
                entry = cache[x] = (t.cdf, t.steps)
            z = entry[1][bisect_right(entry[0], u)]
            x = tuple(a + b for a, b in zip(x, z))
            path.append(x)
        done += len(block)
    return np.array(path, dtype=np.int64).reshape(n + 1, dim)


def replica_seeds(master_seed: int, replica_index: int) -> tuple[int, int]:
    """(environment seed, walk seed) for one annealed replica."""
    return (
        derive_seed(master_seed, replica_index, "environment"),
        derive_seed(master_seed, replica_index, "walk"),
    )


def simulate_annealed(spec: EnvironmentSpec, n: int, master_seed: int, replica_index: int) -> Trajectory:
    """Fresh environment per replica, then a quenched walk in it."""
    env_seed, walk_seed = replica_seeds(master_seed, replica_index)
    return simulate_quenched(EnvironmentView(spec.with_seed(env_seed)), n, walk_seed)


def simulate_checkpoints(
    spec: EnvironmentSpec,
    checkpoints: Sequence[int],
    master_seed: int,
    replica_indices: Sequence[int],
) -> np.ndarray:
    """Annealed positions X_n at the given step counts, shape (replicas, checkpoints, d).

    Row r equals simulate_annealed(spec, max(checkpoints), master_seed,
    replica_indices[r]).positions[checkpoints]; only the execution differs.
    Periodic models are advanced in lockstep across replicas.
    """
    checks = np.asarray(checkpoints, dtype=np.int64)
    if checks.size == 0 or np.any(checks < 0) or np.any(np.diff(checks) <= 0):
        raise UsageError("checkpoints must be non-empty, non-negative and strictly increasing")
    n = int(checks[-1])
    table = phase_table(spec)
    out = np.zeros((len(replica_indices), len(checks), spec.dim), dtype=np.int64)
    if table is None or all(p == 1 for p in table.period):
        for r, idx in enumerate(replica_indices):
            out[r] = simulate_annealed(spec, n, master_seed, idx).positions[checks]
        return out

    rngs = [walk_rng(replica_seeds(master_seed, idx)[1]) for idx in replica_indices]
    cdf, steps = table.padded
    x = np.zeros((len(rngs), spec.dim), dtype=np.int64)
    slot = {int(c): i for i, c in enumerate(checks)}
    if 0 in slot:
        out[:, slot[0]] = x
    block = max(1, (1 << 20) // max(1, len(rngs)))
    step = 0
    while step < n:
        size = min(block, n - step)
        u = np.stack([rng.random(size) for rng in rngs])
        for j in range(size):
            ph = table.phases(x)
            idx = (cdf[ph] <= u[:, j, None]).sum(axis=1)
            x += steps[ph, idx]
            step += 1
            if step in slot:
                out[:, slot[step]] = x
    return out


# -- Exact quenched mean --


def quenched_mean(env: EnvironmentView, n: int, max_sites: int = DEFAULT_MAX_SITES) -> QuenchedMean:
    """E_0^omega X_k for k = 0..n by forward propagation of the site distribution."""
    if n < 0:
        raise UsageError(f"step count must be >= 0, got {n}")
    bound = (2 * n * env.spec.range + 1) ** env.spec.dim
    if bound > max_sites:
        raise ResourceError(
            f"quenched_mean support bound (2nM+1)^d = {bound} exceeds the budget of {max_sites} sites "
            f"(n={n}, M={env.spec.range}, d={env.spec.dim})"
        )
    dim = env.spec.dim
    dist: dict[tuple[int, ...], float] = {(0,) * dim: 1.0}
    cache: dict[tuple[int, ...], list[tuple[tuple[int, ...], float]]] = {}
    means = np.zeros((n + 1, dim))
    pruned = 0.0
    max_support = 1
    for k in range(1, n + 1):
        nxt: dict[tuple[int, ...], float] = defaultdict(float)
        for x, mass in dist.items():
            moves = cache.get(x)
            if moves is None:
                kern = kernel_at(env, x)
                moves = cache[x] = [(z, p) for z, p in zip(kern.offsets, kern.probs) if p > 0]
            for z, p in moves:
                nxt[tuple(a + b for a, b in zip(x, z))] += mass * p
        dist = {}
        for x, mass in nxt.items():
            if mass < PRUNE_BELOW:
                pruned += mass
            else:
                dist[x] = mass
        max_support = max(max_support, len(dist))
        for i in range(dim):
            means[k, i] = math.fsum(mass * x[i] for x, mass in dist.items())
    if pruned > 0:
        logger.debug("quenched_mean pruned total mass %.3e over %d steps", pruned, n)
    return QuenchedMean(means, pruned, max_support)


# -- Martingale part --


def visited_kernels(traj: Trajectory) -> tuple[list[JumpKernel], np.ndarray]:
    """Kernels at the distinct sites X_0..X_{n-1} and, per step, the index of its site."""
    if traj.n == 0:
        return [], np.zeros(0, dtype=np.int64)
    sites, inverse = np.unique(traj.absolute_positions()[:-1], axis=0, return_inverse=True)
    kernels = [kernel_at_absolute(traj.spec, tuple(int(c) for c in s)) for s in sites]
    return kernels, np.asarray(inverse).reshape(-1)


def check_steps(traj: Trajectory, kernels: list[JumpKernel], inverse: np.ndarray) -> None:
    """Every step X_k - X_{k-1} must lie in the support of the kernel at X_{k-1}."""
    if traj.n == 0:
        return
    radius = traj.spec.range
    base = 2 * radius + 1
    steps = traj.steps()
    if np.any(np.abs(steps) > radius):
        k = int(np.argmax(np.any(np.abs(steps) > radius, axis=1)))
        raise UsageError(f"step {k + 1} of the trajectory jumps by {steps[k].tolist()}, outside range {radius}")
    weights = base ** np.arange(traj.dim - 1, -1, -1)
    codes = ((steps + radius) * weights).sum(axis=1)
    allowed = np.zeros((len(kernels), base**traj.dim), dtype=bool)
    for i, kern in enumerate(kernels):
        for z, p in zip(kern.offsets, kern.probs):
            if p > 0:
                allowed[i, int(((np.array(z) + radius) * weights).sum())] = True
    ok = allowed[inverse, codes]
    if not ok.all():
        k = int(np.argmin(ok))
        raise UsageError(
            f"step {k + 1} ({steps[k].tolist()}) is not in the support of the kernel at "
            f"{traj.absolute_positions()[k].tolist()}: trajectory was not generated in this environment"
        )


def step_drifts(traj: Trajectory) -> np.ndarray:
    """D(T_{X_k} omega) for k = 0..n-1, shape (n, d)."""
    kernels, inverse = visited_kernels(traj)
    if not kernels:
        return np.zeros((0, traj.dim))
    return np.array([k.drift for k in kernels])[inverse]


def martingale_part(traj: Trajectory, env: EnvironmentView | None = None) -> np.ndarray:
    """W_n = X_n - sum_{k<n} D(T_{X_k} omega), shape (n + 1, d)."""
    if env is not None and (env.spec != traj.spec or tuple(env.origin) != tuple(traj.origin)):
        traj = Trajectory(traj.positions, env.spec, tuple(env.origin), traj.walk_seed)
    kernels, inverse = visited_kernels(traj)
    check_steps(traj, kernels, inverse)
    w = np.zeros((traj.n + 1, traj.dim))
    if kernels:
        drifts = np.array([k.drift for k in kernels])[inverse]
        np.cumsum(traj.steps() - drifts, axis=0, out=w[1:])
    return w


# -- Export --


def write_trajectory_text(traj: Trajectory, path: Path) -> Path:
    """Columnar text: step, x_1..x_d."""
    header = (
        f"env_seed={traj.spec.seed} walk_seed={traj.walk_seed} origin={list(traj.origin)}\n"
        "step " + " ".join(f"x_{i + 1}" for i in range(traj.dim))
    )
    data = np.column_stack([np.arange(traj.n + 1), traj.positions])
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, fmt="%d", header=header)
    return path


def write_trajectory_binary(traj: Trajectory, path: Path) -> Path:
    """Little-endian frame: magic, uint32 d, uint64 n, uint64 env seed, uint64 walk seed,
    d x int64 origin, then (n + 1) x d int64 positions."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, traj.dim, traj.n, traj.spec.seed, traj.walk_seed))
        fh.write(np.asarray(traj.origin, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(traj.positions, dtype="<i8").tobytes())
    return path


def read_trajectory_binary(path: Path) -> tuple[dict[str, int | tuple[int, ...]], np.ndarray]:
    raw = path.read_bytes()
    magic, dim, n, env_seed, walk_seed = _HEADER.unpack_from(raw, 0)
    if magic != BINARY_MAGIC:
        raise UsageError(f"{path} is not a trajectory frame (magic {magic!r})")
    offset = _HEADER.size
    origin = np.frombuffer(raw, dtype="<i8", count=dim, offset=offset)
    offset += 8 * dim
    positions = np.frombuffer(raw, dtype="<i8", count=(n + 1) * dim, offset=offset).reshape(n + 1, dim)
    header = {"dim": dim, "n": n, "env_seed": env_seed, "walk_seed": walk_seed, "origin": tuple(int(c) for c in origin)}
    return header, positions.astype(np.int64)
