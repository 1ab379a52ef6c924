"""Rescaled paths xi_n, Strassen-set functionals and the LIL statistic."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from rwrelab.errors import DegenerateModelError, MalformedPathError, UsageError
from rwrelab.estimators import CovarianceTrack
from rwrelab.walk import Trajectory

logger = logging.getLogger("rwrelab")

EE = math.exp(math.e)
ENERGY_TOL = 1e-12
UNIFORM_POINTS = 1001
PROBE_DIR = Path(__file__).parent / "data" / "probes"


def safe_loglog(x: float) -> float:
    """log log x, with the convention log log x = 1 for 0 < x <= e^e."""
    if not x > 0:
        raise UsageError(f"safe_loglog needs x > 0, got {x}")
    if x <= EE:
        return 1.0
    return math.log(math.log(x))


def _loglog_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = x > EE
    out[big] = np.log(np.log(x[big]))
    return out


@dataclass(eq=False)
class PiecewiseLinearPath:
    """Piecewise-linear map [0, 1] -> R^d through (times[i], values[i])."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        self.values = values[:, None] if values.ndim == 1 else values
        if self.times.ndim != 1 or self.times.shape[0] != self.values.shape[0] or self.times.size < 2:
            raise MalformedPathError("path needs at least two breakpoints and one value row per time")
        if self.times[0] != 0.0 or self.times[-1] != 1.0:
            raise MalformedPathError(f"path must run over [0, 1], got [{self.times[0]}, {self.times[-1]}]")
        if np.any(np.diff(self.times) < 0):
            raise MalformedPathError("breakpoint times must be nondecreasing")
        if not np.all(np.isfinite(self.values)):
            raise MalformedPathError("path values must be finite")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, t: Any, left: bool = False) -> np.ndarray:
        """Values at times t, shape (len(t), d).

        The path is right-continuous at repeated breakpoints; ``left=True`` gives
        the left limits instead.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        last = self.times.size - 2
        j = np.clip(np.searchsorted(self.times, t, side="left" if left else "right") - 1, 0, last)
        dt = self.times[j + 1] - self.times[j]
        frac = np.ones_like(t)
        moving = dt > 0
        frac[moving] = np.clip((t[moving] - self.times[j][moving]) / dt[moving], 0.0, 1.0)
        return self.values[j] + frac[:, None] * (self.values[j + 1] - self.values[j])

    def has_jump(self) -> bool:
        flat = np.diff(self.times) == 0
        return bool(np.any(flat & np.any(np.diff(self.values, axis=0) != 0, axis=1)))

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def scaled(self, c: float) -> PiecewiseLinearPath:
        return PiecewiseLinearPath(self.times.copy(), c * self.values)


@dataclass(eq=False)
class RescaledPath(PiecewiseLinearPath):
    n: int = 0
    normalizer: float = 1.0
    v_n2: float = 0.0
    centring: str = "annealed"


def _xi_breakpoints(t: np.ndarray, values: np.ndarray) -> list[int]:
    """Indices k whose (t_k, value_k) are the breakpoints of xi_n.

    Each step k with t_{k+1} > t_k is one segment from k to k + 1. A stalled
    stretch between two such steps becomes a jump (a repeated time), so the path
    matches the interpolation formula inside every segment and is right-continuous.
    The first segment starts at k = 0, which keeps xi_n(0) = 0.
    """
    moving = np.flatnonzero(t[1:] > t[:-1])
    keep = [0, int(moving[0]) + 1]
    for k in moving[1:]:
        k = int(k)
        if k != keep[-1] and not np.array_equal(values[k], values[keep[-1]]):
            keep.append(k)
        keep.append(k + 1)
    n = t.size - 1
    if keep[-1] != n and not np.array_equal(values[n], values[keep[-1]]):
        keep.append(n)
    return keep


def build_xi(
    traj: Trajectory,
    v: Any,
    track: CovarianceTrack,
    n: int | None = None,
    quenched_centre: np.ndarray | None = None,
) -> RescaledPath:
    """xi_n on the intrinsic clock t_k = v_k^2 / v_n^2.

    The centre is k v, or E_0^omega X_k when ``quenched_centre`` is given.
    """
    n = traj.n if n is None else int(n)
    if not 1 <= n <= traj.n or track.n < n:
        raise UsageError(f"n={n} outside the trajectory/track (1..{min(traj.n, track.n)})")
    v_n2 = float(track.traces[n])
    if not v_n2 > 0:
        raise DegenerateModelError("v_n^2 = 0: the conditional covariance vanishes and xi_n is undefined")
    x = traj.positions[: n + 1].astype(float)
    if quenched_centre is not None:
        centre = np.asarray(quenched_centre, dtype=float)[: n + 1]
        if centre.shape != x.shape:
            raise UsageError(f"quenched centre has shape {centre.shape}, expected {x.shape}")
        centring = "quenched"
    else:
        v_arr = np.atleast_1d(np.asarray(v, dtype=float))
        centre = np.arange(n + 1)[:, None] * v_arr[None, :]
        centring = "annealed"
    normalizer = math.sqrt(2.0 * v_n2 * safe_loglog(v_n2))
    t = track.traces[: n + 1] / v_n2
    scaled = (x - centre) / normalizer
    keep = _xi_breakpoints(t, scaled)
    times = t[keep]
    times[0], times[-1] = 0.0, 1.0
    return RescaledPath(
        times, scaled[keep], n=n, normalizer=normalizer, v_n2=v_n2, centring=centring
    )


def cm_energy(path: PiecewiseLinearPath) -> float:
    """Cameron-Martin energy: sum |df|^2 / dt over segments."""
    if np.any(path.values[0] != 0):
        raise MalformedPathError("energy is defined for paths starting at 0")
    dt = np.diff(path.times)
    df2 = (np.diff(path.values, axis=0) ** 2).sum(axis=1)
    flat = dt == 0
    if np.any(flat & (df2 > 0)):
        raise MalformedPathError("zero-length segment with a nonzero jump")
    return math.fsum((df2[~flat] / dt[~flat]).tolist())


def k_distance_upper(path: PiecewiseLinearPath) -> float:
    """Upper bound on the sup-distance from path to K via the feasible point path / sqrt(E).

    A path that jumps has no finite energy; the feasible point is then 0.
    """
    if path.has_jump():
        return path.sup_norm()
    energy = cm_energy(path)
    if energy <= 1.0 + ENERGY_TOL:
        return 0.0
    return path.sup_norm() * (1.0 - 1.0 / math.sqrt(energy))


def sup_distance(a: PiecewiseLinearPath, b: PiecewiseLinearPath, uniform_points: int = UNIFORM_POINTS) -> float:
    """sup_t |a(t) - b(t)| on the merged breakpoints plus a uniform grid."""
    if a.dim != b.dim:
        raise UsageError(f"paths have dimensions {a.dim} and {b.dim}")
    grid = np.union1d(np.union1d(a.times, b.times), np.linspace(0.0, 1.0, uniform_points))
    right = np.linalg.norm(a.at(grid) - b.at(grid), axis=1)
    left = np.linalg.norm(a.at(grid, left=True) - b.at(grid, left=True), axis=1)
    return float(max(right.max(), left.max()))


# -- LIL statistic --


@dataclass
class LilStatistic:
    n_grid: np.ndarray
    values: np.ndarray
    running_max: np.ndarray


def _check_grid(n_grid: Sequence[int], n_max: int) -> np.ndarray:
    grid = np.asarray(n_grid, dtype=np.int64)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise UsageError("n-grid must be non-empty and strictly increasing")
    if grid[0] < 1 or grid[-1] > n_max:
        raise UsageError(f"n-grid must lie in [1, {n_max}], got [{grid[0]}, {grid[-1]}]")
    return grid


def lil_statistic_from_positions(
    positions: np.ndarray, v: Any, n_grid: Sequence[int], centre: np.ndarray | None = None
) -> LilStatistic:
    """Statistic from X at the grid points (rows of ``positions`` align with ``n_grid``).

    ``centre`` replaces n v by a per-grid-point centre such as E_0^omega X_n.
    """
    grid = np.asarray(n_grid, dtype=np.int64)
    pos = np.asarray(positions, dtype=float)
    if centre is None:
        v_arr = np.atleast_1d(np.asarray(v, dtype=float))
        centre = grid[:, None] * v_arr[None, :]
    else:
        centre = np.asarray(centre, dtype=float)
        if centre.shape != pos.shape:
            raise UsageError(f"centre has shape {centre.shape}, expected {pos.shape}")
    dev = np.linalg.norm(pos - centre, axis=1)
    values = dev / np.sqrt(2.0 * grid * _loglog_array(grid))
    return LilStatistic(grid, values, np.maximum.accumulate(values))


def lil_statistic(traj: Trajectory, v: Any, n_grid: Sequence[int], centre: np.ndarray | None = None) -> LilStatistic:
    """|X_n - n v| / sqrt(2 n loglog n) at the grid points and its running max.

    With ``centre`` (E_0^omega X_k for k = 0..n, as in ``build_xi``) the walk is
    centred by its quenched mean instead of n v.
    """
    grid = _check_grid(n_grid, traj.n)
    if centre is not None:
        centre = np.asarray(centre, dtype=float)
        if centre.ndim != 2 or centre.shape[0] <= grid[-1]:
            raise UsageError(f"centre must cover k = 0..{grid[-1]}, got shape {centre.shape}")
        centre = centre[grid]
    return lil_statistic_from_positions(traj.positions[grid], v, grid, centre)


# -- Probes --


def line_probe(u: Sequence[float]) -> PiecewiseLinearPath:
    """f(t) = t u."""
    u = np.asarray(u, dtype=float)
    return PiecewiseLinearPath(np.array([0.0, 1.0]), np.vstack([np.zeros_like(u), u]))


def diagonal_probe(dim: int) -> PiecewiseLinearPath:
    """f(t) = (t / sqrt(d)) sum e_i, unit energy."""
    return line_probe(np.full(dim, 1.0 / math.sqrt(dim)))


def zero_probe(dim: int) -> PiecewiseLinearPath:
    return PiecewiseLinearPath(np.array([0.0, 1.0]), np.zeros((2, dim)))


def load_probe(name: str, dim: int | None = None) -> PiecewiseLinearPath:
    """Probe from the shipped library (``data/probes/<name>.yaml``) or a path to a YAML file."""
    path = Path(name)
    if path.suffix not in (".yaml", ".yml"):
        path = PROBE_DIR / f"{name}.yaml"
    if not path.exists():
        available = sorted(p.stem for p in PROBE_DIR.glob("*.yaml"))
        raise UsageError(f"unknown probe {name!r}; library has {available}")
    data = yaml.safe_load(path.read_text()) or {}
    probe = PiecewiseLinearPath(np.array(data["times"], dtype=float), np.array(data["values"], dtype=float))
    if dim is not None and probe.dim != dim:
        raise UsageError(f"probe {name!r} has dimension {probe.dim}, walk has dimension {dim}")
    return probe


def probe_by_name(name: str, dim: int) -> PiecewiseLinearPath:
    builtin = {"zero": zero_probe, "diagonal": diagonal_probe}
    if name in builtin:
        return builtin[name](dim)
    if name == "line":
        e1 = np.zeros(dim)
        e1[0] = 1.0
        return line_probe(e1)
    return load_probe(name, dim)


def random_k_element(rng: np.random.Generator, dim: int, segments: int = 8) -> PiecewiseLinearPath:
    """Random piecewise-linear path from 0, rescaled to unit energy."""
    if segments < 1:
        raise UsageError("segments must be >= 1")
    inner = np.sort(rng.random(segments - 1))
    times = np.concatenate([[0.0], inner, [1.0]])
    values = np.vstack([np.zeros(dim), np.cumsum(rng.standard_normal((segments, dim)), axis=0)])
    path = PiecewiseLinearPath(times, values)
    energy = cm_energy(path)
    return path.scaled(1.0 / math.sqrt(energy)) if energy > 0 else path


def cluster_probe(paths: Sequence[PiecewiseLinearPath], probes: Sequence[PiecewiseLinearPath]) -> list[float]:
    """For each probe in K, the smallest sup-distance to any of the paths."""
    if not paths:
        raise UsageError("cluster_probe needs at least one path")
    for i, probe in enumerate(probes):
        energy = cm_energy(probe)
        if energy > 1.0 + ENERGY_TOL:
            raise UsageError(f"probe {i} has energy {energy:.6g} > 1 and is not in K")
    return [min(sup_distance(path, probe) for path in paths) for probe in probes]


# -- Report --


@dataclass
class StrassenReport:
    n_grid: list[int]
    limits: list[int]
    k_distance: dict[int, list[float]]  # n -> per replica
    probe_distance: dict[str, dict[int, list[float]]]  # probe -> limit -> per replica
    lil_running_max: list[float]
    parameters: dict[str, Any] = field(default_factory=dict)

    @cached_property
    def monotone_fraction(self) -> dict[str, float]:
        """Share of replicas whose minimal probe distance is nonincreasing over the limits."""
        out = {}
        for name, by_limit in self.probe_distance.items():
            rows = np.array([by_limit[lim] for lim in self.limits])
            ok = np.all(np.diff(rows, axis=0) <= 0, axis=0)
            out[name] = float(ok.mean()) if ok.size else 0.0
        return out

    def table(self) -> list[dict[str, Any]]:
        """Flat (n, statistic, distance) rows: median k-distance per n."""
        return [
            {
                "n": n,
                "k_distance_median": float(np.median(self.k_distance[n])),
                "k_distance_max": float(np.max(self.k_distance[n])),
            }
            for n in self.n_grid
            if n in self.k_distance
        ]

    def probe_table(self) -> list[dict[str, Any]]:
        return [
            {
                "probe": name,
                "limit": lim,
                "min_distance_median": float(np.median(by_limit[lim])),
                "monotone_fraction": self.monotone_fraction[name],
            }
            for name, by_limit in self.probe_distance.items()
            for lim in self.limits
        ]


def strassen_report(
    replicas: Sequence[dict[str, Any]],
    n_grid: Sequence[int],
    limits: Sequence[int],
    parameters: dict[str, Any] | None = None,
) -> StrassenReport:
    """Collect per-replica cluster results (keys: k_distance, probe_distance, lil_max)."""
    k_distance = {int(n): [float(r["k_distance"][i]) for r in replicas] for i, n in enumerate(n_grid)}
    names = list(replicas[0]["probe_distance"]) if replicas else []
    probe_distance = {
        name: {int(lim): [float(r["probe_distance"][name][j]) for r in replicas] for j, lim in enumerate(limits)}
        for name in names
    }
    return StrassenReport(
        [int(n) for n in n_grid],
        [int(lim) for lim in limits],
        k_distance,
        probe_distance,
        [float(r["lil_max"]) for r in replicas],
        dict(parameters or {}),
    )
