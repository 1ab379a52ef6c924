"""Asymptotic Poisson equation on finite environment chains.

For the environment seen from the walker, omega_bar(n) = T_{X_n} omega, with
transition operator Pi, this module solves (1 + eps) h - Pi h = g, takes the
eps -> 0 limit on the mean-zero subspace, realises the pathwise decomposition

    S_n(g) = M_n^eps + R_n^eps + eps S_n(h_eps),   X_n - n v = W_n + M_n + R_n,

and evaluates the diffusion matrix exactly. Exact routes exist only when the
environment chain is finite (deterministic and periodic models); other models
get the Monte-Carlo series estimator with an explicit tail bound.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from rwrelab.env import (
    EnvironmentModel,
    EnvironmentSpec,
    EnvironmentView,
    JumpKernel,
    local_drift,
    phase_table,
    shift,
)
from rwrelab.errors import MalformedChainError, UnsupportedModelError, UsageError
from rwrelab.utils import derive_seed, fsum_mean
from rwrelab.walk import (
    Trajectory,
    check_steps,
    martingale_part,
    simulate_quenched,
    step_drifts,
    visited_kernels,
)

logger = logging.getLogger("rwrelab")

ROW_TOL = 1e-12
STATIONARY_TOL = 1e-10
MEAN_ZERO_TOL = 1e-10

SERIES_ALTERNATIVE = (
    "use the Monte-Carlo series estimator (corrector_series_mc; decomposition method 'series')"
)


@dataclass(eq=False)
class PhaseChain:
    """Finite-state environment chain: phases, Pi, stationary law, per-phase kernels."""

    transition: np.ndarray
    stationary: np.ndarray
    ergodic: bool
    kernels: tuple[JumpKernel, ...] = ()
    next_phase: tuple[tuple[int, ...], ...] = ()
    period: tuple[int, ...] = ()
    model: EnvironmentModel | None = None

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def dim(self) -> int:
        return len(self.period)

    def phases(self, sites: np.ndarray) -> np.ndarray:
        """Phase index of each absolute site (rows of ``sites``)."""
        period = np.array(self.period, dtype=np.int64)
        strides = np.ones(len(period), dtype=np.int64)
        for i in range(len(period) - 2, -1, -1):
            strides[i] = strides[i + 1] * period[i + 1]
        return (np.mod(sites, period) * strides).sum(axis=-1)

    @property
    def drifts(self) -> np.ndarray:
        """D per phase, shape (S, d)."""
        if not self.kernels:
            raise UsageError("abstract chain has no lattice kernels")
        return np.array([k.drift for k in self.kernels])

    def mean_drift(self) -> np.ndarray:
        """v = E_infinity D = sum_p stationary(p) D(p)."""
        return np.array([math.fsum(c) for c in (self.stationary[:, None] * self.drifts).T])

    def check(self) -> None:
        pi = self.transition
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise MalformedChainError(f"transition matrix must be square, got shape {pi.shape}")
        if not np.all(np.isfinite(pi)) or np.any(pi < 0):
            raise MalformedChainError("transition matrix has negative or non-finite entries")
        rows = pi.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > ROW_TOL)
        if bad.size:
            raise MalformedChainError(f"transition row {int(bad[0])} sums to {rows[bad[0]]!r}, not 1")
        drift = np.max(np.abs(self.stationary @ pi - self.stationary))
        if drift > STATIONARY_TOL:
            raise MalformedChainError(f"stationary vector is not invariant (error {drift:.3e})")

    @classmethod
    def from_transition(cls, matrix: Any, validate: bool = True) -> PhaseChain:
        """Abstract chain with no lattice structure (resolvent and small-set checks)."""
        pi = np.array(matrix, dtype=float)
        stationary, unique = _stationary(pi)
        chain = cls(pi, stationary, unique)
        if validate:
            chain.check()
        return chain


@dataclass
class ResolventSolution:
    epsilon: float
    g: np.ndarray
    h: np.ndarray
    residual: float


@dataclass
class Decomposition:
    epsilon: float
    positions: np.ndarray
    centred: np.ndarray  # X_k - k v
    W: np.ndarray
    M_eps: np.ndarray
    R_eps: np.ndarray
    eps_S_h: np.ndarray
    S_g: np.ndarray
    phases: np.ndarray | None
    identity_residual: float
    position_residual: float
    h_stderr: float = 0.0  # largest standard error of an estimated corrector value


@dataclass
class SeriesEstimate:
    estimate: np.ndarray
    stderr: np.ndarray
    tail_bound: float
    truncation: int
    budget: int
    samples: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def _stationary(pi: np.ndarray) -> tuple[np.ndarray, bool]:
    n = pi.shape[0]
    a = np.vstack([pi.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    stationary, *_ = scipy.linalg.lstsq(a, b)
    unique = scipy.linalg.null_space(pi.T - np.eye(n)).shape[1] == 1
    return stationary, unique


def build_phase_chain(spec: EnvironmentSpec) -> PhaseChain:
    """Environment chain for models whose omega_bar takes finitely many values."""
    table = phase_table(spec)
    if table is None:
        raise UnsupportedModelError(
            f"model {spec.model.name!r} induces an infinite-state environment chain; {SERIES_ALTERNATIVE}"
        )
    size = len(table.kernels)
    pi = np.zeros((size, size))
    period = np.array(table.period, dtype=np.int64)
    nxt = []
    for p, kernel in enumerate(table.kernels):
        coords = np.array(np.unravel_index(p, table.period), dtype=np.int64)
        row = []
        for z, prob in zip(kernel.offsets, kernel.probs):
            q = int(np.ravel_multi_index(tuple(np.mod(coords + np.array(z), period)), table.period))
            pi[p, q] += prob
            row.append(q)
        nxt.append(tuple(row))
    stationary, unique = _stationary(pi)
    if not unique:
        logger.warning("Environment chain of %s has more than one invariant law", spec.model.name)
    chain = PhaseChain(pi, stationary, unique, table.kernels, tuple(nxt), table.period, spec.model)
    chain.check()
    return chain


def _as_phase_matrix(chain: PhaseChain, g: Any) -> tuple[np.ndarray, bool]:
    arr = np.array(g, dtype=float)
    vector = arr.ndim == 1
    if vector:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != chain.n_states:
        raise UsageError(f"g must have one row per phase ({chain.n_states}), got shape {np.shape(g)}")
    if not np.all(np.isfinite(arr)):
        raise UsageError("g must be finite on all phases")
    return arr, vector


def _refined_solve(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        lu = scipy.linalg.lu_factor(a)
        h = scipy.linalg.lu_solve(lu, g)
        return h + scipy.linalg.lu_solve(lu, g - a @ h)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise MalformedChainError(f"linear solve failed: {e}") from e


def solve_resolvent(chain: PhaseChain, g: Any, epsilon: float) -> ResolventSolution:
    """Exact solution of (1 + eps) h - Pi h = g, coordinatewise for vector g."""
    if not epsilon > 0:
        raise UsageError(f"epsilon must be > 0 for the resolvent, got {epsilon}")
    chain.check()
    garr, vector = _as_phase_matrix(chain, g)
    a = (1.0 + epsilon) * np.eye(chain.n_states) - chain.transition
    h = _refined_solve(a, garr)
    residual = float(np.max(np.abs(a @ h - garr), initial=0.0))
    if not np.all(np.isfinite(h)):
        raise MalformedChainError("resolvent solve produced non-finite values")
    return ResolventSolution(epsilon, _shape_back(garr, vector), _shape_back(h, vector), residual)


def solve_limit(chain: PhaseChain, g: Any) -> ResolventSolution:
    """Mean-zero solution of (I - Pi) h = g, the eps -> 0 limit of the resolvent."""
    chain.check()
    if not chain.ergodic:
        raise UnsupportedModelError("environment chain is not ergodic: the limit corrector is not unique")
    garr, vector = _as_phase_matrix(chain, g)
    means = chain.stationary @ garr
    if np.any(np.abs(means) > MEAN_ZERO_TOL):
        raise UsageError(f"g must have stationary mean 0, got {means.tolist()}")
    centred = garr - means[None, :]
    n = chain.n_states
    fundamental = np.eye(n) - chain.transition + np.outer(np.ones(n), chain.stationary)
    h = _refined_solve(fundamental, centred)
    h -= (chain.stationary @ h)[None, :]
    a = np.eye(n) - chain.transition
    residual = float(np.max(np.abs(a @ h - garr), initial=0.0))
    return ResolventSolution(0.0, _shape_back(garr, vector), _shape_back(h, vector), residual)


def _shape_back(arr: np.ndarray, vector: bool) -> np.ndarray:
    return arr[:, 0].copy() if vector else arr


def resolvent_series(chain: PhaseChain, g: Any, epsilon: float, terms: int) -> np.ndarray:
    """Truncated series sum_{k=1}^{K} (1 + eps)^{-k} Pi^{k-1} g."""
    garr, vector = _as_phase_matrix(chain, g)
    total = np.zeros_like(garr)
    term = garr.copy()
    for k in range(1, terms + 1):
        total += (1.0 + epsilon) ** (-k) * term
        term = chain.transition @ term
    return _shape_back(total, vector)


def series_tail_bound(g_sup: float, epsilon: float, terms: int) -> float:
    return (1.0 + epsilon) ** (-terms) * g_sup / epsilon


def truncation_for(epsilon: float, tolerance: float) -> int:
    """Smallest K with (1 + eps)^{-K} <= tolerance."""
    if not (epsilon > 0 and 0 < tolerance < 1):
        raise UsageError("need epsilon > 0 and 0 < tolerance < 1")
    return max(1, math.ceil(math.log(1.0 / tolerance) / math.log1p(epsilon)))


def limit_convergence(
    chain: PhaseChain, g: Any, epsilons: Sequence[float] = (1e-2, 1e-4, 1e-6)
) -> dict[float, float]:
    """sup |h_eps - h_0| for each eps."""
    h0 = solve_limit(chain, g).h
    return {eps: float(np.max(np.abs(solve_resolvent(chain, g, eps).h - h0))) for eps in epsilons}


def centred_drift(chain: PhaseChain, v: Any | None = None) -> tuple[np.ndarray, np.ndarray]:
    """g = D - v per phase and the v used (stationary mean drift by default)."""
    v_arr = chain.mean_drift() if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    return chain.drifts - v_arr[None, :], v_arr


class CentredDrift:
    """g(T_x omega) = D(T_x omega) - v, evaluated through the environment."""

    def __init__(self, v: Any):
        self.v = np.atleast_1d(np.asarray(v, dtype=float))

    def __call__(self, env: EnvironmentView, x: Sequence[int]) -> np.ndarray:
        return local_drift(env, x) - self.v


def corrector_series_mc(
    env: EnvironmentView,
    g: Callable[[EnvironmentView, Sequence[int]], np.ndarray],
    epsilon: float,
    truncation: int,
    budget: int,
    seed: int = 0,
    g_sup: float | None = None,
) -> SeriesEstimate:
    """Monte-Carlo estimate of h_eps(omega) = sum_{k>=1} (1+eps)^{-k} (Pi^{k-1} g)(omega).

    Each sample walks K - 1 steps from the origin of ``env`` and accumulates the
    discounted values of g along the environment chain. The returned tail bound
    is (1+eps)^{-K} sup|g| / eps, with sup|g| defaulting to 2M (valid for
    centred drifts).
    """
    if budget <= 0:
        raise UsageError("sample budget must be positive")
    if not epsilon > 0:
        raise UsageError("epsilon must be > 0")
    if truncation < 1:
        raise UsageError("truncation K must be >= 1")
    weights = (1.0 + epsilon) ** -np.arange(1, truncation + 1)
    cache: dict[tuple[int, ...], np.ndarray] = {}
    samples = np.zeros((budget, env.spec.dim))
    for s in range(budget):
        traj = simulate_quenched(env, truncation - 1, derive_seed(seed, s, "series"))
        values = np.zeros((truncation, env.spec.dim))
        for k, x in enumerate(map(tuple, traj.positions.tolist())):
            val = cache.get(x)
            if val is None:
                val = cache[x] = np.atleast_1d(np.asarray(g(env, x), dtype=float))
            values[k] = val
        samples[s] = weights @ values
    estimate = fsum_mean(samples)
    stderr = samples.std(axis=0, ddof=1) / math.sqrt(budget) if budget > 1 else np.zeros(env.spec.dim)
    bound = series_tail_bound(2.0 * env.spec.range if g_sup is None else g_sup, epsilon, truncation)
    return SeriesEstimate(estimate, stderr, bound, truncation, budget, samples)


def _columns(chain: PhaseChain, values: np.ndarray, dim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        if dim != 1:
            raise UsageError(f"corrector is scalar but the walk has dimension {dim}")
        arr = arr[:, None]
    if arr.shape != (chain.n_states, dim):
        raise UsageError(f"corrector has shape {arr.shape}, expected {(chain.n_states, dim)}")
    return arr


def _running(values: np.ndarray) -> np.ndarray:
    """Partial sums S_0 = 0, S_k = values[0] + ... + values[k-1]."""
    out = np.zeros((values.shape[0] + 1, values.shape[1]))
    np.cumsum(values, axis=0, out=out[1:])
    return out


def decompose(
    traj: Trajectory,
    chain: PhaseChain | None,
    h: ResolventSolution | None,
    v: Any,
) -> Decomposition:
    """Pathwise X_k - k v = W_k + M_k^eps + R_k^eps + eps S_k(h_eps), with g = D - v.

    ``chain=None`` is the zero corrector, valid only when D - v vanishes along the
    path (balanced environments).
    """
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    n, dim = traj.n, traj.dim
    x = traj.positions.astype(float)
    centred = x - np.arange(n + 1)[:, None] * v_arr[None, :]
    zeros = np.zeros((n + 1, dim))

    if chain is None:
        g_steps = step_drifts(traj) - v_arr[None, :]
        if g_steps.size and np.max(np.abs(g_steps)) > 1e-12:
            raise UsageError("zero corrector requires D - v == 0 along the path; build a phase chain instead")
        w = martingale_part(traj)
        residual = float(np.max(np.abs(centred - w), initial=0.0))
        return Decomposition(0.0, traj.positions, centred, w, zeros, zeros.copy(), zeros.copy(),
                             zeros.copy(), None, 0.0, residual)

    if h is None:
        raise UsageError("a corrector solution is required with a phase chain")
    if chain.model is None or chain.model != traj.spec.model:
        raise UsageError("trajectory environment does not match the phase chain's model")
    phases = chain.phases(traj.absolute_positions())
    check_steps(traj, list(chain.kernels), phases[:-1])

    g_table, _ = centred_drift(chain, v_arr)
    hv = _columns(chain, h.h, dim)
    h_g = _columns(chain, h.g, dim)
    if np.max(np.abs(h_g - g_table)) > 1e-12:
        raise UsageError("corrector was solved for a different g than D - v")
    pi_h = chain.transition @ hv
    eps = h.epsilon

    before, after = phases[:-1], phases[1:]
    s_g = _running(g_table[before])
    m_eps = _running(hv[after] - pi_h[before])
    r_eps = hv[phases[0]][None, :] - hv[phases]
    eps_s_h = eps * _running(hv[before])
    w = x - _running(chain.drifts[before])
    identity = float(np.max(np.abs(s_g - m_eps - r_eps - eps_s_h), initial=0.0))
    position = float(np.max(np.abs(centred - w - m_eps - r_eps - eps_s_h), initial=0.0))
    return Decomposition(eps, traj.positions, centred, w, m_eps, r_eps, eps_s_h, s_g, phases, identity, position)


def decompose_series(
    traj: Trajectory,
    v: Any,
    epsilon: float,
    truncation: int,
    budget: int,
    seed: int = 0,
) -> Decomposition:
    """Decomposition with h_eps estimated by corrector_series_mc wherever it is needed.

    h_eps is estimated at every X_k and at every neighbour X_k + z the kernel
    can reach, so Pi h_eps(X_k) is a finite sum. For an estimated corrector the
    identity residual equals the accumulated Poisson-equation residual and
    carries the Monte-Carlo error; ``h_stderr`` reports its size.
    """
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    n, dim = traj.n, traj.dim
    env = traj.env_view()
    kernels, inverse = visited_kernels(traj)
    check_steps(traj, kernels, inverse)
    starts = np.unique(traj.positions[:-1], axis=0) if n else np.zeros((0, dim), dtype=np.int64)

    needed = {tuple(int(c) for c in row) for row in traj.positions}
    for site, kernel in zip(starts, kernels):
        for z, p in zip(kernel.offsets, kernel.probs):
            if p > 0:
                needed.add(tuple(int(a + b) for a, b in zip(site, z)))
    g = CentredDrift(v_arr)
    estimates: dict[tuple[int, ...], np.ndarray] = {}
    worst = 0.0
    for j, x in enumerate(sorted(needed)):
        est = corrector_series_mc(shift(env, x), g, epsilon, truncation, budget, derive_seed(seed, j, "series"))
        estimates[x] = est.estimate
        worst = max(worst, float(np.max(est.stderr)))
    logger.debug("decompose_series: estimated h at %d sites, largest stderr %.3e", len(estimates), worst)

    hx = np.array([estimates[tuple(int(c) for c in row)] for row in traj.positions])
    pi_h_sites = np.array(
        [
            sum(p * estimates[tuple(int(a + b) for a, b in zip(site, z))] for z, p in zip(k.offsets, k.probs) if p > 0)
            for site, k in zip(starts, kernels)
        ]
    ).reshape(len(kernels), dim)
    # visited_kernels sorts absolute sites; translation keeps that order, so starts lines up with kernels
    pi_h = pi_h_sites[inverse] if n else np.zeros((0, dim))
    drifts = np.array([k.drift for k in kernels]).reshape(len(kernels), dim)[inverse] if n else np.zeros((0, dim))

    x = traj.positions.astype(float)
    centred = x - np.arange(n + 1)[:, None] * v_arr[None, :]
    s_g = _running(drifts - v_arr[None, :])
    m_eps = _running(hx[1:] - pi_h)
    r_eps = hx[0][None, :] - hx
    eps_s_h = epsilon * _running(hx[:-1])
    w = x - _running(drifts)
    identity = float(np.max(np.abs(s_g - m_eps - r_eps - eps_s_h), initial=0.0))
    position = float(np.max(np.abs(centred - w - m_eps - r_eps - eps_s_h), initial=0.0))
    return Decomposition(epsilon, traj.positions, centred, w, m_eps, r_eps, eps_s_h, s_g, None, identity, position,
                         worst)


def phase_covariances(chain: PhaseChain, h: ResolventSolution | None = None) -> np.ndarray:
    """Per phase p: E[(X_1 - D + H(p, next))(...)^t] under the phase kernel; shape (S, d, d).

    Without a corrector H is taken as 0, which gives the covariance of the
    walk martingale increment only.
    """
    dim = chain.dim
    if h is None:
        hv = np.zeros((chain.n_states, dim))
    else:
        hv = _columns(chain, h.h, dim)
    pi_h = chain.transition @ hv
    covs = np.zeros((chain.n_states, dim, dim))
    for p, kernel in enumerate(chain.kernels):
        drift = kernel.drift
        for z, prob, q in zip(kernel.offsets, kernel.probs, chain.next_phase[p]):
            if prob == 0:
                continue
            y = np.array(z, dtype=float) - drift + (hv[q] - pi_h[p])
            covs[p] += prob * np.outer(y, y)
        covs[p] = (covs[p] + covs[p].T) / 2
    return covs


def corrector_increments(chain: PhaseChain, h: ResolventSolution) -> np.ndarray:
    """H(p, q) = h(q) - (Pi h)(p) on every phase pair, shape (S, S, d)."""
    hv = _columns(chain, h.h, chain.dim)
    pi_h = chain.transition @ hv
    return hv[None, :, :] - pi_h[:, None, :]


def diffusion_matrix_exact(chain: PhaseChain, h: ResolventSolution, v: Any) -> np.ndarray:
    """D = E_0^infinity[(X_1 - D(omega) + H(omega, T_{X_1} omega))(...)^t]."""
    if h.epsilon != 0:
        raise UsageError("diffusion_matrix_exact needs the limit corrector (solve_limit)")
    g_table, _ = centred_drift(chain, v)
    if np.max(np.abs(_columns(chain, h.g, chain.dim) - g_table)) > 1e-12:
        raise UsageError("corrector was solved for a different g than D - v")
    covs = phase_covariances(chain, h)
    out = np.tensordot(chain.stationary, covs, axes=1)
    return (out + out.T) / 2


def exact_oracle(spec: EnvironmentSpec) -> tuple[PhaseChain, np.ndarray, ResolventSolution, np.ndarray]:
    """(chain, v, limit corrector, diffusion matrix) for a finite-state model."""
    chain = build_phase_chain(spec)
    g, v = centred_drift(chain)
    h = solve_limit(chain, g)
    return chain, v, h, diffusion_matrix_exact(chain, h, v)


def export_chain(chain: PhaseChain) -> dict[str, Any]:
    """Structured-text audit document of the chain."""
    doc: dict[str, Any] = {
        "states": chain.n_states,
        "ergodic": bool(chain.ergodic),
        "transition": chain.transition.tolist(),
        "stationary": chain.stationary.tolist(),
    }
    if chain.kernels:
        doc["period"] = list(chain.period)
        doc["kernels"] = [k.to_dict() for k in chain.kernels]
        doc["drift"] = chain.mean_drift().tolist()
    return doc
