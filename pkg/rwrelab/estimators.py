"""Estimators: drift, conditional covariance, operator norm, empirical diffusion matrix,
quenched-variance exponent and the small-set (minorization) check."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.stats

from rwrelab.corrector import PhaseChain, ResolventSolution, build_phase_chain, phase_covariances
from rwrelab.env import EnvironmentSpec, EnvironmentView, annealed_mean_drift, phase_table
from rwrelab.errors import UsageError
from rwrelab.utils import derive_seed, fsum_cov, fsum_mean
from rwrelab.walk import (
    DEFAULT_MAX_SITES,
    Trajectory,
    check_steps,
    quenched_mean,
    simulate_checkpoints,
    visited_kernels,
)

logger = logging.getLogger("rwrelab")

NORM_TOL = 1e-10
ZERO_CURVE_TOL = 1e-9  # |E X_n - n v| below this times n counts as zero
MIN_FIT_POINTS = 5
MIN_FIT_DECADES = 1.5

COVARIANCE_LABEL = "conditional covariance"
MARTINGALE_LABEL = "martingale-part covariance"


# -- Drift --


@dataclass
class DriftEstimate:
    v_hat: np.ndarray
    stderr: np.ndarray
    replicas: int
    n: int
    exact: np.ndarray | None = None


def exact_drift(spec: EnvironmentSpec) -> np.ndarray | None:
    """Stationary-average drift when the environment chain is finite."""
    if phase_table(spec) is None:
        return None
    return build_phase_chain(spec).mean_drift()


def drift_from_endpoints(endpoints: np.ndarray, n: int, exact: np.ndarray | None = None) -> DriftEstimate:
    """v_hat = mean of X_n / n over replicas (rows of ``endpoints``)."""
    rows = np.asarray(endpoints, dtype=float) / n
    if rows.shape[0] < 2:
        raise UsageError("drift estimation needs at least 2 replicas")
    stderr = rows.std(axis=0, ddof=1) / math.sqrt(rows.shape[0])
    return DriftEstimate(fsum_mean(rows), stderr, rows.shape[0], n, exact)


def estimate_drift(spec: EnvironmentSpec, replicas: int, n: int, master_seed: int = 0) -> DriftEstimate:
    if replicas < 2:
        raise UsageError("drift estimation needs at least 2 replicas")
    if n < 1:
        raise UsageError("n must be >= 1")
    ends = simulate_checkpoints(spec, [n], master_seed, range(replicas))[:, 0, :]
    return drift_from_endpoints(ends, n, exact_drift(spec))


# -- Conditional covariance --


@dataclass
class CovarianceTrack:
    A: np.ndarray  # (n + 1, d, d), A[0] == 0
    traces: np.ndarray  # v_k^2, k = 0..n
    label: str = COVARIANCE_LABEL

    @property
    def n(self) -> int:
        return self.A.shape[0] - 1


def conditional_covariance(
    traj: Trajectory,
    env: EnvironmentView | None = None,
    chain: PhaseChain | None = None,
    h: ResolventSolution | None = None,
) -> CovarianceTrack:
    """A_k = sum_{j<k} E(z z^t | G_j) along the path, in closed form.

    With a phase chain and its limit corrector, z = w + m includes the corrector
    increment H. Otherwise z is the walk martingale increment alone and the track
    is labelled as the martingale-part covariance.
    """
    if env is not None and (env.spec != traj.spec or tuple(env.origin) != tuple(traj.origin)):
        raise UsageError("environment does not match the trajectory's environment")
    dim = traj.dim
    if chain is not None:
        if chain.model is None or chain.model != traj.spec.model:
            raise UsageError("trajectory environment does not match the phase chain's model")
        phases = chain.phases(traj.absolute_positions())[:-1]
        check_steps(traj, list(chain.kernels), phases)
        per_step = phase_covariances(chain, h)[phases]
        label = COVARIANCE_LABEL if h is not None else MARTINGALE_LABEL
    else:
        kernels, inverse = visited_kernels(traj)
        check_steps(traj, kernels, inverse)
        covs = np.array([k.covariance for k in kernels]) if kernels else np.zeros((0, dim, dim))
        per_step = covs[inverse]
        label = MARTINGALE_LABEL
    cumulative = np.zeros((traj.n + 1, dim, dim))
    np.cumsum(per_step, axis=0, out=cumulative[1:])
    traces = np.trace(cumulative, axis1=1, axis2=2)
    return CovarianceTrack(cumulative, traces, label)


# -- Matrix norm --


def matrix_norm(a: Any, tol: float = NORM_TOL, max_iter: int = 100_000) -> float:
    """Operator norm sup_{|u|=1} |A u|, by power iteration on A^t A.

    Stops when the Rayleigh-quotient residual is below ``tol`` relative to the
    current eigenvalue estimate.
    """
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise UsageError(f"matrix_norm needs a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError("matrix_norm needs finite entries")
    if not arr.any():
        return 0.0
    gram = arr.T @ arr
    rng = np.random.Generator(np.random.Philox(0x4E524D))
    x = rng.standard_normal(gram.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = gram @ x
        lam = float(x @ y)
        if np.linalg.norm(y - lam * x) <= tol * max(lam, np.finfo(float).tiny):
            break
        x = y / np.linalg.norm(y)
    else:
        logger.warning("matrix_norm did not reach tolerance %.1e in %d iterations", tol, max_iter)
    return math.sqrt(max(lam, 0.0))


def covariance_deviation(
    track: CovarianceTrack, diffusion: Any, ks: Sequence[int] | None = None
) -> list[tuple[int, float]]:
    """|| A_k / k - D ||_m at the given k (40 log-spaced points by default)."""
    target = np.atleast_2d(np.asarray(diffusion, dtype=float))
    if ks is None:
        ks = sorted({int(k) for k in np.geomspace(1, max(track.n, 1), num=40)})
    out = []
    for k in ks:
        if not 1 <= k <= track.n:
            raise UsageError(f"k={k} outside the track (1..{track.n})")
        out.append((int(k), matrix_norm(track.A[k] / k - target)))
    return out


# -- Empirical diffusion matrix --


@dataclass
class DiffusionEstimate:
    matrix: np.ndarray
    stderr: np.ndarray
    replicas: int
    n: int


def diffusion_from_endpoints(endpoints: np.ndarray, n: int, v: Any) -> DiffusionEstimate:
    """Sample covariance of (X_n - n v) / sqrt(n) over replicas."""
    ends = np.asarray(endpoints, dtype=float)
    if ends.shape[0] < 100:
        raise UsageError(f"empirical diffusion matrix needs at least 100 replicas, got {ends.shape[0]}")
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    scaled = (ends - n * v_arr[None, :]) / math.sqrt(n)
    cov, stderr = fsum_cov(scaled)
    return DiffusionEstimate(cov, stderr, ends.shape[0], n)


def estimate_diffusion_empirical(
    spec: EnvironmentSpec, replicas: int, n: int, v: Any, master_seed: int = 0
) -> DiffusionEstimate:
    if replicas < 100:
        raise UsageError(f"empirical diffusion matrix needs at least 100 replicas, got {replicas}")
    ends = simulate_checkpoints(spec, [n], master_seed, range(replicas))[:, 0, :]
    return diffusion_from_endpoints(ends, n, v)


# -- Quenched variance exponent --


@dataclass
class ExponentFit:
    points: list[tuple[int, float]]
    status: str  # "ok", "degenerate (zero curve)" or "insufficient points"
    slope: float = float("nan")
    intercept: float = float("nan")
    half_width: float = float("nan")
    used: list[int] = field(default_factory=list)

    @property
    def alpha(self) -> float:
        """Fitted slope of the squared deviation, halved; 0 for a zero curve."""
        if self.status.startswith("degenerate"):
            return 0.0
        return self.slope / 2


def fit_exponent(
    points: Sequence[tuple[int, float]],
    zero_tol: float = ZERO_CURVE_TOL,
    min_points: int = MIN_FIT_POINTS,
    min_decades: float = MIN_FIT_DECADES,
) -> ExponentFit:
    """OLS slope of log(value) on log(n), smallest n dropped, 95% t half-width.

    Values at or below (zero_tol * n)^2 are treated as zero; they are left out
    of the fit, and a curve that is zero everywhere is reported as degenerate.
    """
    pts = sorted((int(n), float(val)) for n, val in points)
    nonzero = [(n, val) for n, val in pts if val > (zero_tol * n) ** 2]
    if not nonzero:
        return ExponentFit(pts, "degenerate (zero curve)", slope=0.0, intercept=float("-inf"), half_width=0.0)
    if len(nonzero) < len(pts):
        logger.debug("fit_exponent: %d zero point(s) left out of the fit", len(pts) - len(nonzero))
    usable = nonzero[1:]
    if len(usable) < min_points or math.log10(usable[-1][0] / usable[0][0]) < min_decades:
        return ExponentFit(pts, "insufficient points", used=[n for n, _ in usable])
    logn = np.log([n for n, _ in usable])
    logv = np.log([val for _, val in usable])
    fit = scipy.stats.linregress(logn, logv)
    half = float(scipy.stats.t.ppf(0.975, len(usable) - 2) * fit.stderr)
    return ExponentFit(pts, "ok", float(fit.slope), float(fit.intercept), half, [n for n, _ in usable])


@dataclass
class QuenchedVarianceCurve:
    points: list[tuple[int, float]]
    fit: ExponentFit
    v: np.ndarray
    env_replicas: int
    measure: str = "fresh-sample environment law"


def quenched_deviation_rows(
    spec: EnvironmentSpec, n_grid: Sequence[int], v: np.ndarray, env_seed: int, max_sites: int = DEFAULT_MAX_SITES
) -> np.ndarray:
    """|E_0^omega X_n - n v|^2 at every grid n for one environment."""
    qm = quenched_mean(EnvironmentView(spec.with_seed(env_seed)), int(max(n_grid)), max_sites)
    grid = np.asarray(n_grid, dtype=np.int64)
    dev = qm.means[grid] - grid[:, None] * v[None, :]
    return (dev**2).sum(axis=1)


def quenched_variance_curve(
    spec: EnvironmentSpec,
    n_grid: Sequence[int],
    env_replicas: int,
    master_seed: int = 0,
    v: Any | None = None,
    max_sites: int = DEFAULT_MAX_SITES,
) -> QuenchedVarianceCurve:
    """Average over fresh environments of |E_0^omega X_n - n v|^2 with its log-log fit."""
    if env_replicas < 1:
        raise UsageError("need at least one environment replica")
    if v is None:
        exact = exact_drift(spec)
        v = exact if exact is not None else annealed_mean_drift(spec)
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    rows = np.array(
        [
            quenched_deviation_rows(spec, n_grid, v_arr, derive_seed(master_seed, r, "environment"), max_sites)
            for r in range(env_replicas)
        ]
    )
    return curve_from_rows(rows, n_grid, v_arr)


def curve_from_rows(rows: np.ndarray, n_grid: Sequence[int], v: np.ndarray) -> QuenchedVarianceCurve:
    means = fsum_mean(rows)
    points = [(int(n), float(val)) for n, val in zip(n_grid, means)]
    return QuenchedVarianceCurve(points, fit_exponent(points), v, rows.shape[0])


def quenched_center_deviation(means: np.ndarray, v: Any) -> float:
    """n^{-1/2} max_{k<=n} |E_0^omega X_k - k v|."""
    means = np.asarray(means, dtype=float)
    n = means.shape[0] - 1
    if n < 1:
        raise UsageError("need at least one step")
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    dev = means - np.arange(n + 1)[:, None] * v_arr[None, :]
    return float(np.max(np.linalg.norm(dev, axis=1)) / math.sqrt(n))


# -- Small set --


@dataclass
class SmallSetReport:
    passed: bool
    l: int | None
    lam: float
    mu: list[float]
    violations: list[tuple[int, int, float, float]] = field(default_factory=list)
    lam_by_l: dict[int, float] = field(default_factory=dict)
    message: str = ""


def _check_mu(mu: Any, size: int) -> np.ndarray:
    arr = np.full(size, 1.0 / size) if mu is None else np.asarray(mu, dtype=float)
    if arr.shape != (size,) or np.any(arr < 0) or abs(math.fsum(arr) - 1.0) > 1e-12:
        raise UsageError(f"mu must be a probability vector over {size} phases")
    return arr


def verify_minorization(
    chain: PhaseChain, l: int, lam: float, mu: Any | None = None, tol: float = 1e-12
) -> list[tuple[int, int, float, float]]:
    """Phase pairs (p, q, Pi^l(p, q), lam * mu(q)) where Pi^l(p, q) >= lam * mu(q) fails."""
    if l < 1:
        raise UsageError("l must be >= 1")
    mu_arr = _check_mu(mu, chain.n_states)
    power = np.linalg.matrix_power(chain.transition, l)
    bound = lam * mu_arr[None, :]
    bad = np.argwhere(power < bound - tol)
    return [(int(p), int(q), float(power[p, q]), float(bound[0, q])) for p, q in bad]


def _max_lambda(power: np.ndarray, mu: np.ndarray) -> float:
    support = mu > 0
    return float(np.min(power[:, support] / mu[None, support]))


def check_small_set(
    chain: PhaseChain,
    l: int | None = None,
    lam: float | None = None,
    mu: Any | None = None,
    l_max: int = 10,
) -> SmallSetReport:
    """Doeblin-type check Pi^l(p, q) >= lam * mu(q) on every phase pair.

    With ``l`` and ``lam`` given the inequality is verified as stated. Otherwise
    the smallest l <= l_max with a positive feasible lam is searched, with lam
    maximal for the given mu (uniform by default).
    """
    chain.check()
    mu_arr = _check_mu(mu, chain.n_states)
    if l is not None and lam is not None:
        if not 0 < lam <= 1:
            raise UsageError(f"lambda must lie in (0, 1], got {lam}")
        violations = verify_minorization(chain, l, lam, mu_arr)
        msg = "minorization holds" if not violations else f"{len(violations)} violating phase pair(s)"
        return SmallSetReport(not violations, l, float(lam), mu_arr.tolist(), violations, message=msg)

    lam_by_l: dict[int, float] = {}
    power = np.eye(chain.n_states)
    for step in range(1, l_max + 1):
        power = power @ chain.transition
        lam_by_l[step] = _max_lambda(power, mu_arr)
        if lam_by_l[step] > 0:
            found = min(lam_by_l[step], 1.0)
            violations = verify_minorization(chain, step, found, mu_arr)
            return SmallSetReport(
                not violations, step, found, mu_arr.tolist(), violations, lam_by_l, f"l={step}, lambda={found:.6g}"
            )
    best = max(lam_by_l.values())
    logger.info("No l <= %d gives a positive lambda for this mu; the check is inconclusive", l_max)
    return SmallSetReport(
        False, None, best, mu_arr.tolist(), [], lam_by_l,
        f"no l <= {l_max} gives lambda > 0 for this mu (inconclusive for other mu)",
    )
