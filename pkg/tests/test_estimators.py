import numpy as np
import pytest

from rwrelab.acceptance import ODD_GRID
from rwrelab.corrector import PhaseChain, build_phase_chain, centred_drift, solve_limit
from rwrelab.env import EnvironmentView
from rwrelab.errors import UsageError
from rwrelab.estimators import (
    COVARIANCE_LABEL,
    MARTINGALE_LABEL,
    check_small_set,
    conditional_covariance,
    covariance_deviation,
    diffusion_from_endpoints,
    drift_from_endpoints,
    estimate_diffusion_empirical,
    estimate_drift,
    fit_exponent,
    matrix_norm,
    quenched_center_deviation,
    quenched_variance_curve,
    verify_minorization,
)
from rwrelab.walk import quenched_mean, simulate_annealed


class TestDrift:
    def test_deterministic(self, deterministic):
        est = estimate_drift(deterministic, replicas=200, n=2000, master_seed=3)
        assert est.exact == pytest.approx([0.4])
        assert abs(est.v_hat[0] - 0.4) <= 4 * est.stderr[0]
        assert est.replicas == 200

    def test_random_environment_has_no_exact_value(self, dirichlet):
        est = estimate_drift(dirichlet, replicas=20, n=100)
        assert est.exact is None
        assert np.isfinite(est.v_hat).all()

    def test_needs_two_replicas(self):
        with pytest.raises(UsageError):
            drift_from_endpoints(np.array([[10.0]]), 10)

    def test_needs_positive_n(self, srw1):
        with pytest.raises(UsageError):
            estimate_drift(srw1, replicas=5, n=0)


class TestConditionalCovariance:
    def test_period2_closed_form(self, period2):
        chain = build_phase_chain(period2)
        g, _ = centred_drift(chain)
        track = conditional_covariance(simulate_annealed(period2, 100, 0, 0), chain=chain, h=solve_limit(chain, g))
        assert track.label == COVARIANCE_LABEL
        # phases alternate 0, 1, 0, ... with step variances 0.64 and 0.96
        assert track.A[0, 0, 0] == 0.0
        assert track.A[1, 0, 0] == pytest.approx(0.64)
        assert track.A[2, 0, 0] == pytest.approx(1.6)
        assert track.A[100, 0, 0] == pytest.approx(80.0)
        assert np.array_equal(track.traces, track.A[:, 0, 0])

    def test_without_chain_is_martingale_part(self, period2):
        traj = simulate_annealed(period2, 50, 0, 1)
        track = conditional_covariance(traj)
        assert track.label == MARTINGALE_LABEL
        assert track.A[50, 0, 0] == pytest.approx(40.0)

    def test_chain_without_corrector_is_martingale_part(self, period2):
        chain = build_phase_chain(period2)
        track = conditional_covariance(simulate_annealed(period2, 10, 0, 0), chain=chain)
        assert track.label == MARTINGALE_LABEL

    def test_srw_trace_grows_linearly(self, srw2):
        track = conditional_covariance(simulate_annealed(srw2, 40, 0, 0))
        assert track.traces == pytest.approx(np.arange(41, dtype=float))

    def test_environment_mismatch(self, period2, deterministic):
        traj = simulate_annealed(period2, 10, 0, 0)
        with pytest.raises(UsageError):
            conditional_covariance(traj, env=EnvironmentView(deterministic))

    def test_deviation_from_diffusion(self, period2):
        track = conditional_covariance(simulate_annealed(period2, 20, 0, 0))
        devs = dict(covariance_deviation(track, [[0.8]], ks=[1, 2, 3, 10, 11]))
        assert devs[1] == pytest.approx(0.16)
        assert devs[2] == pytest.approx(0.0, abs=1e-12)
        assert devs[3] == pytest.approx(0.16 / 3)
        assert devs[10] == pytest.approx(0.0, abs=1e-12)
        assert devs[11] == pytest.approx(0.16 / 11)

    def test_deviation_rejects_k_outside_track(self, period2):
        track = conditional_covariance(simulate_annealed(period2, 5, 0, 0))
        with pytest.raises(UsageError):
            covariance_deviation(track, [[0.8]], ks=[6])


class TestMatrixNorm:
    def test_diagonal(self):
        assert matrix_norm(np.diag([3.0, -1.0])) == pytest.approx(3.0, rel=1e-9)

    def test_matches_singular_value(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert matrix_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-8)

    def test_zero(self):
        assert matrix_norm(np.zeros((3, 3))) == 0.0

    def test_rejects_vectors(self):
        with pytest.raises(UsageError):
            matrix_norm(np.ones(3))


class TestDiffusion:
    def test_srw_2d(self, srw2):
        est = estimate_diffusion_empirical(srw2, replicas=400, n=400, v=[0.0, 0.0], master_seed=1)
        assert est.matrix.shape == (2, 2)
        assert np.all(np.abs(est.matrix - np.eye(2) / 2) <= 5 * est.stderr + 1e-12)

    def test_needs_100_replicas(self):
        with pytest.raises(UsageError, match="100"):
            diffusion_from_endpoints(np.zeros((50, 1)), 10, [0.0])


class TestFitExponent:
    def test_linear_curve(self):
        grid = [int(n) for n in np.geomspace(10, 1e5, 9)]
        fit = fit_exponent([(n, 3.0 * n) for n in grid])
        assert fit.status == "ok"
        assert fit.slope == pytest.approx(1.0, abs=1e-3)
        assert fit.alpha == pytest.approx(0.5, abs=1e-3)
        assert fit.used == grid[1:]

    def test_zero_curve_is_degenerate(self):
        fit = fit_exponent([(n, 0.0) for n in (10, 100, 1000)])
        assert fit.status.startswith("degenerate")
        assert fit.alpha == 0.0

    def test_too_few_points(self):
        fit = fit_exponent([(10, 1.0), (100, 10.0), (1000, 100.0)])
        assert fit.status == "insufficient points"


class TestQuenchedVariance:
    def test_deterministic_curve_is_zero(self, deterministic):
        curve = quenched_variance_curve(deterministic, [10, 100, 1000], env_replicas=1)
        assert curve.fit.status.startswith("degenerate")
        assert curve.fit.alpha == 0.0

    def test_period2_odd_grid(self, period2):
        curve = quenched_variance_curve(period2, ODD_GRID, env_replicas=1)
        assert [val for _, val in curve.points] == pytest.approx([0.16] * len(ODD_GRID), abs=1e-9)
        assert curve.fit.status == "ok"
        assert curve.fit.alpha == pytest.approx(0.0, abs=1e-6)

    def test_random_environment(self, dirichlet):
        curve = quenched_variance_curve(dirichlet, [10, 20, 40], env_replicas=3, master_seed=2)
        assert curve.env_replicas == 3
        assert all(val >= 0 for _, val in curve.points)
        assert curve.v == pytest.approx([-0.5])

    def test_centre_deviation(self, period2):
        qm = quenched_mean(EnvironmentView(period2), 11)
        assert quenched_center_deviation(qm.means, [0.2]) == pytest.approx(0.4 / np.sqrt(11))


class TestSmallSet:
    def test_lazy_period2_search(self, lazy_period2):
        report = check_small_set(build_phase_chain(lazy_period2))
        assert report.passed
        assert report.l == 2
        assert report.lam == pytest.approx(0.5)
        assert report.lam_by_l[1] == 0.0

    def test_strict_period2_is_inconclusive(self, period2):
        report = check_small_set(build_phase_chain(period2), l_max=6)
        assert not report.passed
        assert report.l is None
        assert report.lam == 0.0
        assert "inconclusive" in report.message

    def test_given_constants(self, lazy_period2):
        chain = build_phase_chain(lazy_period2)
        assert check_small_set(chain, l=2, lam=0.5).passed
        report = check_small_set(chain, l=2, lam=0.6)
        assert not report.passed
        assert [(p, q) for p, q, _, _ in report.violations] == [(0, 1)]

    def test_custom_mu(self):
        chain = PhaseChain.from_transition([[0.5, 0.5], [1.0, 0.0]])
        assert verify_minorization(chain, 1, 0.5, mu=[1.0, 0.0]) == []

    def test_invalid_arguments(self, lazy_period2):
        chain = build_phase_chain(lazy_period2)
        with pytest.raises(UsageError):
            check_small_set(chain, l=2, lam=1.5)
        with pytest.raises(UsageError):
            check_small_set(chain, mu=[0.7, 0.7])
        with pytest.raises(UsageError):
            verify_minorization(chain, 0, 0.5)
