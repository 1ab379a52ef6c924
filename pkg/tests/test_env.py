import math

import numpy as np
import pytest

from rwrelab.acceptance import BALANCED, DETERMINISTIC, LAZY_PERIOD2, PERIOD2, SRW2
from rwrelab.env import (
    EnvironmentSpec,
    EnvironmentView,
    JumpKernel,
    PeriodicModel,
    _random_site_kernel,
    annealed_mean_drift,
    assert_finite_range,
    ball_offsets,
    kernel_at,
    local_drift,
    phase_table,
    shift,
    simple_random_walk_kernel,
    spec_from_dict,
    spec_hash,
    spec_to_dict,
)
from rwrelab.errors import ConfigError, FiniteRangeError, UsageError
from rwrelab.utils import walk_rng


class TestJumpKernel:
    def test_drift_and_covariance(self):
        k = JumpKernel.from_pairs([(1, 0.7), (-1, 0.3)])
        assert k.drift == pytest.approx([0.4], abs=1e-15)
        assert k.covariance == pytest.approx(np.array([[0.84]]), abs=1e-15)

    def test_rejects_bad_probabilities(self):
        with pytest.raises(UsageError):
            JumpKernel.from_pairs([(1, 0.7), (-1, 0.2)])
        with pytest.raises(UsageError):
            JumpKernel.from_pairs([(1, 1.2), (-1, -0.2)])

    def test_rejects_repeated_offsets(self):
        with pytest.raises(UsageError):
            JumpKernel.from_pairs([(1, 0.5), (1, 0.5)])

    def test_sampling_table_skips_zero_mass(self):
        k = JumpKernel.from_pairs([(-1, 0.0), (0, 0.5), (1, 0.5)])
        assert k.table.steps == ((0,), (1,))
        assert k.table.cdf[-1] == 1.0

    def test_simple_random_walk(self):
        k = simple_random_walk_kernel(3)
        assert len(k.offsets) == 6
        assert np.allclose(k.drift, 0)
        assert np.allclose(k.covariance, np.eye(3) / 3)


class TestBallOffsets:
    def test_unit_ball_2d(self):
        assert ball_offsets(2, 1) == ((-1, 0), (0, -1), (0, 1), (1, 0))

    def test_include_zero(self):
        assert (0,) in ball_offsets(1, 2, include_zero=True)
        assert len(ball_offsets(1, 2)) == 4


class TestSpec:
    def test_canonical_dict_order(self, period2):
        assert list(spec_to_dict(period2)) == ["dim", "range", "model", "model_params", "seed"]

    def test_from_dict_of_to_dict(self, dirichlet2d):
        again = spec_from_dict(spec_to_dict(dirichlet2d))
        assert again == dirichlet2d
        assert spec_hash(again) == spec_hash(dirichlet2d)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            spec_from_dict({"dim": 1, "range": 1, "model": "balanced", "colour": "red"})

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="unknown model"):
            spec_from_dict({"dim": 1, "range": 1, "model": "fractal"})

    def test_kernel_outside_range(self):
        data = {
            "dim": 1,
            "range": 1,
            "model": "deterministic",
            "model_params": {"kernel": {"offsets": [[2], [-1]], "probs": [0.5, 0.5]}},
        }
        with pytest.raises(ConfigError, match="exceeds range"):
            spec_from_dict(data)

    def test_periodic_needs_one_kernel_per_phase(self):
        data = {
            "dim": 1,
            "range": 1,
            "model": "periodic",
            "model_params": {"period": [3], "kernels": [{"offsets": [[1], [-1]], "probs": [0.5, 0.5]}]},
        }
        with pytest.raises(ConfigError, match="needs 3 kernels"):
            spec_from_dict(data)

    def test_hash_depends_on_seed(self, dirichlet):
        assert spec_hash(dirichlet) != spec_hash(dirichlet.with_seed(dirichlet.seed + 1))


class TestEnvironmentView:
    def test_shift_identity(self, dirichlet2d):
        env = EnvironmentView(dirichlet2d)
        z = (3, -2)
        moved = shift(env, z)
        for x in [(0, 0), (1, 0), (-4, 5)]:
            assert kernel_at(moved, x) == kernel_at(env, (x[0] + z[0], x[1] + z[1]))

    def test_site_kernels_are_reproducible(self, dirichlet2d):
        a = EnvironmentView(dirichlet2d)
        b = EnvironmentView(spec_from_dict(spec_to_dict(dirichlet2d)))
        assert kernel_at(a, (5, 5)) == kernel_at(b, (5, 5))

    def test_seed_changes_environment(self, dirichlet2d):
        a = EnvironmentView(dirichlet2d)
        b = EnvironmentView(dirichlet2d.with_seed(dirichlet2d.seed + 1))
        assert any(kernel_at(a, (x, 0)) != kernel_at(b, (x, 0)) for x in range(5))

    def test_sites_differ(self, dirichlet2d):
        env = EnvironmentView(dirichlet2d)
        assert len({kernel_at(env, (x, 0)).probs for x in range(10)}) > 1

    def test_wrong_dimension(self, dirichlet2d):
        with pytest.raises(UsageError):
            kernel_at(EnvironmentView(dirichlet2d), (1,))

    def test_periodic_phases(self, period2):
        env = EnvironmentView(period2)
        assert local_drift(env, 0) == pytest.approx([0.6])
        assert local_drift(env, 1) == pytest.approx([-0.2])
        assert local_drift(env, -3) == pytest.approx([-0.2])
        assert local_drift(shift(env, 1), 0) == pytest.approx([-0.2])

    def test_balanced_has_zero_drift(self, balanced):
        env = EnvironmentView(balanced)
        for x in range(-5, 6):
            assert np.allclose(local_drift(env, x), 0.0, atol=1e-15)

    def test_finite_range(self, dirichlet2d):
        report = assert_finite_range(EnvironmentView(dirichlet2d), [(x, y) for x in range(-3, 4) for y in range(-3, 4)])
        assert report.passed
        assert report.sites_checked == 49
        assert report.max_norm == 1.0


class TestAnnealedMeanDrift:
    def test_dirichlet(self, dirichlet):
        # offsets (-1, +1) with concentrations (3, 1)
        assert annealed_mean_drift(dirichlet) == pytest.approx([-0.5])

    def test_deterministic(self, deterministic):
        assert annealed_mean_drift(deterministic) == pytest.approx([0.4])

    def test_balanced(self, balanced):
        assert np.all(annealed_mean_drift(balanced) == 0)

    def test_iid_finite(self):
        spec = spec_from_dict(
            {
                "dim": 1,
                "range": 1,
                "model": "iid-finite",
                "model_params": {
                    "kernels": [
                        {"offsets": [[1], [-1]], "probs": [0.9, 0.1]},
                        {"offsets": [[1], [-1]], "probs": [0.3, 0.7]},
                    ],
                    "weights": [0.25, 0.75],
                },
            }
        )
        assert annealed_mean_drift(spec) == pytest.approx([0.25 * 0.8 - 0.75 * 0.4])


class TestPhaseTable:
    def test_random_models_have_none(self, dirichlet):
        assert phase_table(dirichlet) is None

    def test_periodic(self, period2):
        table = phase_table(period2)
        assert table.period == (2,)
        assert table.phases(np.array([[0], [1], [2], [-1]])).tolist() == [0, 1, 0, 1]
        cdf, steps = table.padded
        assert cdf.shape == (2, 2)
        assert steps.shape == (2, 2, 1)

    def test_deterministic_is_one_phase(self, deterministic):
        table = phase_table(deterministic)
        assert table.period == (1,)
        assert len(table.kernels) == 1


def _nn_kernel(probs):
    return {"offsets": [[1, 0], [-1, 0], [0, 1], [0, -1]], "probs": probs}


# One spec per model family, in one and two dimensions where the family allows it.
MODEL_FAMILIES = {
    "deterministic": DETERMINISTIC,
    "srw-2d": SRW2,
    "periodic": PERIOD2,
    "periodic-lazy": LAZY_PERIOD2,
    "periodic-2d": {
        "dim": 2,
        "range": 1,
        "model": "periodic",
        "model_params": {
            "period": [2, 3],
            "kernels": [
                _nn_kernel([0.4, 0.1, 0.25, 0.25]),
                _nn_kernel([0.25, 0.25, 0.4, 0.1]),
                _nn_kernel([0.1, 0.4, 0.25, 0.25]),
                _nn_kernel([0.25, 0.25, 0.1, 0.4]),
                _nn_kernel([0.3, 0.2, 0.3, 0.2]),
                _nn_kernel([0.25, 0.25, 0.25, 0.25]),
            ],
        },
    },
    "iid-dirichlet": {"dim": 1, "range": 1, "model": "iid-dirichlet", "model_params": {"concentration": [3.0, 1.0]}, "seed": 7},
    "iid-dirichlet-2d": {"dim": 2, "range": 1, "model": "iid-dirichlet", "model_params": {"concentration": 1.0}, "seed": 11},
    "iid-dirichlet-m2": {"dim": 1, "range": 2, "model": "iid-dirichlet", "model_params": {"concentration": 0.5}, "seed": 3},
    "balanced": BALANCED,
    "balanced-2d": {"dim": 2, "range": 1, "model": "balanced", "model_params": {"concentration": 2.0}, "seed": 5},
    "iid-finite": {
        "dim": 1,
        "range": 1,
        "model": "iid-finite",
        "model_params": {
            "kernels": [{"offsets": [[1], [-1]], "probs": [0.9, 0.1]}, {"offsets": [[1], [-1]], "probs": [0.3, 0.7]}],
            "weights": [0.25, 0.75],
        },
        "seed": 13,
    },
}


def _random_sites(rng, count, dim, spread=1000):
    return [tuple(int(c) for c in row) for row in rng.integers(-spread, spread + 1, size=(count, dim))]


@pytest.fixture(params=sorted(MODEL_FAMILIES))
def family(request):
    return spec_from_dict(MODEL_FAMILIES[request.param])


class TestModelInvariants:
    def test_kernels_are_probability_vectors_within_range(self, family):
        env = EnvironmentView(family)
        sites = _random_sites(walk_rng(101), 1000, family.dim)
        for x in sites:
            kernel = kernel_at(env, x)
            assert all(p >= 0 for p in kernel.probs)
            assert abs(math.fsum(kernel.probs) - 1.0) <= 1e-12
            assert kernel.dim == family.dim
        report = assert_finite_range(env, sites)
        assert report.passed
        assert report.sites_checked == 1000
        assert report.max_norm <= family.range

    def test_shift_equivariance(self, family):
        env = EnvironmentView(family)
        rng = walk_rng(202)
        shifts = _random_sites(rng, 100, family.dim)
        sites = _random_sites(rng, 100, family.dim)
        expected = [kernel_at(env, tuple(a + b for a, b in zip(x, z))) for z, x in zip(shifts, sites)]
        _random_site_kernel.cache_clear()
        for z, x, kernel in zip(shifts, sites, expected):
            moved = kernel_at(shift(env, z), x)
            assert moved.offsets == kernel.offsets
            assert moved.probs == kernel.probs

    def test_rebuilt_view_is_identical(self, family):
        sites = _random_sites(walk_rng(303), 100, family.dim)
        first = [kernel_at(EnvironmentView(family), x) for x in sites]
        _random_site_kernel.cache_clear()
        rebuilt = EnvironmentView(spec_from_dict(spec_to_dict(family)))
        assert [kernel_at(rebuilt, x) for x in sites] == first


class TestFiniteRange:
    def test_srw(self, srw1):
        report = assert_finite_range(EnvironmentView(srw1), range(-5, 6))
        assert report.max_norm == 1.0

    def test_dirichlet_fills_the_ball(self):
        spec = spec_from_dict(MODEL_FAMILIES["iid-dirichlet-m2"])
        report = assert_finite_range(EnvironmentView(spec), range(-20, 21))
        assert report.passed
        assert report.max_norm == 2.0

    def test_kernel_outside_range_is_reported(self):
        # Built directly, skipping the validation spec_from_dict would apply.
        wide = JumpKernel.from_pairs([(3, 0.5), (-1, 0.5)])
        narrow = JumpKernel.from_pairs([(1, 0.5), (-1, 0.5)])
        spec = EnvironmentSpec(1, 2, PeriodicModel((2,), (narrow, wide)))
        env = EnvironmentView(spec)
        with pytest.raises(FiniteRangeError, match=r"site \(1,\).*\|z\|=3"):
            assert_finite_range(env, range(4))

        report = assert_finite_range(env, range(4), strict=False)
        assert not report.passed
        assert report.max_norm == 3.0
        assert [site for site, _, _ in report.violations] == [(1,), (3,)]
