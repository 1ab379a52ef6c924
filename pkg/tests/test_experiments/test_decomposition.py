import numpy as np
import pytest

from rwrelab.acceptance import PERIOD2
from rwrelab.config import build_config
from rwrelab.errors import UnsupportedModelError, UsageError
from rwrelab.experiments import make_experiment
from rwrelab.experiments.decomposition import identity_tolerance

DIRICHLET = {"dim": 1, "range": 1, "model": "iid-dirichlet", "model_params": {"concentration": [3.0, 1.0]}}


class TestDecompositionExperiment:
    @pytest.mark.parametrize("eps", [0.0, 0.1])
    def test_period2_exact(self, run_plugin, eps):
        _, result = run_plugin(PERIOD2, "decomposition", n_grid=[500], replicas=6, corrector={"epsilon": eps})
        assert result.passed
        assert result.summary["max_identity_residual"] <= 1e-9
        assert result.summary["resolvent_residual"] <= 1e-12
        assert len(result.tables["decomposition"]) == 6
        assert len(result.criteria) == (2 if eps == 0 else 1)

    def test_period2_limit_corrector_has_no_increments(self, run_plugin):
        _, result = run_plugin(PERIOD2, "decomposition", n_grid=[100], replicas=2)
        assert np.allclose(result.summary["corrector"], [[0.2], [-0.2]])
        assert result.summary["max_abs_H"] <= 1e-14
        assert result.summary["max_abs_R"] <= 0.4 + 1e-12

    def test_series_on_random_environment(self, run_plugin):
        _, result = run_plugin(
            DIRICHLET, "decomposition", n_grid=[20], replicas=2,
            corrector={"method": "series", "epsilon": 1.0, "series_budget": 10},
        )
        assert result.success
        assert result.summary["method"] == "series"
        assert result.summary["series"]["budget"] == 10
        assert result.criteria == {}

    def test_series_needs_positive_epsilon(self):
        plugin = make_experiment(
            build_config({"environment": DIRICHLET, "experiment": "decomposition", "corrector": {"method": "series"}})
        )
        with pytest.raises(UsageError, match="epsilon"):
            plugin.check()

    def test_exact_needs_finite_chain(self):
        plugin = make_experiment(build_config({"environment": DIRICHLET, "experiment": "decomposition"}))
        with pytest.raises(UnsupportedModelError):
            plugin.check()

    def test_tolerance_scales_with_n(self):
        assert identity_tolerance(100) == 1e-9
        assert identity_tolerance(100_000) == pytest.approx(1e-8)
