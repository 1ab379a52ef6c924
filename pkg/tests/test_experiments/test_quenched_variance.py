import pytest

from rwrelab.acceptance import BALANCED, DETERMINISTIC, ODD_GRID, PERIOD2
from rwrelab.config import build_config
from rwrelab.errors import ResourceError
from rwrelab.experiments import make_experiment


class TestQuenchedVarianceExperiment:
    def test_period2_flat_curve(self, run_plugin):
        _, result = run_plugin(PERIOD2, "quenched-variance", n_grid=ODD_GRID, replicas=2)
        assert result.passed
        assert result.summary["fit_status"] == "ok"
        assert result.summary["alpha_hat"] == pytest.approx(0.0, abs=1e-6)
        assert [row["mean_squared_deviation"] for row in result.tables["quenched_variance"]] == pytest.approx(
            [0.16] * len(ODD_GRID), abs=1e-9
        )

    @pytest.mark.parametrize("env", [BALANCED, DETERMINISTIC])
    def test_zero_curves(self, run_plugin, env):
        _, result = run_plugin(env, "quenched-variance", n_grid=[10, 100, 300], replicas=2)
        assert result.passed
        assert result.summary["fit_status"].startswith("degenerate")
        assert result.summary["measure"] == "fresh-sample environment law"

    def test_replicas_use_distinct_environments(self):
        plugin = make_experiment(build_config({"environment": BALANCED, "experiment": "quenched-variance",
                                               "n_grid": [5, 10], "replicas": 3}))
        rows = plugin.run_chunk(plugin.replica_indices())
        assert len({r["env_seed"] for r in rows}) == 3

    def test_site_budget(self):
        plugin = make_experiment(
            build_config({"environment": PERIOD2, "experiment": "quenched-variance", "n_grid": [10, 5000],
                          "quenched": {"max_sites": 1000}})
        )
        with pytest.raises(ResourceError, match="max_sites"):
            plugin.check()
