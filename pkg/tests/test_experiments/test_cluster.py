import pytest

from rwrelab.acceptance import SRW1, SRW2
from rwrelab.config import build_config
from rwrelab.errors import ResourceError, UsageError
from rwrelab.experiments import make_experiment


def _cluster(**overrides):
    data = {
        "environment": SRW2,
        "experiment": "cluster",
        "n_grid": [100, 200, 400, 800],
        "replicas": 3,
        "cluster": {"limits": [200, 800], "probes": ["line", "diagonal"]},
    }
    data.update(overrides)
    return data


class TestClusterExperiment:
    def test_srw2(self, run_plugin):
        data = _cluster()
        _, result = run_plugin(data.pop("environment"), data.pop("experiment"), **data)
        assert result.success
        # minimum over a growing window of n cannot increase
        assert result.summary["monotone_fraction"] == {"line": 1.0, "diagonal": 1.0}
        assert result.summary["clock"] == "conditional covariance"
        assert [row["n"] for row in result.tables["strassen"]] == [100, 200, 400, 800]
        assert len(result.tables["probes"]) == 4

    def test_replica_fields(self):
        plugin = make_experiment(build_config(_cluster()))
        row = plugin.replica(0)
        assert len(row["k_distance"]) == 4
        assert all(d >= 0 for d in row["k_distance"])
        assert set(row["probe_distance"]) == {"line", "diagonal"}
        assert len(row["probe_distance"]["line"]) == 2

    def test_quenched_centring(self, run_plugin):
        _, result = run_plugin(
            SRW1, "cluster", n_grid=[50, 100], replicas=2, cluster={"limits": [100], "probes": ["line"]},
            quenched={"centering": "quenched"},
        )
        assert result.summary["centring"] == "quenched"

    def test_limits_outside_grid(self):
        plugin = make_experiment(build_config(_cluster(cluster={"limits": [50, 800]})))
        with pytest.raises(UsageError, match="limits"):
            plugin.check()

    def test_probe_dimension_mismatch(self):
        plugin = make_experiment(build_config(_cluster(cluster={"limits": [200], "probes": ["tent_d1"]})))
        with pytest.raises(UsageError, match="dimension"):
            plugin.check()

    def test_quenched_centring_over_budget(self):
        plugin = make_experiment(
            build_config(
                {
                    "environment": SRW1,
                    "experiment": "cluster",
                    "n_grid": [50, 100],
                    "cluster": {"limits": [100], "probes": ["line"]},
                    "quenched": {"centering": "quenched", "max_sites": 100},
                }
            )
        )
        with pytest.raises(ResourceError, match="max_sites") as err:
            plugin.check()
        assert err.value.exit_code == 3
