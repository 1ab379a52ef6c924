import pytest

from rwrelab.acceptance import LAZY_PERIOD2, PERIOD2
from rwrelab.config import build_config
from rwrelab.errors import UnsupportedModelError
from rwrelab.experiments import make_experiment


class TestSmallSetExperiment:
    def test_lazy_period2(self, run_plugin):
        _, result = run_plugin(LAZY_PERIOD2, "small-set", replicas=7)
        assert result.passed
        assert result.summary["l"] == 2
        assert result.summary["lam"] == pytest.approx(0.5)
        assert result.summary["chain"]["states"] == 2
        assert result.tables["small_set"] == [{"l": 1, "lambda": 0.0}, {"l": 2, "lambda": pytest.approx(0.5)}]
        assert result.tables["violations"] == []

    def test_strict_period2(self, run_plugin):
        _, result = run_plugin(PERIOD2, "small-set", small_set={"l_max": 4})
        assert result.success
        assert not result.passed
        assert result.summary["l"] is None
        assert len(result.tables["small_set"]) == 4

    def test_given_constants(self, run_plugin):
        _, result = run_plugin(LAZY_PERIOD2, "small-set", small_set={"l": 2, "lam": 0.6})
        assert not result.passed
        assert result.tables["violations"] == [{"p": 0, "q": 1, "value": pytest.approx(0.25), "bound": pytest.approx(0.3)}]

    def test_one_unit_of_work(self):
        plugin = make_experiment(build_config({"environment": LAZY_PERIOD2, "experiment": "small-set", "replicas": 50}))
        assert plugin.replica_indices() == [0]

    def test_needs_finite_chain(self):
        env = {"dim": 1, "range": 1, "model": "iid-dirichlet", "model_params": {"concentration": 1.0}}
        plugin = make_experiment(build_config({"environment": env, "experiment": "small-set"}))
        with pytest.raises(UnsupportedModelError):
            plugin.check()
