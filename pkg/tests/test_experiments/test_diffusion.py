import numpy as np
import pytest

from rwrelab.acceptance import PERIOD2, SRW2
from rwrelab.config import build_config
from rwrelab.errors import UsageError
from rwrelab.experiments import make_experiment


class TestDiffusionExperiment:
    def test_period2(self, run_plugin):
        plugin, result = run_plugin(PERIOD2, "diffusion", n_grid=[200], replicas=150)
        assert result.success
        assert np.allclose(result.summary["exact"], [[0.8]])
        assert result.summary["v"] == pytest.approx([0.2])
        assert result.summary["v_source"] == "stationary phase average"
        assert len(result.tables["diffusion"]) == 1

    def test_two_dimensions(self, run_plugin):
        _, result = run_plugin(SRW2, "diffusion", n_grid=[50, 100], replicas=120)
        assert np.allclose(result.summary["exact"], np.eye(2) / 2)
        assert len(result.tables["diffusion"]) == 8

    def test_needs_100_replicas(self):
        plugin = make_experiment(build_config({"environment": PERIOD2, "experiment": "diffusion", "replicas": 20}))
        with pytest.raises(UsageError, match="100"):
            plugin.check()
