"""Helpers for running experiment plug-ins in-process without the run directory machinery."""

from __future__ import annotations

import pytest

from rwrelab.config import build_config
from rwrelab.experiments import make_experiment


@pytest.fixture
def run_plugin():
    def _run(environment, experiment, **overrides):
        plugin = make_experiment(build_config({"environment": environment, "experiment": experiment, **overrides}))
        plugin.check()
        return plugin, plugin.aggregate(plugin.run_chunk(plugin.replica_indices()))

    return _run
