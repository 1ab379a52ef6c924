import pytest

from rwrelab.config import KINDS, build_config
from rwrelab.errors import UsageError
from rwrelab.experiments import EXPERIMENTS, make_experiment


def test_every_kind_has_a_plugin():
    assert sorted(EXPERIMENTS) == sorted(KINDS)


@pytest.mark.parametrize("kind", KINDS)
def test_make_experiment(kind):
    plugin = make_experiment(build_config({"experiment": kind}))
    assert plugin.kind == kind


def test_unknown_kind():
    cfg = build_config({})
    cfg.experiment = "wander"
    with pytest.raises(UsageError, match="unknown experiment"):
        make_experiment(cfg)
