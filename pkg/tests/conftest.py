import numpy as np
import pytest

from fedquad.config import ExperimentConfig
from fedquad.settings import with_overrides


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run multi-seed experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(out_dir, **overrides) -> ExperimentConfig:
    """A few seconds' worth of blobs federation."""
    base = {
        "dataset.num_classes": 4,
        "dataset.per_class": 40,
        "dataset.test_per_class": 10,
        "dataset.dim": 8,
        "model.kind": "mlp",
        "model.hidden_dims": [16],
        "model.embedding_dim": 8,
        "federation.num_clients": 4,
        "federation.rounds": 3,
        "federation.local_epochs": 1,
        "federation.batch_size": 32,
        "output.dir": str(out_dir),
        "output.eval_max_samples": 50,
    }
    base.update(overrides)
    return with_overrides(ExperimentConfig(), **base)


@pytest.fixture
def make_config(tmp_path):
    def make(name="run", **overrides):
        return small_config(tmp_path / name, **overrides)
    return make
