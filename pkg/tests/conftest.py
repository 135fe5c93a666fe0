import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphood.config import PipelineConfig
from graphood.data import gen_synthetic, normalize_features


@pytest.fixture(scope="session")
def default_config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def default_dataset(default_config):
    return gen_synthetic(default_config.synthetic)


@pytest.fixture(scope="session")
def normalized_dataset(default_dataset):
    return normalize_features(default_dataset)


@pytest.fixture(scope="session")
def default_run(default_config, tmp_path_factory):
    """One full pipeline run on the default benchmark, shared across tests."""
    from graphood.pipeline import run_pipeline

    out = tmp_path_factory.mktemp("default_run")
    report = run_pipeline(default_config, str(out))
    return out, report
