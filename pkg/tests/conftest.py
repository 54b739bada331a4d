import numpy as np
import pytest

from transhuman.data import DataConfig, gen_data


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two frames, 64x64, sparse body: enough for loop/CLI tests in seconds."""
    root = tmp_path_factory.mktemp("small") / "data"
    return gen_data(root, DataConfig(frames=2, image_size=64, n_vertices=600), seed=3)
