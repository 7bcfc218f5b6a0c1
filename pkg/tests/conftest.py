import numpy as np
import pytest

from src.checks import tiny_model_config
from src.router import LidEmbedding, default_similarity, synth_lid_embeddings
from src.synthdata import build_profiles, make_teachers, sample_dataset, sample_source_dataset
from src.tensorcore import rng_stream
from src.toymodel import ToyModel


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the slow trend experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    return tiny_model_config(("en", "fr"))


@pytest.fixture
def tiny_lid(tiny_config):
    return synth_lid_embeddings(np.array([[1.0, 0.41], [0.41, 1.0]]), tiny_config.languages, tiny_config.d_lid, 0)


@pytest.fixture
def tiny_model(tiny_config):
    return ToyModel.initialize(tiny_config, seed=0)


@pytest.fixture
def tiny_teachers(tiny_config):
    sim = default_similarity(tiny_config.languages)
    return make_teachers(sim, 1.0, 1.0, 0, config=tiny_config, rank=2)


@pytest.fixture
def tiny_data(tiny_teachers, tiny_config):
    """(train, eval, source_train, source_eval) for the two tiny languages."""
    profiles = build_profiles(tiny_config.languages, {"en": 24, "fr": 6}, 6)
    return (
        sample_dataset(tiny_teachers, profiles, 0, "train"),
        sample_dataset(tiny_teachers, profiles, 0, "eval"),
        sample_source_dataset(tiny_teachers, {"en": 16}, 0, "train"),
        sample_source_dataset(tiny_teachers, {"en": 6}, 0, "eval"),
    )


@pytest.fixture
def random_lid(tiny_config):
    rng = rng_stream(0, "tests", "lid")
    return {l: LidEmbedding(l, rng.standard_normal(tiny_config.d_lid)) for l in tiny_config.languages}
