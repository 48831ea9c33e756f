import numpy as np
import pytest

from amidlab.datagen import GenConfig, generate_scenario, prepare_dataset


@pytest.fixture(scope="session")
def small_scenario():
    cfg = GenConfig(users_per_domain=40, items_per_domain=30, max_seq_len=12)
    return generate_scenario(cfg, seed=3)


@pytest.fixture(scope="session")
def small_data(small_scenario):
    n = small_scenario.config.items_per_domain
    return prepare_dataset(small_scenario.to_events(), T=5, k_u=0.5, seed=3, num_items=[n, n])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
