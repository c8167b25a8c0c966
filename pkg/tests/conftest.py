import numpy as np
import pytest

from esdt.specs import PolicySpec


@pytest.fixture
def tiny_ff_spec():
    return PolicySpec(kind="feedforward", obs_dim=1, act_dim=1)


@pytest.fixture
def small_ff_spec():
    return PolicySpec(kind="feedforward", obs_dim=3, act_dim=2, hidden_layers=(4,))


@pytest.fixture
def tiny_dt_spec():
    return PolicySpec(
        kind="decision_transformer", obs_dim=2, act_dim=1,
        embed_dim=8, n_layers=1, n_heads=1, context_len=4, max_episode_len=32,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
