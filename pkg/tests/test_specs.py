import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esdt.errors import LayoutError, SpecError
from esdt.specs import (
    FFN_WIDTH_MULT,
    PolicySpec,
    flatten,
    init_params,
    layout,
    param_count,
    unflatten,
)


def test_param_count_feedforward_example():
    spec = PolicySpec(kind="feedforward", obs_dim=3, act_dim=2, hidden_layers=(4,))
    assert param_count(spec) == 3 * 4 + 4 + 4 * 2 + 2  # 26


def test_param_count_smallest_network(tiny_ff_spec):
    assert param_count(tiny_ff_spec) == 2


def oracle_dt_param_count(spec):
    """Independent layout walk: enumerate every tensor and sum sizes."""
    d = spec.embed_dim
    total = 0
    total += 1 * d + d          # rtg embedding
    total += spec.obs_dim * d + d
    total += spec.act_dim * d + d
    total += spec.max_episode_len * d
    per_block = 0
    per_block += 2 * d          # ln1
    per_block += 4 * (d * d + d)  # q, k, v, o projections
    per_block += 2 * d          # ln2
    per_block += d * (FFN_WIDTH_MULT * d) + FFN_WIDTH_MULT * d
    per_block += (FFN_WIDTH_MULT * d) * d + d
    total += spec.n_layers * per_block
    total += d * spec.act_dim + spec.act_dim  # decoder
    return total


def test_param_count_decision_transformer_oracle():
    spec = PolicySpec(
        kind="decision_transformer", obs_dim=2, act_dim=1,
        embed_dim=8, n_layers=1, n_heads=1, context_len=4, max_episode_len=16,
    )
    assert param_count(spec) == oracle_dt_param_count(spec)


def test_param_count_matches_oracle_on_bigger_spec():
    spec = PolicySpec(
        kind="decision_transformer", obs_dim=5, act_dim=3,
        embed_dim=16, n_layers=3, n_heads=4, context_len=8, max_episode_len=50,
    )
    assert param_count(spec) == oracle_dt_param_count(spec)


def test_invalid_specs_rejected():
    with pytest.raises(SpecError):
        PolicySpec(kind="feedforward", obs_dim=0, act_dim=1)
    with pytest.raises(SpecError):
        PolicySpec(kind="recurrent", obs_dim=1, act_dim=1)
    with pytest.raises(SpecError):
        PolicySpec(kind="decision_transformer", obs_dim=1, act_dim=1,
                   embed_dim=6, n_layers=1, n_heads=4, context_len=2, max_episode_len=4)


def test_unflatten_documented_ordering(tiny_ff_spec):
    views = unflatten(np.array([2.0, 0.5]), tiny_ff_spec)
    assert views["layer0_w"][0, 0] == 2.0
    assert views["layer0_b"][0] == 0.5


def test_roundtrip_identity(small_ff_spec, rng):
    vec = rng.standard_normal(param_count(small_ff_spec))
    assert np.array_equal(flatten(unflatten(vec, small_ff_spec), small_ff_spec), vec)


def test_length_mismatch_is_layout_error(small_ff_spec):
    with pytest.raises(LayoutError):
        unflatten(np.zeros(param_count(small_ff_spec) - 1), small_ff_spec)


def test_unflatten_views_share_memory(small_ff_spec):
    vec = np.zeros(param_count(small_ff_spec))
    views = unflatten(vec, small_ff_spec)
    views["layer0_w"][0, 0] = 7.0
    assert vec[0] == 7.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_roundtrip_property_dt(seed):
    spec = PolicySpec(
        kind="decision_transformer", obs_dim=2, act_dim=1,
        embed_dim=8, n_layers=1, n_heads=1, context_len=4, max_episode_len=32,
    )
    vec = np.random.default_rng(seed).standard_normal(param_count(spec))
    assert np.array_equal(flatten(unflatten(vec, spec), spec), vec)


def test_layout_sizes_consistent(tiny_dt_spec):
    total = sum(int(np.prod(shape)) for _, shape in layout(tiny_dt_spec))
    assert total == param_count(tiny_dt_spec)


def test_init_params_deterministic(tiny_dt_spec):
    a = init_params(tiny_dt_spec, 7)
    b = init_params(tiny_dt_spec, 7)
    c = init_params(tiny_dt_spec, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
