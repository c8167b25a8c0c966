import numpy as np
import pytest

from esdt.envs import (
    KeyCorridorEnv,
    PointTargetEnv,
    ProportionalController,
    SignalFollower,
    evaluate,
    make_env,
    rollout,
)
from esdt.errors import EnvError


class ZeroPolicy:
    def __init__(self, act_dim):
        self.act_dim = act_dim

    def reset(self, rtg_cfg=None):
        pass

    def act(self, obs):
        return np.zeros(self.act_dim)

    def observe(self, obs, action, reward):
        pass


def test_make_env_unknown_name():
    with pytest.raises(EnvError):
        make_env("cartpole")


def test_point_target_reset_on_unit_circle():
    env = PointTargetEnv()
    for seed in range(10):
        obs = env.reset(seed)
        assert np.linalg.norm(obs) == pytest.approx(1.0)
    assert np.array_equal(env.reset(3), env.reset(3))


def test_point_target_zero_policy_return():
    """Standing still keeps distance 1, so the return is exactly -horizon."""
    env = PointTargetEnv()
    r = rollout(ZeroPolicy(2), env, seed=0)
    assert r.ret == pytest.approx(-float(env.horizon))
    assert r.steps == env.horizon


def test_point_target_action_clipped():
    env = PointTargetEnv()
    env.reset(0)
    start = env.pos.copy()
    step = env.step(np.array([100.0, -100.0]))
    np.testing.assert_allclose(env.pos, start + 0.25 * np.array([1.0, -1.0]))
    assert step.reward == pytest.approx(-np.linalg.norm(env.pos))


def test_point_target_teacher_contracts():
    """velocity = -pos shrinks the distance by a factor 0.75 each step."""
    env = PointTargetEnv()
    teacher = ProportionalController()
    r = rollout(teacher, env, seed=5, collect=True)
    dists = [abs(rw) for _, _, rw in r.trajectory]
    for a, b in zip(dists, dists[1:]):
        if a > 1e-9:
            assert b / a == pytest.approx(0.75, abs=1e-6)
    # geometric series: sum 0.75^k for k=1..T
    expected = -sum(0.75 ** k for k in range(1, env.horizon + 1))
    assert r.ret == pytest.approx(expected, abs=1e-9)
    assert r.ret > -5.0


def test_point_target_step_after_done_errors():
    env = PointTargetEnv()
    rollout(ZeroPolicy(2), env, seed=0)
    with pytest.raises(EnvError):
        env.step(np.zeros(2))


def test_key_corridor_signal_is_seed_parity():
    env = KeyCorridorEnv()
    assert env.reset(4)[1] == 1.0
    assert env.reset(7)[1] == -1.0
    # signal hidden after the first observation
    assert env.step(np.array([1.0])).obs[1] == 0.0


def test_key_corridor_follower_is_optimal_both_ways():
    env = KeyCorridorEnv()
    for seed in (0, 1, 2, 3):
        r = rollout(SignalFollower(), env, seed=seed)
        assert r.ret == pytest.approx(10.0 + 4 * env.step_bonus)
        assert r.steps == 4  # start at the middle of a 9-cell corridor


def test_key_corridor_wrong_end_and_timeout_punished():
    env = KeyCorridorEnv()
    env.reset(1)  # signal -1: left end pays
    ret = 0.0
    while True:
        step = env.step(np.array([1.0]))  # walk the wrong way
        ret += step.reward
        if step.done:
            break
    assert ret == pytest.approx(-10.0 - 4 * env.step_bonus)

    class Ditherer:
        def __init__(self):
            self.flip = 1.0

        def reset(self, rtg_cfg=None):
            pass

        def act(self, obs):
            self.flip = -self.flip
            return np.array([self.flip])

        def observe(self, obs, action, reward):
            pass

    r = rollout(Ditherer(), KeyCorridorEnv(), seed=0)
    assert r.ret == pytest.approx(-10.0)  # dithering shaping cancels
    assert r.steps == KeyCorridorEnv.horizon


def test_key_corridor_signal_blind_policy_is_at_chance():
    """A fixed-direction policy nets exactly zero over balanced seeds."""

    class AlwaysRight(ZeroPolicy):
        def act(self, obs):
            return np.array([1.0])

    val = evaluate(AlwaysRight(1), KeyCorridorEnv(), seeds=[0, 1, 2, 3])
    assert val == pytest.approx(0.0)


def test_rollout_applies_normalizer_before_policy():
    seen = []

    class Recorder(ZeroPolicy):
        def act(self, obs):
            seen.append(obs.copy())
            return np.zeros(self.act_dim)

    env = PointTargetEnv()
    rollout(Recorder(2), env, seed=0, normalize=lambda o: o * 0.0)
    assert all(np.array_equal(o, np.zeros(2)) for o in seen)


def test_rollout_trajectory_keeps_raw_obs():
    env = PointTargetEnv()
    r = rollout(ZeroPolicy(2), env, seed=0, normalize=lambda o: o * 0.0, collect=True)
    first_obs = r.trajectory[0][0]
    assert np.linalg.norm(first_obs) == pytest.approx(1.0)  # not zeroed


def test_evaluate_is_mean_over_seeds():
    env = KeyCorridorEnv()
    val = evaluate(SignalFollower(), env, seeds=[0, 1, 2, 3])
    assert val == pytest.approx(10.0 + 4 * env.step_bonus)
    with pytest.raises(EnvError):
        evaluate(SignalFollower(), env, seeds=[])
