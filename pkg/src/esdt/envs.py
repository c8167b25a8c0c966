"""Deterministic toy environments and the episode rollout harness.

Both environments are tiny on purpose: reference returns are known in closed
form or by trivial simulation, so training claims can be checked exactly.

* ``point_target``: continuous control.  The agent starts on the unit circle
  and steers a velocity toward the origin; reward each step is the negative
  distance after moving.  Doing nothing returns -T; a proportional
  controller contracts the distance by 1/4 per step.
* ``key_corridor``: a memory probe.  A +-1 signal shown only at t=0 decides
  which end of a 9-cell corridor pays +10; reaching the wrong end (or
  timing out) pays -10.  Any policy reacting to the current observation
  alone cannot beat chance over signal-balanced seeds.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EnvError


@dataclass
class EnvStep:
    obs: np.ndarray
    reward: float
    done: bool


class PointTargetEnv:
    """Drive a point to the origin; reward is -distance per step."""

    obs_dim = 2
    act_dim = 2
    horizon = 50
    speed = 0.25

    def __init__(self):
        self.pos = None
        self.t = 0
        self.done = True

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        self.pos = np.array([np.cos(angle), np.sin(angle)])
        self.t = 0
        self.done = False
        return self.pos.copy()

    def step(self, action):
        if self.done:
            raise EnvError("step called on a finished episode; reset first")
        v = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        self.pos = self.pos + self.speed * v
        self.t += 1
        reward = -float(np.linalg.norm(self.pos))
        self.done = self.t >= self.horizon
        return EnvStep(self.pos.copy(), reward, self.done)


class KeyCorridorEnv:
    """1-D corridor whose paying end is revealed only in the first observation.

    The signal is the seed's parity (even seed -> +1 -> right end), which
    makes building a signal-balanced evaluation set trivial.  Each step pays
    a small progress reward (+-0.1 toward the paying end) on top of the +-10
    terminal payout; over signal-balanced seeds the shaping cancels for any
    policy that ignores the signal, so chance level stays at 0.

    The observation is (elapsed time, masked signal), deliberately excluding
    the agent's position: if position were observable, a memoryless policy
    could dump the signal into it on the first move (step toward the signal,
    then keep walking away from the center) and solve the task without any
    memory.  With time-only observations every post-t=0 action of a reactive
    policy is signal-independent, so only policies with internal state can
    beat chance.
    """

    obs_dim = 2
    act_dim = 1
    horizon = 12
    length = 9
    step_bonus = 0.1

    def __init__(self):
        self.pos = 0
        self.signal = 0
        self.t = 0
        self.done = True

    def reset(self, seed):
        self.signal = 1 if int(seed) % 2 == 0 else -1
        self.pos = self.length // 2
        self.t = 0
        self.done = False
        return self._obs(show_signal=True)

    def _obs(self, show_signal=False):
        return np.array(
            [self.t / self.horizon, float(self.signal) if show_signal else 0.0]
        )

    def step(self, action):
        if self.done:
            raise EnvError("step called on a finished episode; reset first")
        a = float(np.asarray(action).reshape(-1)[0])
        move = 1 if a > 0 else -1
        self.pos += move
        self.t += 1
        reward = self.step_bonus * move * self.signal
        if self.pos in (0, self.length - 1):
            correct = self.length - 1 if self.signal > 0 else 0
            reward += 10.0 if self.pos == correct else -10.0
            self.done = True
        elif self.t >= self.horizon:
            reward += -10.0
            self.done = True
        return EnvStep(self._obs(), reward, self.done)


class ProportionalController:
    """Scripted point_target teacher: velocity = -position, clipped."""

    def reset(self, rtg_cfg=None):
        pass

    def act(self, obs):
        return np.clip(-np.asarray(obs, dtype=np.float64), -1.0, 1.0)

    def observe(self, obs, action, reward):
        pass


class SignalFollower:
    """Scripted key_corridor optimum: remember the t=0 signal, walk to its end."""

    def __init__(self):
        self.direction = 1.0

    def reset(self, rtg_cfg=None):
        self.direction = 1.0

    def act(self, obs):
        if obs[1] != 0.0:
            self.direction = 1.0 if obs[1] > 0 else -1.0
        return np.array([self.direction])

    def observe(self, obs, action, reward):
        pass


ENV_CLASSES = {
    "point_target": PointTargetEnv,
    "key_corridor": KeyCorridorEnv,
}

DEFAULT_RTG_SCALE = {"point_target": 1000.0, "key_corridor": 1.0}

TEACHERS = {"point_target": ProportionalController, "key_corridor": SignalFollower}


def make_env(name):
    try:
        return ENV_CLASSES[name]()
    except KeyError:
        raise EnvError(f"unknown environment {name!r}") from None


@dataclass
class Rollout:
    ret: float
    steps: int
    trajectory: list  # (obs, action, reward) with raw observations


def rollout(policy, env, seed, rtg_cfg=None, normalize=None, collect=False):
    """Run one episode; returns the unscaled return, step count and trajectory.

    ``normalize`` (observation normalization, e.g. VBN) is applied before the
    policy sees an observation; the trajectory keeps raw observations.
    """
    obs = env.reset(seed)
    policy.reset(rtg_cfg)
    total = 0.0
    steps = 0
    traj = []
    while True:
        seen = normalize(obs) if normalize is not None else obs
        action = policy.act(seen)
        result = env.step(action)
        policy.observe(seen, action, result.reward)
        total += result.reward
        steps += 1
        if collect:
            traj.append((obs, np.asarray(action, dtype=np.float64), result.reward))
        obs = result.obs
        if result.done:
            return Rollout(total, steps, traj)


def evaluate(policy, env, seeds, rtg_cfg=None, normalize=None):
    """Arithmetic mean return over one rollout per seed."""
    if len(seeds) == 0:
        raise EnvError("evaluate needs at least one seed")
    return float(
        np.mean([rollout(policy, env, s, rtg_cfg, normalize).ret for s in seeds])
    )
