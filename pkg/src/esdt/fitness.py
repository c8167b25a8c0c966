"""Fitness evaluators: the callable the worker applies to a perturbed vector.

Signature: ``evaluator(params, seeds, vbn_stats, collect) -> (fitness,
episode_steps, obs_batch_or_None)``.  Env-backed evaluation defines fitness
as the mean return over one episode per seed; synthetic objectives ignore
the seeds.
"""

import numpy as np

from .dt import RtgConfig
from .envs import make_env, rollout
from .es import vbn_normalize
from .policy import make_policy


class EnvFitness:
    """Mean episodic return of a policy in a named environment."""

    def __init__(self, env_name, spec, rtg_cfg):
        self.env = make_env(env_name)
        self.spec = spec
        self.rtg_cfg = rtg_cfg

    def __call__(self, params, seeds, vbn_stats, collect=False):
        policy = make_policy(params, self.spec, self.rtg_cfg)
        normalize = (lambda obs: vbn_normalize(vbn_stats, obs)) if vbn_stats is not None else None
        total = 0.0
        steps = 0
        batches = []
        for seed in seeds:
            r = rollout(policy, self.env, seed, self.rtg_cfg, normalize, collect=collect)
            total += r.ret
            steps += r.steps
            if collect:
                batches.append(np.array([obs for obs, _, _ in r.trajectory]))
        batch = np.concatenate(batches) if batches else None
        return total / len(seeds), steps, batch


class FunctionFitness:
    """Direct objective over the parameter vector (sanity-check problems)."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, params, seeds, vbn_stats, collect=False):
        return float(self.fn(params)), 1, None


def sphere_objective(target):
    """f(theta) = -||theta - target||^2; maximized at the target."""
    target = np.asarray(target, dtype=np.float64)
    return lambda theta: -float(np.sum((theta - target) ** 2))


def rtg_conditioned_env_fitness(env_name, spec, scale, desired_returns):
    """Return-conditioned variant: fitness decreases with |return - desired|.

    Each subevaluation re-targets the agent at one desired (unscaled) return;
    see :func:`esdt.es.rtg_fitness` for the aggregation.
    """
    from .es import rtg_fitness

    env = make_env(env_name)

    class _Conditioned:
        def __call__(self, params, seeds, vbn_stats, collect=False):
            normalize = (lambda obs: vbn_normalize(vbn_stats, obs)) if vbn_stats is not None else None
            returns = []
            steps = 0
            for seed, desired in zip(seeds, desired_returns):
                cfg = RtgConfig(initial_target=desired, scale=scale)
                policy = make_policy(params, spec, cfg)
                r = rollout(policy, env, seed, cfg, normalize)
                returns.append(r.ret)
                steps += r.steps
            return rtg_fitness(returns, desired_returns[: len(returns)]), steps, None

    return _Conditioned()
