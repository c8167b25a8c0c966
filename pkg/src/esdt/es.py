"""Core evolution-strategy machinery.

A generation: sample antithetic (offset, sign) pairs into the shared noise
table, evaluate the perturbed parameter vectors, map fitnesses to centered
rank weights, form the natural-gradient estimate (note the division by
sigma), take an ascent optimizer step, then apply decoupled weight decay.

Everything here is deterministic given the seeds; master and workers run the
same code on the same inputs and must reconstruct bit-identical vectors, so
reduction orders are fixed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EsdtError

VBN_EPS = 1e-8


# ---------------------------------------------------------------------------
# Noise table and perturbations


class NoiseTable:
    """Immutable pregenerated pool of standard-normal values.

    A perturbation is just (offset, sign): ``sign * sigma * values[offset:
    offset + dim]``.  The table is fully determined by (seed, length), so
    every process regenerates it locally instead of receiving it.
    """

    def __init__(self, seed, length):
        self.seed = int(seed)
        self.length = int(length)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7AB1E]))
        self.values = rng.standard_normal(self.length)
        self.values.flags.writeable = False

    def check_fits(self, dim):
        if dim > self.length:
            raise EsdtError(
                f"noise table of length {self.length} cannot perturb {dim} parameters"
            )

    def slice(self, offset, dim):
        if offset < 0 or offset + dim > self.length:
            raise EsdtError(f"offset {offset} out of range for dim {dim}")
        return self.values[offset:offset + dim]


def sample_offsets(rng_seed, iteration, population_n, table, dim):
    """Antithetic pairs for one generation, deterministic from the seeds.

    Returns ``population_n`` entries: each of ``population_n / 2`` distinct
    offsets appears with sign +1 then -1, in sampling order.
    """
    if population_n % 2 != 0 or population_n < 2:
        raise EsdtError("population size must be even and positive")
    table.check_fits(dim)
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), int(iteration), 0x0FF5]))
    high = table.length - dim + 1
    n_pairs = population_n // 2
    offsets = []
    seen = set()
    while len(offsets) < n_pairs:
        for off in rng.integers(0, high, size=n_pairs - len(offsets)):
            off = int(off)
            if off not in seen:
                seen.add(off)
                offsets.append(off)
    out = []
    for off in offsets:
        out.append((off, 1))
        out.append((off, -1))
    return out


def perturb(theta, table, offset, sign, sigma):
    """theta + sign * sigma * noise slice."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta + sign * sigma * table.slice(offset, theta.shape[0])


# ---------------------------------------------------------------------------
# Fitness shaping and the update estimate


def centered_ranks(fitnesses):
    """Map fitnesses to evenly spaced weights in [-0.5, 0.5].

    Ascending ranks are rescaled by rank/(n-1) - 0.5; tied fitnesses share
    the mean of their rank range, so a fully tied population yields all-zero
    weights (and hence an exactly zero antithetic update).
    """
    f = np.asarray(fitnesses, dtype=np.float64)
    n = f.shape[0]
    if n == 0:
        raise EsdtError("centered_ranks needs at least one fitness")
    if n == 1:
        return np.zeros(1)
    order = np.argsort(f, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and f[order[j + 1]] == f[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks / (n - 1) - 0.5


def gradient_estimate(weights, entries, table, sigma, dim, batch_size=1000):
    """Natural-gradient ascent estimate: (1/(n*sigma)) sum_i w_i s_i eps_i.

    ``entries`` is the canonical (offset, sign) list; summation runs in that
    order (batched, fixed batch boundaries) so every node gets the same
    floats.  The division by sigma is the rescaling w.r.t. the sampling
    uncertainty that turns the plain estimate into a natural-gradient one.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(entries):
        raise EsdtError("weights and entries must align")
    if sigma <= 0:
        raise EsdtError("sigma must be positive")
    offsets = np.fromiter((e[0] for e in entries), dtype=np.int64, count=len(entries))
    signs = np.fromiter((e[1] for e in entries), dtype=np.float64, count=len(entries))
    total = kernels.weighted_noise_sum(
        table.values, offsets, signs, weights, dim, int(batch_size)
    )
    return total / (len(entries) * sigma)


# ---------------------------------------------------------------------------
# Optimizers (ascent convention) and decoupled weight decay

SGDM_MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    kind: str  # "sgdm" | "adam"
    learning_rate: float
    m: np.ndarray  # momentum buffer / first moment
    v: np.ndarray = None  # second moment (adam only)
    step: int = 0

    @classmethod
    def fresh(cls, kind, learning_rate, dim):
        if kind not in ("sgdm", "adam"):
            raise EsdtError(f"unknown optimizer {kind!r}")
        v = np.zeros(dim) if kind == "adam" else None
        return cls(kind=kind, learning_rate=learning_rate, m=np.zeros(dim), v=v)


def optimizer_step(theta, opt, update):
    """One ascent step; returns new theta and mutates the optimizer state."""
    update = np.asarray(update, dtype=np.float64)
    opt.step += 1
    if opt.kind == "sgdm":
        opt.m = SGDM_MOMENTUM * opt.m + update
        return theta + opt.learning_rate * opt.m
    opt.m = ADAM_BETA1 * opt.m + (1 - ADAM_BETA1) * update
    opt.v = ADAM_BETA2 * opt.v + (1 - ADAM_BETA2) * update * update
    m_hat = opt.m / (1 - ADAM_BETA1 ** opt.step)
    v_hat = opt.v / (1 - ADAM_BETA2 ** opt.step)
    return theta + opt.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def decay_weights(theta, factor):
    """Decoupled weight decay: scale theta after the optimizer step.

    Deliberately not folded into the gradient (that would be L2
    regularization, which interacts differently with adaptive optimizers).
    """
    if not 0 < factor <= 1:
        raise EsdtError(f"decay factor must be in (0, 1], got {factor}")
    return np.asarray(theta, dtype=np.float64) * factor


# ---------------------------------------------------------------------------
# Virtual batch normalization statistics


@dataclass
class VbnStats:
    """Streaming observation statistics in parallel-mergeable form."""

    count: int
    mean: np.ndarray
    m2: np.ndarray  # running sum of squared deviations

    @classmethod
    def empty(cls, dim):
        return cls(0, np.zeros(dim), np.zeros(dim))

    def copy(self):
        return VbnStats(self.count, self.mean.copy(), self.m2.copy())


def vbn_update(stats, obs_batch):
    """Fold a batch of raw observations into the running statistics."""
    batch = np.asarray(obs_batch, dtype=np.float64)
    if batch.size == 0:
        return stats
    n = batch.shape[0]
    mean = batch.mean(axis=0)
    m2 = ((batch - mean) ** 2).sum(axis=0)
    return vbn_merge(stats, VbnStats(n, mean, m2))


def vbn_merge(a, b):
    """Combine two stat sets as if their batches had been concatenated."""
    if a.count == 0:
        return b.copy()
    if b.count == 0:
        return a.copy()
    count = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / count)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / count)
    return VbnStats(count, mean, m2)


def vbn_normalize(stats, obs):
    """(obs - mean) / sqrt(var + eps); identity while no data has been seen."""
    if stats.count == 0:
        return np.asarray(obs, dtype=np.float64)
    var = stats.m2 / stats.count
    return (np.asarray(obs, dtype=np.float64) - stats.mean) / np.sqrt(var + VBN_EPS)


# ---------------------------------------------------------------------------
# Return-conditioned fitness (proposed variant)


def rtg_fitness(returns, desired):
    """Negative sum of |return - desired| over subevaluations; maximum 0."""
    returns = np.asarray(returns, dtype=np.float64)
    desired = np.asarray(desired, dtype=np.float64)
    if returns.shape != desired.shape or returns.size == 0:
        raise EsdtError("returns and desired targets must have equal nonzero length")
    return -float(np.abs(returns - desired).sum())


def sample_desired_return(prev_best, prev_mean, alpha, sigma_r, rng):
    """Draw a target return between last generation's mean and best.

    The mean of the draw interpolates prev_mean -> prev_best by alpha.
    """
    if not 0 <= alpha <= 1:
        raise EsdtError("alpha must lie in [0, 1]")
    if sigma_r < 0:
        raise EsdtError("sigma_r must be nonnegative")
    mu = prev_mean + alpha * (prev_best - prev_mean)
    return float(mu + sigma_r * rng.standard_normal())


# ---------------------------------------------------------------------------
# Whole-state container and the shared update rule


@dataclass
class GenerationEntry:
    offset: int
    sign: int
    fitness: float
    episode_steps: int
    vbn_batch: np.ndarray = None  # raw observations or None


@dataclass
class GenerationReport:
    iteration: int
    entries: list = field(default_factory=list)


@dataclass
class EsState:
    """Everything a node needs to advance the distribution mean."""

    theta: np.ndarray
    sigma: float
    optimizer: OptimizerState
    iteration: int
    vbn: VbnStats
    rng_seed: int
    weight_decay: float = 1.0
    batch_size: int = 1000


def apply_generation(state, entries, weights, table):
    """Advance ``state`` in place from a generation's shaped weights.

    This is the one shared update rule: gradient estimate in canonical entry
    order, optimizer step, then decoupled decay.  Master and workers both
    call it, which is what keeps their replicas bit-identical.
    """
    pairs = [(e.offset, e.sign) for e in entries]
    grad = gradient_estimate(
        weights, pairs, table, state.sigma, state.theta.shape[0], state.batch_size
    )
    state.theta = optimizer_step(state.theta, state.optimizer, grad)
    state.theta = decay_weights(state.theta, state.weight_decay)
    state.iteration += 1
    return state
