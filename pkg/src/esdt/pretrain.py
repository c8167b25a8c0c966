"""Behavior-cloning pretraining toward a scripted teacher.

The imitation loss (negative mean squared action error over replayed teacher
trajectories) is plugged into the same ES machinery used for environment
fitness, so a pretrained checkpoint feeds straight into the reduced
learning-rate / reduced-sigma RL phase with frozen observation statistics.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .dt import EpisodeContext, RtgConfig, record_step
from .envs import TEACHERS, make_env, rollout
from .errors import EsdtError
from .es import vbn_normalize
from .policy import DtPolicy, make_policy
from .specs import FEEDFORWARD

DATASET_MAGIC = b"ESDTDATA"
DATASET_VERSION = 1


@dataclass
class TeacherDataset:
    """Per-step teacher records grouped into episodes.

    ``records`` is a list of (obs, teacher_action, rtg) with rtg already
    divided by ``scale``; ``episode_lengths`` delimits episodes within it.
    """

    records: list
    episode_lengths: list
    scale: float
    teacher: str
    seeds: list

    def episodes(self):
        start = 0
        for n in self.episode_lengths:
            yield self.records[start:start + n]
            start += n


def collect_teacher_dataset(teacher_name, env_name, n_episodes, seeds, scale):
    """Roll the scripted teacher and record (obs, action, rtg) per step.

    The rtg of each record is the realized future return of the teacher's own
    trajectory from that step on, divided by the scale.
    """
    if n_episodes < 1 or len(seeds) < n_episodes:
        raise EsdtError("need at least one teacher episode (and a seed per episode)")
    env = make_env(env_name)
    teacher = TEACHERS[env_name]()
    records = []
    lengths = []
    used = list(seeds[:n_episodes])
    for seed in used:
        r = rollout(teacher, env, seed, collect=True)
        rewards = np.array([rew for _, _, rew in r.trajectory])
        future = np.cumsum(rewards[::-1])[::-1] / scale
        for (obs, act, _), rtg in zip(r.trajectory, future):
            records.append((obs, act, float(rtg)))
        lengths.append(len(r.trajectory))
    return TeacherDataset(records, lengths, scale, teacher_name, used)


def save_dataset(path, ds):
    obs_dim = ds.records[0][0].shape[0]
    act_dim = ds.records[0][1].shape[0]
    name = ds.teacher.encode()
    parts = [
        DATASET_MAGIC,
        struct.pack("<IIIIdI", DATASET_VERSION, obs_dim, act_dim, len(ds.records),
                    ds.scale, len(ds.episode_lengths)),
        struct.pack(f"<{len(ds.episode_lengths)}I", *ds.episode_lengths),
        struct.pack(f"<{len(ds.seeds)}Q", *ds.seeds),
        struct.pack("<I", len(name)), name,
    ]
    for obs, act, rtg in ds.records:
        parts.append(np.asarray(obs, dtype="<f8").tobytes())
        parts.append(np.asarray(act, dtype="<f8").tobytes())
        parts.append(struct.pack("<d", rtg))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != DATASET_MAGIC:
        raise EsdtError(f"{path} is not a teacher dataset")
    version, obs_dim, act_dim, count, scale, n_eps = struct.unpack_from("<IIIIdI", buf, 8)
    if version != DATASET_VERSION:
        raise EsdtError(f"unsupported dataset version {version}")
    pos = 8 + 28
    lengths = list(struct.unpack_from(f"<{n_eps}I", buf, pos))
    pos += 4 * n_eps
    seeds = list(struct.unpack_from(f"<{n_eps}Q", buf, pos))
    pos += 8 * n_eps
    (name_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    teacher = buf[pos:pos + name_len].decode()
    pos += name_len
    records = []
    for _ in range(count):
        obs = np.frombuffer(buf[pos:pos + 8 * obs_dim], dtype="<f8").copy()
        pos += 8 * obs_dim
        act = np.frombuffer(buf[pos:pos + 8 * act_dim], dtype="<f8").copy()
        pos += 8 * act_dim
        (rtg,) = struct.unpack_from("<d", buf, pos)
        pos += 8
        records.append((obs, act, rtg))
    return TeacherDataset(records, lengths, scale, teacher, seeds)


def imitation_fitness(params, spec, ds, vbn_stats=None):
    """Negative mean squared error of policy vs teacher actions; maximum 0.

    Decision-transformer policies see the teacher's own history replayed into
    their context; reactive policies just see each observation.
    """
    if not ds.records:
        raise EsdtError("empty teacher dataset")
    sq_err = 0.0
    if spec.kind == FEEDFORWARD:
        policy = make_policy(params, spec, None)
        for obs, teacher_act, _ in ds.records:
            seen = vbn_normalize(vbn_stats, obs) if vbn_stats is not None else obs
            pred = policy.act(seen)
            sq_err += float(np.sum((pred - teacher_act) ** 2))
        return -sq_err / len(ds.records)

    cfg = RtgConfig(initial_target=0.0, scale=ds.scale)
    policy = DtPolicy(params, spec, cfg)
    for episode in ds.episodes():
        ctx = EpisodeContext(
            capacity=spec.context_len, pending_rtg=episode[0][2], scale=ds.scale
        )
        policy.ctx = ctx
        for i, (obs, teacher_act, rtg) in enumerate(episode):
            seen = vbn_normalize(vbn_stats, obs) if vbn_stats is not None else obs
            pred = policy.act(seen)
            sq_err += float(np.sum((pred - teacher_act) ** 2))
            next_rtg = episode[i + 1][2] if i + 1 < len(episode) else 0.0
            reward = (rtg - next_rtg) * ds.scale
            record_step(ctx, seen, teacher_act, reward)
    return -sq_err / len(ds.records)


class ImitationFitness:
    """Evaluator adapter so pretraining reuses the distributed ES loop."""

    def __init__(self, spec, dataset):
        self.spec = spec
        self.dataset = dataset

    def __call__(self, params, seeds, vbn_stats, collect=False):
        fit = imitation_fitness(params, self.spec, self.dataset, vbn_stats)
        return fit, len(self.dataset.records), None
