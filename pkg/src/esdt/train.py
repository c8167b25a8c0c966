"""End-to-end training driver shared by the CLI and the tests.

Builds the ES state and noise table from a config, wires up the chosen
transport (in-process worker threads or TCP workers joining from other
processes), runs the generation loop with per-iteration evaluation, JSONL
logging and checkpointing, and optionally stops early once a target
evaluation return is reached.
"""

import json
import math
import os
import threading
import time

import numpy as np

from . import checkpoint as ckpt
from . import es, runtime
from .config import effective_batch_size, effective_rtg_scale, make_spec, resolved_dict
from .dt import RtgConfig
from .envs import make_env
from .errors import ConfigError
from .fitness import EnvFitness
from .policy import make_policy
from .pretrain import ImitationFitness, collect_teacher_dataset, load_dataset, save_dataset
from .specs import init_params, param_count

MODE_RL = "rl"
MODE_PRETRAIN = "pretrain"

# Keys describing where the run executes rather than what it computes; they
# are excluded from the checkpoint's config digest so the same training run
# on a different topology produces bit-identical checkpoints.
TOPOLOGY_KEYS = frozenset(
    ("workers", "transport", "listen_addr", "worker_timeout_s", "checkpoint_dir")
)

_PRETRAIN_TAG = 0xBC5EED


def semantic_digest(resolved):
    return ckpt.config_digest(
        {k: v for k, v in resolved.items() if k not in TOPOLOGY_KEYS}
    )


def pretrain_episode_seeds(master_seed, n):
    ss = np.random.SeedSequence([int(master_seed), _PRETRAIN_TAG])
    return [int(x) for x in ss.generate_state(n, np.uint64)]


def build_dataset(cfg):
    """Teacher dataset for pretraining: loaded from file or collected
    deterministically from the master seed (identical on every node)."""
    if cfg.pretrain_dataset:
        return load_dataset(cfg.pretrain_dataset)
    seeds = pretrain_episode_seeds(cfg.master_seed, cfg.pretrain_episodes)
    return collect_teacher_dataset(
        cfg.env, cfg.env, cfg.pretrain_episodes, seeds, effective_rtg_scale(cfg)
    )


def build_fitness(cfg, spec, mode):
    if mode == MODE_PRETRAIN:
        return ImitationFitness(spec, build_dataset(cfg))
    rtg_cfg = RtgConfig(initial_target=cfg.rtg, scale=effective_rtg_scale(cfg))
    return EnvFitness(cfg.env, spec, rtg_cfg)


def initial_state(cfg, spec):
    """Fresh ES state, or one seeded from ``init_checkpoint`` (theta and
    observation statistics carry over; optimizer and iteration start anew)."""
    dim = param_count(spec)
    if getattr(cfg, "init_checkpoint", ""):
        prev_spec, prev_state, _ = ckpt.load(cfg.init_checkpoint)
        if prev_spec != spec:
            raise ConfigError("init_checkpoint spec does not match this config")
        theta = prev_state.theta
        vbn = prev_state.vbn
    else:
        theta = init_params(spec, cfg.master_seed)
        vbn = es.VbnStats.empty(spec.obs_dim)
    return es.EsState(
        theta=theta,
        sigma=cfg.noise_deviation,
        optimizer=es.OptimizerState.fresh(cfg.optimizer, cfg.learning_rate, dim),
        iteration=0,
        vbn=vbn,
        rng_seed=cfg.master_seed,
        weight_decay=cfg.weight_decay_factor,
        batch_size=effective_batch_size(cfg),
    )


def make_worker_context(cfg, spec, mode, worker_id, table=None):
    return runtime.WorkerContext(
        worker_id=worker_id,
        state=initial_state(cfg, spec),
        table=table if table is not None else es.NoiseTable(cfg.master_seed, cfg.noise_table_size),
        fitness=build_fitness(cfg, spec, mode),
        population=cfg.size_of_population,
        master_seed=cfg.master_seed,
        vbn_probability=cfg.update_vbn_stats_probability,
    )


def evaluate_theta(cfg, spec, state, mode, eval_fitness):
    """Held-out evaluation of the current distribution mean."""
    if mode == MODE_PRETRAIN:
        fit, _, _ = eval_fitness(state.theta, [], state.vbn)
        return float(fit)
    env = make_env(cfg.env)
    rtg_cfg = RtgConfig(initial_target=cfg.rtg, scale=effective_rtg_scale(cfg))
    policy = make_policy(state.theta, spec, rtg_cfg)
    from .envs import evaluate
    from .es import vbn_normalize

    seeds = [runtime.eval_seed(cfg.master_seed, k) for k in range(cfg.eval_episodes)]
    return evaluate(
        policy, env, seeds, rtg_cfg, lambda obs: vbn_normalize(state.vbn, obs)
    )


class RunResult:
    def __init__(self, state, records, latest_path, best_path, log_path):
        self.state = state
        self.records = records
        self.latest_path = latest_path
        self.best_path = best_path
        self.log_path = log_path

    @property
    def best_eval(self):
        return max((r["eval_return"] for r in self.records), default=None)

    @property
    def final_eval(self):
        return self.records[-1]["eval_return"] if self.records else None


def run_training(cfg, mode=MODE_RL, stop_at_eval=None):
    """Run the full generation loop; returns the final state and log rows."""
    spec = make_spec(cfg)
    table = es.NoiseTable(cfg.master_seed, cfg.noise_table_size)
    table.check_fits(param_count(spec))
    state = initial_state(cfg, spec)
    eval_fitness = build_fitness(cfg, spec, mode) if mode == MODE_PRETRAIN else None

    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    latest_path = os.path.join(cfg.checkpoint_dir, "latest.ckpt")
    best_path = os.path.join(cfg.checkpoint_dir, "best.ckpt")
    log_path = os.path.join(cfg.checkpoint_dir, "log.jsonl")
    resolved = resolved_dict(cfg)
    digest = semantic_digest(resolved)

    threads = []
    if cfg.transport == "inproc":
        conns = []
        for w in range(cfg.workers):
            master_side, worker_side = runtime.inproc_pair()
            wctx = make_worker_context(cfg, spec, mode, w, table)
            t = threading.Thread(
                target=runtime.worker_loop, args=(worker_side, wctx), daemon=True
            )
            t.start()
            threads.append(t)
            conns.append(master_side)
    else:
        conns = runtime.tcp_listen(cfg.listen_addr, cfg.workers, timeout=cfg.worker_timeout_s)

    master = runtime.Master(
        state=state,
        table=table,
        conns=conns,
        population=cfg.size_of_population,
        episodes_per_eval=cfg.episodes_per_eval,
        master_seed=cfg.master_seed,
        vbn_probability=cfg.update_vbn_stats_probability,
        worker_timeout=cfg.worker_timeout_s,
    )

    records = []
    best = -math.inf
    try:
        with open(log_path, "w") as log:
            log.write(json.dumps({"config": resolved}) + "\n")
            ckpt.save(latest_path, spec, state, digest)
            for _ in range(cfg.num_of_iterations):
                t0 = time.monotonic()
                rec, _ = master.run_iteration()
                eval_ret = evaluate_theta(cfg, spec, state, mode, eval_fitness)
                if eval_ret > best:
                    best = eval_ret
                    ckpt.save(best_path, spec, state, digest)
                row = {
                    "iteration": rec.iteration,
                    "eval_return": eval_ret,
                    "best_so_far": best,
                    "mean_pop_fitness": rec.mean_fitness,
                    "wall_clock_s": time.monotonic() - t0,
                    "bytes_sent": rec.bytes_sent,
                }
                records.append(row)
                log.write(json.dumps(row) + "\n")
                log.flush()
                ckpt.save(latest_path, spec, state, digest)
                if stop_at_eval is not None and eval_ret >= stop_at_eval:
                    break
    finally:
        master.shutdown()
        for t in threads:
            t.join(timeout=5.0)

    if not os.path.exists(best_path):
        ckpt.save(best_path, spec, state, digest)
    return RunResult(state, records, latest_path, best_path, log_path)


def run_worker(cfg, worker_id, mode=MODE_RL):
    """Entry point for a TCP worker process."""
    spec = make_spec(cfg)
    conn = runtime.tcp_connect(cfg.listen_addr, worker_id, timeout=cfg.worker_timeout_s)
    wctx = make_worker_context(cfg, spec, mode, worker_id)
    try:
        runtime.worker_loop(conn, wctx)
    finally:
        conn.close()
