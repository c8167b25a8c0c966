"""Run configuration: plain ``key = value`` files plus CLI overrides.

Hyperparameter keys reuse the exact training-hyperparameter names
(size_of_population, noise_deviation, weight_decay_factor, ...); the rest
describe the artifact (env, policy shape, transport).  Unknown keys are hard
errors so ablation configs cannot silently drift.
"""

from dataclasses import dataclass, fields

from .envs import DEFAULT_RTG_SCALE, ENV_CLASSES, make_env
from .errors import ConfigError
from .specs import DECISION_TRANSFORMER, FEEDFORWARD, PolicySpec


@dataclass
class RunConfig:
    # Training hyperparameters (canonical names).
    rtg: float = 7000.0
    size_of_population: int = 100
    num_of_iterations: int = 100
    noise_deviation: float = 0.02
    weight_decay_factor: float = 0.995
    batch_size: int = 0  # 0 -> min(1000, size_of_population)
    update_vbn_stats_probability: float = 0.01
    optimizer: str = "sgdm"
    learning_rate: float = 0.05
    # Artifact keys.
    env: str = "point_target"
    policy: str = FEEDFORWARD
    hidden_layers: tuple = (32, 32)
    embed_dim: int = 16
    n_layers: int = 1
    n_heads: int = 2
    context_len: int = 4
    max_episode_len: int = 0  # 0 -> env horizon
    rtg_scale: float = 0.0  # 0 -> env default
    episodes_per_eval: int = 1
    eval_episodes: int = 4
    workers: int = 1
    transport: str = "inproc"
    listen_addr: str = "127.0.0.1:5640"
    master_seed: int = 1
    checkpoint_dir: str = "run"
    noise_table_size: int = 1 << 20
    worker_timeout_s: float = 300.0
    pretrain_episodes: int = 4
    pretrain_dataset: str = ""
    init_checkpoint: str = ""


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name, raw):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        return tuple(int(x.strip()) for x in inner.split(",") if x.strip())
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    field = _FIELDS[name]
    tname = field.type if isinstance(field.type, str) else field.type.__name__
    if tname == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected integer, got {raw!r}") from None
    if tname == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected number, got {raw!r}") from None
    if tname == "tuple":
        return tuple(int(x.strip()) for x in raw.split(",") if x.strip())
    return raw


def parse_config_text(text):
    """Parse ``key = value`` lines (with # comments) into a RunConfig."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config_text(text)
    for key, raw in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown override key {key!r}")
        setattr(cfg, key, _parse_value(key, raw) if isinstance(raw, str) else raw)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.env not in ENV_CLASSES:
        raise ConfigError(f"unknown env {cfg.env!r}")
    if cfg.policy not in (FEEDFORWARD, DECISION_TRANSFORMER):
        raise ConfigError(f"unknown policy {cfg.policy!r}")
    if cfg.size_of_population < 2 or cfg.size_of_population % 2 != 0:
        raise ConfigError("size_of_population must be even and >= 2")
    if cfg.noise_deviation <= 0:
        raise ConfigError("noise_deviation must be positive")
    if not 0 < cfg.weight_decay_factor <= 1:
        raise ConfigError("weight_decay_factor must be in (0, 1]")
    if cfg.batch_size < 0 or cfg.batch_size > cfg.size_of_population:
        raise ConfigError("batch_size must lie in 0..size_of_population")
    if not 0 <= cfg.update_vbn_stats_probability <= 1:
        raise ConfigError("update_vbn_stats_probability must be in [0, 1]")
    if cfg.optimizer not in ("sgdm", "adam"):
        raise ConfigError("optimizer must be sgdm or adam")
    if cfg.learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")
    if cfg.episodes_per_eval < 1 or cfg.eval_episodes < 1:
        raise ConfigError("episode counts must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be positive")
    if cfg.transport not in ("inproc", "tcp"):
        raise ConfigError("transport must be inproc or tcp")
    if cfg.num_of_iterations < 0:
        raise ConfigError("num_of_iterations must be nonnegative")


def effective_batch_size(cfg):
    return cfg.batch_size if cfg.batch_size > 0 else min(1000, cfg.size_of_population)


def effective_rtg_scale(cfg):
    return cfg.rtg_scale if cfg.rtg_scale > 0 else DEFAULT_RTG_SCALE[cfg.env]


def make_spec(cfg):
    """Policy architecture implied by the config and its environment."""
    env = make_env(cfg.env)
    if cfg.policy == FEEDFORWARD:
        return PolicySpec(
            kind=FEEDFORWARD,
            obs_dim=env.obs_dim,
            act_dim=env.act_dim,
            hidden_layers=cfg.hidden_layers,
        )
    return PolicySpec(
        kind=DECISION_TRANSFORMER,
        obs_dim=env.obs_dim,
        act_dim=env.act_dim,
        embed_dim=cfg.embed_dim,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        context_len=cfg.context_len,
        max_episode_len=cfg.max_episode_len if cfg.max_episode_len > 0 else env.horizon,
    )


def resolved_dict(cfg):
    """Fully-resolved key/value mapping (what goes in the log header)."""
    out = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    out["batch_size"] = effective_batch_size(cfg)
    out["rtg_scale"] = effective_rtg_scale(cfg)
    out["hidden_layers"] = list(cfg.hidden_layers)
    if cfg.max_episode_len == 0:
        out["max_episode_len"] = make_env(cfg.env).horizon
    return out
