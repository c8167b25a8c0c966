"""Decision-transformer agent wrapper.

Keeps the rolling context of (return-to-go, observation, action) triplets,
maintains the return-to-go recursion, assembles the interleaved token
sequence and decodes actions from the transformer output.

The context buffer is cropped to the window length on every step, so memory
stays O(K) no matter how long the episode runs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import transformer_forward
from .specs import unflatten


@dataclass(frozen=True)
class RtgConfig:
    """Target return handed to the agent and the scale rewards are divided by."""

    initial_target: float
    scale: float = 1000.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError("rtg scale must be positive")


@dataclass
class EpisodeContext:
    """Rolling window of past timesteps plus the pending return-to-go.

    ``triplets`` holds at most ``capacity`` completed (rtg, obs, act) steps;
    ``pending_rtg`` is the (already scaled) return-to-go of the timestep
    about to be acted in.
    """

    capacity: int
    pending_rtg: float
    scale: float
    timestep_index: int = 0
    triplets: list = field(default_factory=list)


def init_context(cfg, capacity):
    """Empty context whose first rtg token is ``initial_target / scale``."""
    return EpisodeContext(
        capacity=capacity,
        pending_rtg=cfg.initial_target / cfg.scale,
        scale=cfg.scale,
    )


def record_step(ctx, obs, action, reward):
    """Commit one executed timestep and roll the rtg recursion forward.

    The next return-to-go is the current one minus the scaled reward; the
    oldest triplet is evicted once the buffer is full.
    """
    ctx.triplets.append(
        (ctx.pending_rtg, np.array(obs, dtype=np.float64), np.array(action, dtype=np.float64))
    )
    if len(ctx.triplets) > ctx.capacity:
        del ctx.triplets[0]
    ctx.pending_rtg = ctx.pending_rtg - reward / ctx.scale
    ctx.timestep_index += 1
    return ctx


def window(ctx):
    """Past triplets that share the current K-window with the pending step."""
    keep = ctx.capacity - 1
    return ctx.triplets[len(ctx.triplets) - keep:] if keep > 0 else []


def build_tokens(ctx, current_obs, act_dim):
    """Interleave past triplets with the current partial one.

    Returns ``(tokens, positions)`` where tokens are (kind, vector) pairs with
    kind in {"rtg", "obs", "act"} and all three tokens of a timestep share one
    position index.  The current timestep contributes (rtg, obs, placeholder)
    with a zero-vector action placeholder.
    """
    past = window(ctx)
    first_ts = ctx.timestep_index - len(past)
    tokens, positions = [], []
    for i, (rtg, obs, act) in enumerate(past):
        ts = first_ts + i
        tokens += [("rtg", np.array([rtg])), ("obs", obs), ("act", act)]
        positions += [ts, ts, ts]
    ts = ctx.timestep_index
    tokens += [
        ("rtg", np.array([ctx.pending_rtg])),
        ("obs", np.asarray(current_obs, dtype=np.float64)),
        ("act", np.zeros(act_dim)),
    ]
    positions += [ts, ts, ts]
    return tokens, positions


def embed_tokens(views, spec, tokens, positions):
    """Per-kind affine embedding plus the shared learned position encoding."""
    seq = np.empty((len(tokens), spec.embed_dim))
    for i, ((kind, vec), pos) in enumerate(zip(tokens, positions)):
        if pos >= spec.max_episode_len:
            raise ConfigError(
                f"timestep {pos} exceeds max_episode_len {spec.max_episode_len}; "
                "raise max_episode_len in the policy spec"
            )
        w = views[f"embed_{kind}_w"]
        b = views[f"embed_{kind}_b"]
        seq[i] = vec @ w + b + views["pos_table"][pos]
    return seq


def act(params, spec, ctx, current_obs):
    """Deterministic action: decode the output state at the current obs token.

    Continuous actions are tanh-squashed into (-1, 1).
    """
    tokens, positions = build_tokens(ctx, current_obs, spec.act_dim)
    views = unflatten(params, spec)
    seq = embed_tokens(views, spec, tokens, positions)
    out = transformer_forward(params, spec, seq)
    obs_state = out[-2]  # sequence ends with (rtg, obs, placeholder)
    return np.tanh(obs_state @ views["decode_w"] + views["decode_b"])
