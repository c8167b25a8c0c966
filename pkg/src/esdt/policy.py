"""Rollout-facing policy objects.

Thin stateful wrappers over the pure functions in :mod:`esdt.nn` and
:mod:`esdt.dt`; they cache the unflattened weight views so an episode does
not re-slice the flat vector on every step.
"""

import numpy as np

from . import dt, nn
from .specs import FEEDFORWARD, unflatten


class MlpPolicy:
    """Reactive feedforward policy; tanh-squashed continuous actions."""

    def __init__(self, params, spec):
        self.params = np.asarray(params, dtype=np.float64)
        self.spec = spec

    def reset(self, rtg_cfg=None):
        pass

    def act(self, obs):
        return np.tanh(nn.mlp_forward(self.params, self.spec, obs))

    def observe(self, obs, action, reward):
        pass


class DtPolicy:
    """Decision-transformer policy with per-episode context bookkeeping."""

    def __init__(self, params, spec, rtg_cfg):
        self.params = np.asarray(params, dtype=np.float64)
        self.spec = spec
        self.rtg_cfg = rtg_cfg
        self.views = unflatten(self.params, spec)
        self.blocks = [nn.block_views(self.views, l, spec.n_heads) for l in range(spec.n_layers)]
        self.ctx = None

    def reset(self, rtg_cfg=None):
        if rtg_cfg is not None:
            self.rtg_cfg = rtg_cfg
        self.ctx = dt.init_context(self.rtg_cfg, self.spec.context_len)

    def act(self, obs):
        tokens, positions = dt.build_tokens(self.ctx, obs, self.spec.act_dim)
        seq = dt.embed_tokens(self.views, self.spec, tokens, positions)
        out = nn.transformer_apply(self.blocks, seq)
        return np.tanh(out[-2] @ self.views["decode_w"] + self.views["decode_b"])

    def observe(self, obs, action, reward):
        dt.record_step(self.ctx, obs, action, reward)


def make_policy(params, spec, rtg_cfg):
    if spec.kind == FEEDFORWARD:
        return MlpPolicy(params, spec)
    return DtPolicy(params, spec, rtg_cfg)
