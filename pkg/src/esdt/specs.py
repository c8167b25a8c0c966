"""Policy architecture specs and the flat parameter layout.

The layout defined by :func:`layout` is the single source of truth for how a
flat vector maps onto named tensors.  Checkpoints, noise application and the
forward passes all share it.

Layout order (fixed contract):

* feedforward -- for each layer in order (hidden layers, then output):
  weight matrix ``(fan_in, fan_out)`` row-major, then bias ``(fan_out,)``.
* decision transformer::

      embed_rtg_w (1, D),       embed_rtg_b (D,)
      embed_obs_w (obs_dim, D), embed_obs_b (D,)
      embed_act_w (act_dim, D), embed_act_b (D,)
      pos_table   (max_episode_len, D)
      for each block l in 0..n_layers-1:
          ln1_g (D,), ln1_b (D,)
          attn_wq (D, D), attn_bq (D,)
          attn_wk (D, D), attn_bk (D,)
          attn_wv (D, D), attn_bv (D,)
          attn_wo (D, D), attn_bo (D,)
          ln2_g (D,), ln2_b (D,)
          ffn_w1 (D, 4D), ffn_b1 (4D,)
          ffn_w2 (4D, D), ffn_b2 (D,)
      decode_w (D, act_dim), decode_b (act_dim,)

Weights always precede their biases; matrices are row-major with fan-in as
the leading axis.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutError, SpecError

FEEDFORWARD = "feedforward"
DECISION_TRANSFORMER = "decision_transformer"

FFN_WIDTH_MULT = 4


@dataclass(frozen=True)
class PolicySpec:
    """Architecture description with a deterministic parameter layout."""

    kind: str
    obs_dim: int
    act_dim: int
    hidden_layers: tuple = field(default_factory=tuple)
    embed_dim: int = 0
    n_layers: int = 0
    n_heads: int = 0
    context_len: int = 0
    max_episode_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        validate_spec(self)

    @property
    def head_dim(self):
        return self.embed_dim // self.n_heads


def validate_spec(spec):
    if spec.kind not in (FEEDFORWARD, DECISION_TRANSFORMER):
        raise SpecError(f"unknown policy kind {spec.kind!r}")
    if spec.obs_dim < 1 or spec.act_dim < 1:
        raise SpecError("obs_dim and act_dim must be positive")
    if spec.kind == FEEDFORWARD:
        if any(h < 1 for h in spec.hidden_layers):
            raise SpecError("hidden layer sizes must be positive")
    else:
        for name in ("embed_dim", "n_layers", "n_heads", "context_len", "max_episode_len"):
            if getattr(spec, name) < 1:
                raise SpecError(f"{name} must be positive for a decision transformer")
        if spec.embed_dim % spec.n_heads != 0:
            raise SpecError("embed_dim must be divisible by n_heads")


def layout(spec):
    """Ordered list of (name, shape) tensors for the spec."""
    tensors = []
    if spec.kind == FEEDFORWARD:
        sizes = [spec.obs_dim, *spec.hidden_layers, spec.act_dim]
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            tensors.append((f"layer{i}_w", (fan_in, fan_out)))
            tensors.append((f"layer{i}_b", (fan_out,)))
        return tensors

    d = spec.embed_dim
    tensors += [
        ("embed_rtg_w", (1, d)), ("embed_rtg_b", (d,)),
        ("embed_obs_w", (spec.obs_dim, d)), ("embed_obs_b", (d,)),
        ("embed_act_w", (spec.act_dim, d)), ("embed_act_b", (d,)),
        ("pos_table", (spec.max_episode_len, d)),
    ]
    for l in range(spec.n_layers):
        p = f"block{l}_"
        tensors += [
            (p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
            (p + "attn_wq", (d, d)), (p + "attn_bq", (d,)),
            (p + "attn_wk", (d, d)), (p + "attn_bk", (d,)),
            (p + "attn_wv", (d, d)), (p + "attn_bv", (d,)),
            (p + "attn_wo", (d, d)), (p + "attn_bo", (d,)),
            (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
            (p + "ffn_w1", (d, FFN_WIDTH_MULT * d)), (p + "ffn_b1", (FFN_WIDTH_MULT * d,)),
            (p + "ffn_w2", (FFN_WIDTH_MULT * d, d)), (p + "ffn_b2", (d,)),
        ]
    tensors += [
        ("decode_w", (d, spec.act_dim)), ("decode_b", (spec.act_dim,)),
    ]
    return tensors


def param_count(spec):
    """Exact number of scalars the spec's layout requires."""
    return int(sum(np.prod(shape) for _, shape in layout(spec)))


def unflatten(params, spec):
    """Map a flat vector onto named tensor views (shares memory, no copy)."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1:
        raise LayoutError("flat parameter vector must be one-dimensional")
    expected = param_count(spec)
    if params.shape[0] != expected:
        raise LayoutError(
            f"parameter vector has {params.shape[0]} values, layout requires {expected}"
        )
    views = {}
    pos = 0
    for name, shape in layout(spec):
        n = int(np.prod(shape))
        views[name] = params[pos:pos + n].reshape(shape)
        pos += n
    return views


def flatten(views, spec):
    """Inverse of :func:`unflatten`: concatenate tensors in layout order."""
    parts = []
    for name, shape in layout(spec):
        if name not in views:
            raise LayoutError(f"missing tensor {name!r}")
        arr = np.asarray(views[name], dtype=np.float64)
        if arr.shape != shape:
            raise LayoutError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        parts.append(arr.reshape(-1))
    return np.concatenate(parts)


def init_params(spec, seed):
    """Deterministic initial parameter vector.

    Weight matrices get scaled Gaussian entries (1/sqrt(fan_in)), biases and
    the positional table start at zero, layer-norm gains at one, so a fresh
    transformer is the identity on its residual stream.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A17]))
    views = {}
    for name, shape in layout(spec):
        if name.endswith("_g"):
            views[name] = np.ones(shape)
        elif name == "pos_table":
            views[name] = 0.02 * rng.standard_normal(shape)
        elif len(shape) == 1:
            views[name] = np.zeros(shape)
        else:
            views[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return flatten(views, spec)
