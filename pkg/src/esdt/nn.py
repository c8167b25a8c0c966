"""Forward-only network evaluation over flat parameter vectors.

No autodiff: the optimizer never needs gradients, so these are plain
numpy functions of (params, input).  Transformer blocks use the pre-norm
variant: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``.
"""

import numpy as np

from . import kernels
from .errors import LayoutError
from .specs import unflatten


def mlp_forward(params, spec, obs):
    """Feedforward policy: tanh hidden layers, linear output."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (spec.obs_dim,):
        raise LayoutError(f"observation shape {obs.shape}, expected ({spec.obs_dim},)")
    views = unflatten(params, spec)
    x = obs
    n_layers = len(spec.hidden_layers) + 1
    for i in range(n_layers):
        x = x @ views[f"layer{i}_w"] + views[f"layer{i}_b"]
        if i < n_layers - 1:
            x = np.tanh(x)
    return x


def causal_self_attention(block, seq):
    """One attention sublayer: project, mask, mix values of the causal prefix.

    ``block`` holds attn_wq/bq, wk/bk, wv/bv, wo/bo and ``n_heads``; ``seq``
    is (T, D).  Output position i depends only on positions <= i.
    """
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise LayoutError("attention input must be a nonempty (T, D) array")
    q = x @ block["attn_wq"] + block["attn_bq"]
    k = x @ block["attn_wk"] + block["attn_bk"]
    v = x @ block["attn_wv"] + block["attn_bv"]
    mixed = kernels.causal_attention(q, k, v, block["n_heads"])
    return mixed @ block["attn_wo"] + block["attn_bo"]


def block_views(views, l, n_heads):
    """Attention/FFN tensors of block ``l`` keyed without the block prefix."""
    p = f"block{l}_"
    out = {name[len(p):]: arr for name, arr in views.items() if name.startswith(p)}
    out["n_heads"] = n_heads
    return out


def transformer_apply(blocks, x):
    """Block-stack core over an already-embedded sequence (T, D)."""
    for blk in blocks:
        x = x + causal_self_attention(blk, kernels.layer_norm(x, blk["ln1_g"], blk["ln1_b"]))
        h = kernels.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
        h = np.tanh(h @ blk["ffn_w1"] + blk["ffn_b1"])
        x = x + h @ blk["ffn_w2"] + blk["ffn_b2"]
    return x


def transformer_forward(params, spec, token_seq):
    """Run embedded tokens (T, D) through the block stack.

    The caller embeds tokens and adds positions (see :mod:`esdt.dt`); this
    function is the pure sequence-to-sequence core.  T may not exceed
    3 * context_len -- cropping is the policy wrapper's job.
    """
    x = np.asarray(token_seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.embed_dim:
        raise LayoutError(f"token sequence must be (T, {spec.embed_dim})")
    if x.shape[0] < 1 or x.shape[0] > 3 * spec.context_len:
        raise LayoutError(
            f"sequence length {x.shape[0]} outside 1..{3 * spec.context_len}"
        )
    views = unflatten(params, spec)
    blocks = [block_views(views, l, spec.n_heads) for l in range(spec.n_layers)]
    return transformer_apply(blocks, x)
