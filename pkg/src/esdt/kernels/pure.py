"""Pure-numpy implementations of the hot kernels.

Same contracts as ``_fastcore``; this module is the import-time fallback and
the reference the compiled kernels are tested against.
"""

import numpy as np

BACKEND_NAME = "pure"

LN_EPS = 1e-5


def layer_norm(x, gain, bias):
    """Normalize each row of ``x`` (T, D) to zero mean / unit variance."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gain + bias


def causal_attention(q, k, v, n_heads):
    """Masked multi-head attention over already-projected q/k/v (T, D).

    Row i of the output mixes values at positions <= i with softmax weights
    over logits scaled by 1/sqrt(head_dim).
    """
    t, d = q.shape
    hd = d // n_heads
    out = np.empty((t, d))
    scale = 1.0 / np.sqrt(hd)
    mask = np.tril(np.ones((t, t), dtype=bool))
    for h in range(n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        logits = (q[:, sl] @ k[:, sl].T) * scale
        logits = np.where(mask, logits, -np.inf)
        logits = logits - logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=-1, keepdims=True)
        out[:, sl] = w @ v[:, sl]
    return out


def weighted_noise_sum(table, offsets, signs, weights, dim, batch_size):
    """Sum of sign*weight-scaled noise slices, accumulated in entry order.

    ``batch_size`` only bounds the temporary matrix; the reduction order over
    entries is fixed so every node reconstructs bit-identical updates.
    """
    n = len(offsets)
    acc = np.zeros(dim)
    coeff = np.asarray(signs, dtype=np.float64) * np.asarray(weights, dtype=np.float64)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        rows = np.empty((stop - start, dim))
        for j, off in enumerate(offsets[start:stop]):
            rows[j] = table[off:off + dim]
        acc += coeff[start:stop] @ rows
    return acc
