"""Binary checkpoints: policy spec + full ES state + config digest.

Encoding is deterministic (fixed field order, little-endian, IEEE-754
binary64), so save -> load -> save reproduces identical bytes.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import EsdtError
from .es import EsState, OptimizerState, VbnStats
from .specs import DECISION_TRANSFORMER, FEEDFORWARD, PolicySpec, param_count

MAGIC = b"ESDTCKPT"
VERSION = 1

_KIND_CODE = {FEEDFORWARD: 0, DECISION_TRANSFORMER: 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}


def config_digest(resolved):
    """64-bit digest of the fully-resolved config mapping."""
    blob = json.dumps(resolved, sort_keys=True).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def _vec(arr):
    return np.asarray(arr, dtype="<f8").tobytes()


def _pack_spec(spec):
    parts = [struct.pack(
        "<BIII", _KIND_CODE[spec.kind], spec.obs_dim, spec.act_dim, len(spec.hidden_layers)
    )]
    for h in spec.hidden_layers:
        parts.append(struct.pack("<I", h))
    parts.append(struct.pack(
        "<IIIII", spec.embed_dim, spec.n_layers, spec.n_heads,
        spec.context_len, spec.max_episode_len,
    ))
    return b"".join(parts)


def save(path, spec, state, cfg_digest):
    theta = np.asarray(state.theta, dtype="<f8")
    if theta.shape[0] != param_count(spec):
        raise EsdtError("theta length does not match the spec layout")
    opt = state.optimizer
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _pack_spec(spec),
        struct.pack("<ddIIQ", state.sigma, state.weight_decay, state.batch_size,
                    state.iteration, state.rng_seed),
        struct.pack("<BdIQ", 0 if opt.kind == "sgdm" else 1, opt.learning_rate,
                    opt.step, theta.shape[0]),
        _vec(theta),
        _vec(opt.m),
        b"\x01" + _vec(opt.v) if opt.v is not None else b"\x00",
        struct.pack("<QI", state.vbn.count, state.vbn.mean.shape[0]),
        _vec(state.vbn.mean),
        _vec(state.vbn.m2),
        struct.pack("<Q", cfg_digest),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise EsdtError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise EsdtError(f"unsupported checkpoint version {version}")
    pos = 12
    kind_code, obs_dim, act_dim, n_hidden = struct.unpack_from("<BIII", buf, pos)
    pos += 13
    hidden = []
    for _ in range(n_hidden):
        (h,) = struct.unpack_from("<I", buf, pos)
        hidden.append(h)
        pos += 4
    embed, n_layers, n_heads, context_len, max_ep = struct.unpack_from("<IIIII", buf, pos)
    pos += 20
    spec = PolicySpec(
        kind=_KIND_NAME[kind_code], obs_dim=obs_dim, act_dim=act_dim,
        hidden_layers=tuple(hidden), embed_dim=embed, n_layers=n_layers,
        n_heads=n_heads, context_len=context_len, max_episode_len=max_ep,
    )
    sigma, decay, batch_size, iteration, rng_seed = struct.unpack_from("<ddIIQ", buf, pos)
    pos += 32
    opt_code, lr, opt_step, dim = struct.unpack_from("<BdIQ", buf, pos)
    pos += 21

    def take(n):
        nonlocal pos
        out = np.frombuffer(buf[pos:pos + 8 * n], dtype="<f8").copy()
        pos += 8 * n
        return out

    theta = take(dim)
    m = take(dim)
    has_v = buf[pos]
    pos += 1
    v = take(dim) if has_v else None
    count, vdim = struct.unpack_from("<QI", buf, pos)
    pos += 12
    mean = take(vdim)
    m2 = take(vdim)
    (digest,) = struct.unpack_from("<Q", buf, pos)
    opt = OptimizerState(
        kind="sgdm" if opt_code == 0 else "adam", learning_rate=lr, m=m, v=v, step=opt_step
    )
    state = EsState(
        theta=theta, sigma=sigma, optimizer=opt, iteration=iteration,
        vbn=VbnStats(int(count), mean, m2), rng_seed=int(rng_seed),
        weight_decay=decay, batch_size=int(batch_size),
    )
    return spec, state, int(digest)
