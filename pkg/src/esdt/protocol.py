"""Binary wire protocol for the master-worker runtime.

Frame layout: ``[u32 length (little-endian)][u8 type tag][payload]`` where
``length`` counts the tag plus the payload.  All integers are fixed-width
little-endian, all reals IEEE-754 binary64 little-endian.

The update message carries only (offset, sign, weight) triples plus small
fixed-size state, so per-generation traffic scales with the population and
not with the parameter count.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError
from .es import GenerationEntry, VbnStats

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 30

TAG_REGISTER = 1
TAG_TASK = 2
TAG_RESULT = 3
TAG_UPDATE = 4
TAG_RESYNC_REQUEST = 5
TAG_RESYNC_REPLY = 6
TAG_SHUTDOWN = 7


class BadTag(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class LengthOverflow(ProtocolError):
    pass


@dataclass
class RegisterMessage:
    worker_id: int
    protocol_version: int = PROTOCOL_VERSION


@dataclass
class TaskMessage:
    iteration: int
    rng_seed: int
    sigma: float
    episodes_per_eval: int
    first_index: int
    count: int
    theta_version: int


@dataclass
class ResultMessage:
    worker_id: int
    entries: list  # GenerationEntry


@dataclass
class UpdateMessage:
    iteration: int
    entries: list  # (offset, sign, shaped_weight)
    theta_version: int
    vbn: VbnStats


@dataclass
class ResyncRequestMessage:
    worker_id: int


@dataclass
class ResyncReplyMessage:
    iteration: int
    theta: np.ndarray
    opt_kind: str
    learning_rate: float
    opt_step: int
    opt_m: np.ndarray
    opt_v: np.ndarray  # or None
    vbn: VbnStats
    theta_version: int


@dataclass
class ShutdownMessage:
    pass


def _vec(arr):
    return np.asarray(arr, dtype="<f8").tobytes()


def _unvec(buf, pos, n):
    end = pos + 8 * n
    if end > len(buf):
        raise TruncatedFrame("payload ends inside a float vector")
    return np.frombuffer(buf[pos:end], dtype="<f8").copy(), end


def _encode_vbn(stats):
    return struct.pack("<QI", stats.count, stats.mean.shape[0]) + _vec(stats.mean) + _vec(stats.m2)


def _decode_vbn(buf, pos):
    count, dim = struct.unpack_from("<QI", buf, pos)
    pos += 12
    mean, pos = _unvec(buf, pos, dim)
    m2, pos = _unvec(buf, pos, dim)
    return VbnStats(int(count), mean, m2), pos


def _encode_payload(msg):
    if isinstance(msg, RegisterMessage):
        return TAG_REGISTER, struct.pack("<II", msg.worker_id, msg.protocol_version)
    if isinstance(msg, TaskMessage):
        return TAG_TASK, struct.pack(
            "<IQdIIIQ",
            msg.iteration, msg.rng_seed, msg.sigma, msg.episodes_per_eval,
            msg.first_index, msg.count, msg.theta_version,
        )
    if isinstance(msg, ResultMessage):
        parts = [struct.pack("<II", msg.worker_id, len(msg.entries))]
        for e in msg.entries:
            parts.append(struct.pack("<QbdI", e.offset, e.sign, e.fitness, e.episode_steps))
            if e.vbn_batch is None:
                parts.append(b"\x00")
            else:
                batch = np.asarray(e.vbn_batch, dtype="<f8")
                parts.append(b"\x01" + struct.pack("<II", *batch.shape) + batch.tobytes())
        return TAG_RESULT, b"".join(parts)
    if isinstance(msg, UpdateMessage):
        parts = [struct.pack("<II", msg.iteration, len(msg.entries))]
        for off, sign, w in msg.entries:
            parts.append(struct.pack("<Qbd", off, sign, w))
        parts.append(struct.pack("<Q", msg.theta_version))
        parts.append(_encode_vbn(msg.vbn))
        return TAG_UPDATE, b"".join(parts)
    if isinstance(msg, ResyncRequestMessage):
        return TAG_RESYNC_REQUEST, struct.pack("<I", msg.worker_id)
    if isinstance(msg, ResyncReplyMessage):
        kind = 0 if msg.opt_kind == "sgdm" else 1
        parts = [
            struct.pack(
                "<IBdIQ",
                msg.iteration, kind, msg.learning_rate, msg.opt_step, msg.theta.shape[0],
            ),
            _vec(msg.theta),
            _vec(msg.opt_m),
        ]
        if msg.opt_v is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + _vec(msg.opt_v))
        parts.append(_encode_vbn(msg.vbn))
        parts.append(struct.pack("<Q", msg.theta_version))
        return TAG_RESYNC_REPLY, b"".join(parts)
    if isinstance(msg, ShutdownMessage):
        return TAG_SHUTDOWN, b""
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode(msg):
    """Message -> one framed byte string."""
    tag, payload = _encode_payload(msg)
    length = 1 + len(payload)
    if length > MAX_FRAME:
        raise LengthOverflow(f"frame of {length} bytes exceeds the {MAX_FRAME} limit")
    return struct.pack("<I", length) + bytes([tag]) + payload


def _decode_payload(tag, buf):
    try:
        if tag == TAG_REGISTER:
            return RegisterMessage(*struct.unpack("<II", buf))
        if tag == TAG_TASK:
            it, seed, sigma, epe, first, count, ver = struct.unpack("<IQdIIIQ", buf)
            return TaskMessage(it, seed, sigma, epe, first, count, ver)
        if tag == TAG_RESULT:
            worker_id, n = struct.unpack_from("<II", buf, 0)
            pos = 8
            entries = []
            for _ in range(n):
                off, sign, fit, steps = struct.unpack_from("<QbdI", buf, pos)
                pos += 21
                has_batch = buf[pos]
                pos += 1
                batch = None
                if has_batch:
                    rows, cols = struct.unpack_from("<II", buf, pos)
                    pos += 8
                    flat, pos = _unvec(buf, pos, rows * cols)
                    batch = flat.reshape(rows, cols)
                entries.append(GenerationEntry(int(off), int(sign), fit, int(steps), batch))
            return ResultMessage(int(worker_id), entries)
        if tag == TAG_UPDATE:
            it, n = struct.unpack_from("<II", buf, 0)
            pos = 8
            entries = []
            for _ in range(n):
                off, sign, w = struct.unpack_from("<Qbd", buf, pos)
                pos += 17
                entries.append((int(off), int(sign), w))
            (ver,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            vbn, pos = _decode_vbn(buf, pos)
            return UpdateMessage(int(it), entries, int(ver), vbn)
        if tag == TAG_RESYNC_REQUEST:
            return ResyncRequestMessage(*struct.unpack("<I", buf))
        if tag == TAG_RESYNC_REPLY:
            it, kind, lr, step, dim = struct.unpack_from("<IBdIQ", buf, 0)
            pos = 25
            theta, pos = _unvec(buf, pos, dim)
            m, pos = _unvec(buf, pos, dim)
            has_v = buf[pos]
            pos += 1
            v = None
            if has_v:
                v, pos = _unvec(buf, pos, dim)
            vbn, pos = _decode_vbn(buf, pos)
            (ver,) = struct.unpack_from("<Q", buf, pos)
            return ResyncReplyMessage(
                int(it), theta, "sgdm" if kind == 0 else "adam", lr, int(step),
                m, v, vbn, int(ver),
            )
        if tag == TAG_SHUTDOWN:
            return ShutdownMessage()
    except struct.error as exc:
        raise TruncatedFrame(f"payload too short for tag {tag}: {exc}") from None
    raise BadTag(f"unknown message tag {tag}")


def decode(data):
    """One framed byte string -> message.  Rejects partial or oversized frames."""
    if len(data) < 5:
        raise TruncatedFrame(f"frame header needs 5 bytes, got {len(data)}")
    (length,) = struct.unpack_from("<I", data, 0)
    if length > MAX_FRAME:
        raise LengthOverflow(f"declared frame length {length} exceeds the {MAX_FRAME} limit")
    if len(data) < 4 + length:
        raise TruncatedFrame(f"frame declares {length} bytes, only {len(data) - 4} present")
    return _decode_payload(data[4], data[5:4 + length])
