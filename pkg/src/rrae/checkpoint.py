"""Versioned, checksummed binary container for parameters and training state.

Layout (little-endian)::

    b"RRAE-CKPT1"  u32 version
    u32 n, n bytes of JSON config
    u32 block count, then per block: u32 n, name (UTF-8), u64 count, float64[count]
    u8 has_state; if 1: u32 n, JSON state metadata, then blocks as above
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .numerics import AdamState

MAGIC = b"RRAE-CKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainState:
    """Everything beyond the parameters needed to resume training exactly."""

    adam: AdamState
    epoch: int = 0
    cursor: int = 0              # next minibatch index within the epoch
    rng_state: dict | None = None  # bit-generator state at the start of ``epoch``
    best_tune: float = -1.0
    stale: int = 0
    loss_sum: float = 0.0        # training loss accumulated since the last evaluation
    loss_count: int = 0
    stopped: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def iteration(self) -> int:
        return self.adam.iteration

    def meta(self) -> dict:
        return {
            "iteration": self.adam.iteration, "epoch": self.epoch, "cursor": self.cursor,
            "rng_state": self.rng_state, "best_tune": self.best_tune, "stale": self.stale,
            "loss_sum": self.loss_sum, "loss_count": self.loss_count,
            "stopped": self.stopped, "extra": self.extra,
        }

    def blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self.adam.first_moment.items():
            out["adam.m." + k] = v
        for k, v in self.adam.second_moment.items():
            out["adam.v." + k] = v
        return out

    @classmethod
    def from_parts(cls, meta: dict, blocks: dict[str, np.ndarray], shapes=None, dtype=np.float64):
        def shaped(name, arr):
            key = name.split(".", 2)[2]
            arr = arr.astype(dtype)
            return arr.reshape(shapes[key]) if shapes is not None else arr
        m = {k.split(".", 2)[2]: shaped(k, v) for k, v in blocks.items() if k.startswith("adam.m.")}
        v = {k.split(".", 2)[2]: shaped(k, a) for k, a in blocks.items() if k.startswith("adam.v.")}
        adam = AdamState(m, v, int(meta["iteration"]))
        return cls(adam, meta["epoch"], meta["cursor"], meta["rng_state"], meta["best_tune"],
                   meta["stale"], meta["loss_sum"], meta["loss_count"], meta["stopped"],
                   meta.get("extra", {}))


def _pack_json(obj) -> bytes:
    b = json.dumps(obj, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_blocks(blocks: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        nb = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f8").ravel()
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<Q", data.size))
        parts.append(data.tobytes())
    return b"".join(parts)


def dumps(config: dict, blocks: dict[str, np.ndarray], state: TrainState | None = None) -> bytes:
    body = [MAGIC, struct.pack("<I", VERSION), _pack_json(config), _pack_blocks(blocks)]
    if state is None:
        body.append(b"\x00")
    else:
        body += [b"\x01", _pack_json(state.meta()), _pack_blocks(state.blocks())]
    payload = b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


def write(path, config: dict, blocks: dict[str, np.ndarray], state: TrainState | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(config, blocks, state))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self):
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))

    def blocks(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<I")
            name = self.take(n).decode("utf-8")
            (size,) = self.unpack("<Q")
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64)
        return out


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray], tuple[dict, dict] | None]:
    """Parse a checkpoint into ``(config, blocks, (state_meta, state_blocks) | None)``."""
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("truncated checkpoint")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checksum mismatch (file corrupted or truncated)")
    r = _Reader(data[:-4])
    r.take(len(MAGIC) + 4)
    config = r.json()
    blocks = r.blocks()
    (flag,) = r.unpack("<B")
    state = (r.json(), r.blocks()) if flag else None
    if r.off != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint body")
    return config, blocks, state


def read(path) -> tuple[dict, dict[str, np.ndarray], Any]:
    return loads(Path(path).read_bytes())
