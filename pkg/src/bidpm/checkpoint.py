"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"BIDPMCKP"
    version    u32
    config     u32 length + UTF-8 text (canonical config rendering)
    step       u64      optimizer steps taken (also the minibatch/RNG counter)
    opt_step   u64      Adam step counter
    count      u32      number of arrays
    per array: u32 name length + UTF-8 name, u32 ndim, ndim x u64 dims,
               prod(dims) x f64 data

Array names are prefixed ``live/``, ``ema/``, ``adam.m/`` and ``adam.v/``.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"BIDPMCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    step: int
    opt_step: int
    arrays: dict[str, np.ndarray]

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def encode(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    text = ckpt.config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<QQ", ckpt.step, ckpt.opt_step))
    buf.write(struct.pack("<I", len(ckpt.arrays)))
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode(data: bytes) -> Checkpoint:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = bytes(view[pos:pos + n])
        pos += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    (n,) = struct.unpack("<I", take(4))
    config_text = take(n).decode("utf-8")
    step, opt_step = struct.unpack("<QQ", take(16))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config_text, step, opt_step, arrays)


def save(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)
    return path


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def from_state(config_text: str, state) -> Checkpoint:
    """Pack a trainer state (live field, EMA, Adam moments)."""
    arrays: dict[str, np.ndarray] = {}
    for name, arr in state.field.named_arrays().items():
        arrays[f"live/{name}"] = arr
    for name, arr in state.ema.items():
        arrays[f"ema/{name}"] = arr
    for name, arr in state.opt.m.items():
        arrays[f"adam.m/{name}"] = arr
    for name, arr in state.opt.v.items():
        arrays[f"adam.v/{name}"] = arr
    return Checkpoint(config_text, state.step, state.opt.step, arrays)
