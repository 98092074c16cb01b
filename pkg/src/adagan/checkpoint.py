"""Single-file checkpoint container.

Layout, all integers little-endian::

    magic      8 bytes  b"ADAGANCK"
    version    u32      currently 1
    arch       u32 length + UTF-8 architecture name (e.g. "AdaGAN-1-3x3")
    meta       u32 length + UTF-8 JSON (sorted keys, compact separators)
    count      u32      number of tensors
    tensor*    u32 name length + UTF-8 name,
               u32 ndim, ndim x u64 extents,
               prod(extents) float32 values, little-endian, row-major

Reading then re-writing a file reproduces it byte for byte.
"""
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError

MAGIC = b"ADAGANCK"
VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    arch: str
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def to_bytes(ckpt):
    meta = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":"))
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(ckpt.arch), _pack_str(meta)]
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt):
    """Write atomically: a crash mid-write never clobbers an existing file."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (needed {n} more bytes)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def from_bytes(buf):
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    arch = r.string()
    meta = json.loads(r.string())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype=_F32).astype(np.float32).reshape(shape)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after the last tensor")
    return Checkpoint(arch, tensors, meta)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
