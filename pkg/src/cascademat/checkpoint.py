"""Single-file binary checkpoint container.

Layout: magic + u32 version, length-prefixed canonical config JSON,
length-prefixed meta JSON (epoch counter, optimizer step, rng state), then a
u32 tensor count followed by name-sorted records of
(u16 name length, name, u8 ndim, u64 dims..., float64 little-endian data).
Canonical JSON and name sorting make save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CMCK"
VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    config: dict
    meta: dict
    tensors: dict


def save_checkpoint(path, config: dict, meta: dict, tensors: dict) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    for blob in (canonical_json(config), canonical_json(meta)):
        buf += struct.pack("<Q", len(blob))
        buf += blob
    names = sorted(tensors)
    buf += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(buf))
    tmp.replace(path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.blob):
            raise ValueError("truncated checkpoint")
        out = self.blob[self.at: self.at + n]
        self.at += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n,) = reader.unpack("<Q")
    config = json.loads(reader.take(n).decode("utf-8"))
    (n,) = reader.unpack("<Q")
    meta = json.loads(reader.take(n).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(size * 8), dtype="<f8").reshape(shape)
        tensors[name] = data.copy()
    if reader.at != len(reader.blob):
        raise ValueError("trailing bytes in checkpoint")
    return Checkpoint(config=config, meta=meta, tensors=tensors)


def apply_to_model(ckpt: Checkpoint, model) -> None:
    """Copy model parameters out of the checkpoint, with strict validation."""
    params = model.param_dict()
    for name, p in params.items():
        if name not in ckpt.tensors:
            raise ValueError(f"checkpoint missing parameter {name}")
        value = ckpt.tensors[name]
        if value.shape != p.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {value.shape}, "
                f"model {p.data.shape}")
        p.data[...] = value
