"""Binary checkpoint format.

Little-endian layout::

    b"BITC" | u32 version | u32 len + JSON config blob | u64 tensor count
    | per tensor: u32 name len, UTF-8 name, u32 rank, u32 dims..., f32 payload
    | u32 CRC32 over the concatenated f32 payloads

The JSON blob (sorted keys, compact separators) carries the model config,
the training position and the generator state.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field
from math import prod

import numpy as np

from minibit.errors import (BadMagicError, CheckpointError, IntegrityError, TruncatedError,
                            VersionError)

MAGIC = b"BITC"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: dict
    params: dict
    position: dict = field(default_factory=dict)
    prng_state: dict = field(default_factory=dict)
    format_version: int = VERSION

    def config_blob(self):
        blob = {"format_version": self.format_version, "model": self.model_config,
                "position": self.position, "prng": self.prng_state}
        return json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(ckpt):
    out = [MAGIC, struct.pack("<I", VERSION)]
    blob = ckpt.config_blob()
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)
    out.append(struct.pack("<Q", len(ckpt.params)))
    crc = 0
    for name, arr in ckpt.params.items():
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw_name)))
        out.append(raw_name)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        crc = zlib.crc32(payload, crc)
        out.append(payload)
    out.append(struct.pack("<I", crc & 0xFFFFFFFF))
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a checkpoint: bad magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (blob_len,) = r.unpack("<I", "config length")
    try:
        blob = json.loads(r.take(blob_len, "config blob").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config blob: {exc}") from exc
    (count,) = r.unpack("<Q", "tensor count")
    params = {}
    crc = 0
    for i in range(count):
        (name_len,) = r.unpack("<I", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        (rank,) = r.unpack("<I", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}") if rank else ()
        n = prod(dims)
        payload = r.take(4 * n, f"payload of {name}")
        crc = zlib.crc32(payload, crc)
        params[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    (stored,) = r.unpack("<I", "CRC32")
    if stored != crc & 0xFFFFFFFF:
        raise IntegrityError(f"payload CRC32 mismatch: stored {stored:#010x}, computed {crc & 0xFFFFFFFF:#010x}")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(model_config=blob.get("model", {}), params=params,
                      position=blob.get("position", {}), prng_state=blob.get("prng", {}),
                      format_version=version)


def checkpoint_save(path, ckpt):
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def checkpoint_load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
