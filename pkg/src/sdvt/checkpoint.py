"""Bit-exact model checkpoints.

Layout (all integers little-endian):
    magic "SDVT" | u32 version=1 | u32 config length | UTF-8 JSON config |
    u32 tensor count | per tensor: u16 name length | UTF-8 name | u8 ndim |
    ndim x u64 dims | row-major float32 little-endian payload.

Loading validates every field and fails atomically: a malformed or truncated
file raises ``CheckpointFormatError`` naming the offending byte offset, and
no partial model is returned.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .vit import ViTConfig, ViTModel, build

MAGIC = b"SDVT"
VERSION = 1


def save_checkpoint(model: ViTModel, path) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(config_blob)))
    parts.append(config_blob)
    named = list(model.named_parameters())
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        blob = name.encode("utf-8")
        parts.append(struct.pack("<H", len(blob)))
        parts.append(blob)
        parts.append(struct.pack("<B", p.data.ndim))
        for dim in p.data.shape:
            parts.append(struct.pack("<Q", dim))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointFormatError(
                f"{self.path}: truncated while reading {what} at byte offset {self.off} "
                f"(need {n} bytes, have {len(self.buf) - self.off})")
        chunk = self.buf[self.off:self.off + n]
        self.off += n
        return chunk

    def u8(self, what: str) -> int:
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path) -> ViTModel:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(
            f"{path}: bad magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported version {version} at byte offset 4 (expected {VERSION})")
    config_len = r.u32("config length")
    config_off = r.off
    try:
        config = ViTConfig.from_dict(json.loads(r.take(config_len, "config").decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(
            f"{path}: invalid config block at byte offset {config_off}: {exc}") from exc

    tensor_count = r.u32("tensor count")
    arrays = {}
    for i in range(tensor_count):
        name_len = r.u16(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        ndim = r.u8(f"tensor '{name}' ndim")
        dims = tuple(r.u64(f"tensor '{name}' dim {j}") for j in range(ndim))
        n_values = int(np.prod(dims)) if dims else 1
        payload_off = r.off
        payload = r.take(4 * n_values, f"tensor '{name}' payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        del payload_off
    if r.off != len(r.buf):
        raise CheckpointFormatError(
            f"{path}: {len(r.buf) - r.off} trailing bytes at byte offset {r.off}")

    model = build(config)
    expected = [name for name, _ in model.named_parameters()]
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in set(expected)]
    if missing or extra:
        raise CheckpointFormatError(
            f"{path}: parameter name mismatch (missing {missing[:3]}, extra {extra[:3]})")
    try:
        model.load_arrays(arrays)
    except Exception as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from exc
    return model
