"""Binary checkpoint container.

Layout::

    b"PIPCKPT1"                       8 bytes magic
    header length                     uint32, little-endian
    header                            UTF-8 JSON
    parameter blocks                  raw little-endian float64, header order

The header holds ``format_version``, ``config``, ``original_indices``,
``byte_order``, ``dtype``, ``tensors`` (name + shape, in block order),
``payload_bytes`` and the SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import (
    EMBED_PARAM_NAMES,
    HEAD_PARAM_NAMES,
    LAYER_PARAM_NAMES,
    ModelConfig,
    TransformerModel,
    build_model,
)

MAGIC = b"PIPCKPT1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<I")


class CheckpointError(IOError):
    """Unreadable, truncated or incompatible checkpoint."""


def _tensors(model: TransformerModel) -> list[tuple[str, np.ndarray]]:
    return [(name, p.data) for name, p in model.named_parameters()]


def to_bytes(model: TransformerModel) -> bytes:
    tensors = _tensors(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "original_indices": model.original_indices,
        "byte_order": "little",
        "dtype": "float64",
        "tensors": [[name, list(a.shape)] for name, a in tensors],
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _LEN.pack(len(hbytes)) + hbytes + payload


def save_checkpoint(model: TransformerModel, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def read_header(blob: bytes) -> tuple[dict, int]:
    if len(blob) < len(MAGIC) + _LEN.size or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    (hlen,) = _LEN.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if len(blob) < start + hlen:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {header.get('format_version')!r} unsupported (want {FORMAT_VERSION})"
        )
    if header.get("byte_order") != "little" or header.get("dtype") != "float64":
        raise CheckpointError("checkpoint must be little-endian float64")
    return header, start + hlen


def from_bytes(blob: bytes) -> TransformerModel:
    header, offset = read_header(blob)
    payload = blob[offset:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"corrupt checkpoint: payload is {len(payload)} bytes, header declares {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("corrupt checkpoint: payload checksum mismatch")

    arrays: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape, dtype=np.int64)) * 8
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += n

    config = ModelConfig(**header["config"])
    try:
        embed = {n: arrays[f"embed.{n}"] for n in EMBED_PARAM_NAMES}
        layers = [
            (i, {n: arrays[f"layers.{i}.{n}"] for n in LAYER_PARAM_NAMES})
            for i in header["original_indices"]
        ]
        head = {n: arrays[f"head.{n}"] for n in HEAD_PARAM_NAMES}
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc}") from exc
    return build_model(config, embed, layers, head)


def load_checkpoint(path: str | Path) -> TransformerModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(blob)
