"""Binary model checkpoints.

Layout: 4-byte magic ``QRC1``, then a sequence of named entries, then a
trailing CRC-32 (zlib flavor) of everything before it as a little-endian u32.
Each entry is::

    name_len: u32 | name: utf-8 bytes | rank: u32 | dims: u32 * rank
    | payload: f64 * prod(dims)

all little-endian.  Parsing stops when exactly four bytes (the checksum)
remain.

The model configuration rides along as reserved entries whose names start
with ``config.``: numeric settings store their value as a rank-0 scalar
payload, string settings append ``=<value>`` to the entry name and carry a
single zero payload.  Everything else is a weight tensor keyed by parameter
name.
"""

from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
import zlib

import numpy as np

from .config import ModelConfig
from .errors import IngestionError

MAGIC = b"QRC1"
_CONFIG_PREFIX = "config."


def _entry_bytes(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    parts = [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
    for d in arr.shape:
        parts.append(struct.pack("<I", d))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _config_entries(cfg: ModelConfig):
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, str):
            yield f"{_CONFIG_PREFIX}{f.name}={value}", np.zeros(())
        else:
            yield f"{_CONFIG_PREFIX}{f.name}", np.asarray(float(value))


def save_checkpoint(path, params, cfg: ModelConfig) -> None:
    """Write config plus every parameter (running stats included) to ``path``.

    The file appears atomically: bytes go to a temp file in the target
    directory which is renamed over ``path`` once complete.
    """
    blob = bytearray(MAGIC)
    for name, arr in _config_entries(cfg):
        blob += _entry_bytes(name, arr)
    for p in params:
        blob += _entry_bytes(p.name, p.value)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Cursor over the checkpoint bytes; errors carry the failing offset."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data) - 4:
            raise IngestionError(
                f"truncated checkpoint: needed {n} bytes for {what} "
                f"at offset {self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    """Read ``path`` and return ``(cfg, {name: array})``.

    Raises IngestionError for a bad magic, a checksum mismatch, truncation,
    duplicate entry names, or an unknown config key.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 4:
        raise IngestionError(f"checkpoint too short: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise IngestionError(f"bad checkpoint magic {data[:4]!r}")
    stored = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise IngestionError(
            f"checkpoint checksum mismatch at offset {len(data) - 4}: "
            f"stored {stored:#010x}, computed {actual:#010x}"
        )

    reader = _Reader(data)
    reader.pos = len(MAGIC)
    entries = {}
    while reader.pos < len(data) - 4:
        name_len = reader.u32("name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestionError(f"undecodable entry name: {exc}") from exc
        rank = reader.u32(f"rank of {name!r}")
        shape = tuple(reader.u32(f"dim of {name!r}") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = reader.take(8 * count, f"payload of {name!r}")
        if name in entries:
            raise IngestionError(f"duplicate checkpoint entry {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()

    cfg = _config_from_entries(entries)
    tensors = {k: v for k, v in entries.items() if not k.startswith(_CONFIG_PREFIX)}
    return cfg, tensors


def _config_from_entries(entries) -> ModelConfig:
    types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    kwargs = {}
    for name, arr in entries.items():
        if not name.startswith(_CONFIG_PREFIX):
            continue
        body = name[len(_CONFIG_PREFIX) :]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            key, value = body, arr
        if key not in types:
            raise IngestionError(f"unknown config key {key!r} in checkpoint")
        if isinstance(value, str):
            kwargs[key] = value
        elif types[key] in ("int", int):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    cfg = ModelConfig(**kwargs)
    cfg.validate()
    return cfg


def load_model(path):
    """Rebuild the saved model: returns ``(model, cfg)``.

    Every parameter of the reconstructed architecture must be present with
    the recorded shape; stray tensors are rejected rather than ignored.
    """
    from .models import build_variant

    cfg, tensors = load_checkpoint(path)
    model = build_variant(cfg)
    seen = set()
    for p in model.params:
        if p.name not in tensors:
            raise IngestionError(f"checkpoint is missing tensor {p.name!r}")
        arr = tensors[p.name]
        if arr.shape != p.value.shape:
            raise IngestionError(
                f"shape mismatch for {p.name!r}: checkpoint has {arr.shape}, "
                f"model needs {p.value.shape}"
            )
        p.value = arr
        seen.add(p.name)
    extra = sorted(set(tensors) - seen)
    if extra:
        raise IngestionError(f"checkpoint has unknown tensors: {extra}")
    return model, cfg
