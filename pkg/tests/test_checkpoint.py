import struct
import zlib

import numpy as np
import pytest

from quarc.checkpoint import load_checkpoint, load_model, save_checkpoint
from quarc.config import ModelConfig
from quarc.errors import IngestionError
from quarc.models import build_variant


def tiny_cfg(**overrides):
    base = dict(
        variant=6,
        seed=3,
        embed_dim=8,
        max_len=6,
        conv_filters=3,
        common_dim=2,
        dropout=0.0,
        epochs=1,
        batch=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def walk_entries(blob):
    """Independent re-read of the wire grammar, used as the format oracle."""
    assert blob[:4] == b"QRC1"
    end = len(blob) - 4
    pos = 4
    out = {}
    while pos < end:
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(blob, "<f8", count, pos).reshape(dims)
        pos += 8 * count
    assert pos == end
    (crc,) = struct.unpack_from("<I", blob, end)
    assert crc == zlib.crc32(blob[:end]) & 0xFFFFFFFF
    return out


def test_saved_bytes_match_independent_parse(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params, cfg)
    entries = walk_entries(path.read_bytes())

    for p in model.params:
        assert np.array_equal(entries[p.name], p.value), p.name
    assert entries["config.seed"] == 3.0
    assert entries["config.dropout"] == 0.0
    assert "config.algebra=quaternion" in entries


def test_roundtrip_config_and_tensors(tmp_path):
    cfg = tiny_cfg(dropout=0.25, lr=0.002, embeddings="vec=alt.txt")
    model = build_variant(cfg)
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params, cfg)
    got_cfg, tensors = load_checkpoint(path)

    assert got_cfg == cfg  # includes the '=' inside the string value
    assert set(tensors) == {p.name for p in model.params}
    for p in model.params:
        assert tensors[p.name].dtype == np.float64
        assert np.array_equal(tensors[p.name], p.value)


def test_load_model_reproduces_forward_exactly(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    rng = np.random.default_rng(11)
    inputs = {
        "tweet": rng.normal(size=(2, cfg.max_len, 4 * cfg.embed_units)),
        "tweet_mask": np.ones((2, cfg.max_len), dtype=bool),
    }
    before, _ = model.forward(inputs, mode="eval")

    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params, cfg)
    # perturb the live model; the restored copy must not see this
    model.params[0].value = model.params[0].value + 1.0
    restored, got_cfg = load_model(path)
    after, _ = restored.forward(inputs, mode="eval")

    assert got_cfg == cfg
    assert np.array_equal(before.value, after.value)


def test_minimal_handwritten_file_loads(tmp_path):
    def entry(name, dims, values):
        b = struct.pack("<I", len(name)) + name
        b += struct.pack("<I", len(dims))
        for d in dims:
            b += struct.pack("<I", d)
        return b + struct.pack(f"<{len(values)}d", *values)

    body = b"QRC1"
    body += entry(b"config.seed", (), [9.0])
    body += entry(b"config.embeddings=glove.txt", (), [0.0])
    body += entry(b"w", (2, 2), [1.5, -2.0, 0.0, 4.0])
    path = tmp_path / "hand.qrc"
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))

    cfg, tensors = load_checkpoint(path)
    assert cfg.seed == 9
    assert cfg.embeddings == "glove.txt"
    assert cfg.variant == 1  # unmentioned keys keep their defaults
    assert np.array_equal(tensors["w"], [[1.5, -2.0], [0.0, 4.0]])


def test_flipped_byte_fails_checksum(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params, cfg)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(blob)
    with pytest.raises(IngestionError, match="checksum"):
        load_checkpoint(path)


def test_truncation_reports_offset(tmp_path):
    def entry(name, dims, values):
        b = struct.pack("<I", len(name)) + name + struct.pack("<I", len(dims))
        for d in dims:
            b += struct.pack("<I", d)
        return b + struct.pack(f"<{len(values)}d", *values)

    # claim a (3,) payload but supply only CRC after one value's worth
    body = b"QRC1" + entry(b"w", (3,), [1.0])[: 4 + 1 + 4 + 4 + 8]
    path = tmp_path / "short.qrc"
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(IngestionError, match="offset"):
        load_checkpoint(path)


def test_bad_magic_and_short_file(tmp_path):
    path = tmp_path / "bad.qrc"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(IngestionError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(b"QR")
    with pytest.raises(IngestionError, match="short"):
        load_checkpoint(path)


def test_missing_tensor_rejected(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params[:-1], cfg)
    with pytest.raises(IngestionError, match="missing tensor"):
        load_model(path)


def test_shape_mismatch_rejected(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    # lie about the architecture: config says 4 filters, tensors carry 3
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params, tiny_cfg(conv_filters=4))
    with pytest.raises(IngestionError, match="shape mismatch|missing tensor"):
        load_model(path)


def test_unknown_config_key_rejected(tmp_path):
    body = b"QRC1" + struct.pack("<I", len(b"config.bogus")) + b"config.bogus"
    body += struct.pack("<I", 0) + struct.pack("<d", 1.0)
    path = tmp_path / "k.qrc"
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(IngestionError, match="unknown config key"):
        load_checkpoint(path)


def test_duplicate_entry_rejected(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params + [model.params[0]], cfg)
    with pytest.raises(IngestionError, match="duplicate"):
        load_checkpoint(path)


def test_write_is_atomic_over_existing(tmp_path):
    cfg = tiny_cfg()
    model = build_variant(cfg)
    path = tmp_path / "m.qrc"
    save_checkpoint(path, model.params, cfg)
    first = path.read_bytes()
    save_checkpoint(path, model.params, cfg)
    assert path.read_bytes() == first
    assert list(tmp_path.glob("*.tmp")) == []
