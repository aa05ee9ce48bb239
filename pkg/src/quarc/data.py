"""Text normalization, embeddings, image ingestion, dataset format, synthesis.

On-disk dataset layout: a directory with `manifest.jsonl` (one JSON record
per sample), images as binary P6 PPM under `img/`, and the embedding table
as `embeddings.txt` (one `token v1 ... vd` line per token).  Everything is
written deterministically so equal seeds produce byte-identical trees.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import string
import zlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DataError, IngestionError
from .quat import QTensor

_URL_RE = re.compile(r"https?://\S+|\bt\.co/\S+")
_STRIP = string.punctuation + "“”‘’«»…¡¿"
# joiner/selector codepoints dropped before emoji mapping
_EMOJI_GLUE = {0xFE0F, 0x200D, 0x20E3}
_EMOJI_RANGES = ((0x1F000, 0x1FAFF), (0x2600, 0x27BF), (0x2B00, 0x2BFF))

_emoji_map_cache = None


def load_emoji_map(path=None):
    """codepoint -> name token map from a `hex<TAB>name` file."""
    if path is None:
        text = (resources.files("quarc") / "data" / "emoji_map.tsv").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cp, _, name = line.partition("\t")
        out[int(cp, 16)] = name.strip()
    return out


def _default_emoji_map():
    global _emoji_map_cache
    if _emoji_map_cache is None:
        _emoji_map_cache = load_emoji_map()
    return _emoji_map_cache


def _is_emoji(cp):
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


def normalize_text(raw, emoji_map=None):
    """Lowercase, drop URLs, name emojis, split, strip edge punctuation.

    Idempotent: running the output back through (joined on spaces) returns
    the same tokens.
    """
    if emoji_map is None:
        emoji_map = _default_emoji_map()
    text = _URL_RE.sub(" ", raw.lower())
    pieces = []
    for ch in text:
        cp = ord(ch)
        if cp in _EMOJI_GLUE:
            continue
        if cp in emoji_map:
            pieces.append(f" {emoji_map[cp]} ")
        elif _is_emoji(cp):
            pieces.append(" emoji ")
        else:
            pieces.append(ch)
    tokens = []
    for tok in "".join(pieces).split():
        tok = tok.strip(_STRIP)
        if tok:
            tokens.append(tok)
    return tokens


# -- embeddings ---------------------------------------------------------------


class EmbeddingTable:
    """Frozen token -> vector map with deterministic out-of-vocabulary rows.

    Unknown tokens draw a uniform(-0.25, 0.25) vector from a stream keyed by
    (oov_seed, crc32(token)), so the same token always embeds identically.
    """

    def __init__(self, vectors, dim, oov_seed=0):
        self.vectors = vectors
        self.dim = dim
        self.oov_seed = oov_seed
        self._oov_cache = {}

    @classmethod
    def load(cls, path, oov_seed=0):
        vectors = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                token, vals = parts[0], parts[1:]
                if dim is None:
                    dim = len(vals)
                    if dim == 0:
                        raise DataError(f"{path}:{lineno}: no vector components")
                elif len(vals) != dim:
                    raise DataError(
                        f"{path}:{lineno}: expected {dim} components, got {len(vals)}"
                    )
                try:
                    vectors[token] = np.array([float(v) for v in vals])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
        if dim is None:
            raise DataError(f"{path}: empty embedding file")
        return cls(vectors, dim, oov_seed)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for token, vec in self.vectors.items():
                fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")

    def lookup(self, token):
        vec = self.vectors.get(token)
        if vec is not None:
            return vec
        vec = self._oov_cache.get(token)
        if vec is None:
            seq = np.random.SeedSequence([self.oov_seed, zlib.crc32(token.encode())])
            vec = np.random.default_rng(seq).uniform(-0.25, 0.25, self.dim)
            self._oov_cache[token] = vec
        return vec


def embed(tokens, table, max_len=150):
    """Tokens -> QTensor[max_len, units]; frozen, never part of the tape.

    Sequences are truncated or zero-padded to ``max_len``; each embedding row
    is padded with 4 - (d mod 4) zeros (at least one, so 100 -> 104) and
    packed into consecutive quadruples.
    """
    units = table.dim // 4 + 1
    rows = np.zeros((max_len, 4 * units))
    for pos, token in enumerate(tokens[:max_len]):
        rows[pos, : table.dim] = table.lookup(token)
    return QTensor(rows.reshape(max_len, units, 4).transpose(2, 0, 1).copy())


def embed_planar(tokens, table, max_len=150):
    """Planar (max_len, 4*units) layout of ``embed`` for the model input."""
    q = embed(tokens, table, max_len)
    return q.data.transpose(1, 0, 2).reshape(max_len, -1).copy()


# -- images ---------------------------------------------------------------------


class _ByteScanner:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def fail(self, msg):
        raise IngestionError(f"{self.path}: {msg} at byte {self.pos}")

    def token(self):
        """Next whitespace-delimited header token, skipping `#` comments."""
        while self.pos < len(self.blob):
            c = self.blob[self.pos]
            if c in b" \t\r\n":
                self.pos += 1
            elif c == ord("#"):
                while self.pos < len(self.blob) and self.blob[self.pos] != ord("\n"):
                    self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < len(self.blob) and self.blob[self.pos] not in b" \t\r\n":
            self.pos += 1
        if start == self.pos:
            self.fail("unexpected end of header")
        return self.blob[start : self.pos]

    def int_token(self, what):
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            self.pos -= len(tok)
            self.fail(f"bad {what} {tok!r}")


def resize_nearest(img, h, w):
    """Nearest-neighbor resize by the floor(i*src/dst) index map."""
    sh, sw = img.shape[:2]
    ys = (np.arange(h) * sh) // h
    xs = (np.arange(w) * sw) // w
    return img[ys][:, xs]


def load_image(path, size=32):
    """Binary PPM (P6) or PGM (P5), maxval <= 255 -> (size, size, 3) in [0,1].

    Grayscale images are replicated across the three channels; everything is
    nearest-neighbor resized to the target square.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    sc = _ByteScanner(blob, str(path))
    magic = sc.token()
    if magic not in (b"P6", b"P5"):
        sc.pos = 0
        sc.fail(f"unsupported magic {magic!r}")
    width = sc.int_token("width")
    height = sc.int_token("height")
    maxval = sc.int_token("maxval")
    if width < 1 or height < 1:
        sc.fail(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        sc.fail(f"unsupported maxval {maxval}")
    sc.pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = blob[sc.pos : sc.pos + need]
    if len(payload) < need:
        raise IngestionError(
            f"{path}: payload truncated at byte {sc.pos + len(payload)}, "
            f"expected {need} bytes from byte {sc.pos}"
        )
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return resize_nearest(img, size, size).astype(np.float64) / float(maxval)


def write_ppm(path, img_u8):
    """Write an (h, w, 3) uint8 array as binary P6."""
    h, w, _ = img_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img_u8.astype(np.uint8).tobytes())


# -- dataset -------------------------------------------------------------------


@dataclass
class Sample:
    id: str
    tweet_tokens: list
    imgtext_tokens: list
    label: int
    image: np.ndarray = None  # (32, 32, 3) floats in [0, 1]
    features: np.ndarray = None  # flat, length divisible by 4


def split_of(sample_id):
    """Stable 80/10/10 assignment by hashing the sample id."""
    bucket = hashlib.blake2s(sample_id.encode()).digest()[0] % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


def write_dataset(out_dir, samples, table=None):
    """Write manifest + images (+ embeddings) into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "img")
    lines = []
    for s in samples:
        rec = {
            "id": s.id,
            "tweet_text": " ".join(s.tweet_tokens),
            "img_text": " ".join(s.imgtext_tokens),
            "label": int(s.label),
        }
        if s.image is not None:
            os.makedirs(img_dir, exist_ok=True)
            rel = f"img/{s.id}.ppm"
            write_ppm(
                os.path.join(out_dir, rel),
                np.round(np.asarray(s.image) * 255.0).astype(np.uint8),
            )
            rec["image"] = rel
        if s.features is not None:
            rec["features"] = [float(v) for v in s.features]
        lines.append(json.dumps(rec))
    tmp = os.path.join(out_dir, "manifest.jsonl.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.jsonl"))
    if table is not None:
        table.save(os.path.join(out_dir, "embeddings.txt"))


def read_dataset(dir_path):
    """Parse a dataset directory back into Samples (images loaded eagerly)."""
    manifest = os.path.join(dir_path, "manifest.jsonl")
    try:
        with open(manifest, encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset manifest {manifest}: {exc}") from exc
    samples = []
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest}:{lineno}: bad JSON: {exc}") from None
        for key in ("id", "tweet_text", "label"):
            if key not in rec:
                raise DataError(f"{manifest}:{lineno}: missing field {key!r}")
        if rec["label"] not in (0, 1):
            raise DataError(f"{manifest}:{lineno}: label must be 0 or 1")
        image = None
        if "image" in rec:
            image = load_image(os.path.join(dir_path, rec["image"]))
        features = None
        if "features" in rec:
            features = np.array(rec["features"], dtype=np.float64)
            if features.size % 4 != 0:
                raise DataError(
                    f"{manifest}:{lineno}: feature length {features.size} "
                    "not divisible by 4"
                )
        samples.append(
            Sample(
                id=rec["id"],
                tweet_tokens=normalize_text(rec["tweet_text"]),
                imgtext_tokens=normalize_text(rec.get("img_text", "")),
                label=int(rec["label"]),
                image=image,
                features=features,
            )
        )
    if not samples:
        raise DataError(f"{manifest}: no samples")
    return samples


def split_samples(samples):
    out = {"train": [], "val": [], "test": []}
    for s in samples:
        out[split_of(s.id)].append(s)
    return out


def image_planar(img):
    """(h, w, 3) floats -> (h, w, 4) pure-imaginary quaternion pixels."""
    h, w, _ = img.shape
    out = np.zeros((h, w, 4))
    out[:, :, 1:] = img
    return out


def features_planar(feats):
    """Flat feature vector -> planar quaternion layout (4 plane blocks)."""
    f = np.asarray(feats, dtype=np.float64)
    return f.reshape(-1, 4).T.reshape(-1).copy()


def prepare_batch(samples, table, cfg):
    """Samples -> model input dict + label vector.

    Token masks flag real (non-pad) positions; a fully empty token list
    keeps position 0 unmasked so attention has a (zero-vector) target.
    """
    n = len(samples)
    inputs = {}
    if cfg.variant != 7:
        tweets = np.stack(
            [embed_planar(s.tweet_tokens, table, cfg.max_len) for s in samples]
        )
        mask = np.zeros((n, cfg.max_len), dtype=bool)
        for row, s in enumerate(samples):
            mask[row, : max(1, min(len(s.tweet_tokens), cfg.max_len))] = True
        inputs["tweet"] = tweets
        inputs["tweet_mask"] = mask
    if cfg.variant in (1, 2, 3, 4, 5):
        img_texts = np.stack(
            [embed_planar(s.imgtext_tokens, table, cfg.max_len) for s in samples]
        )
        mask = np.zeros((n, cfg.max_len), dtype=bool)
        for row, s in enumerate(samples):
            mask[row, : max(1, min(len(s.imgtext_tokens), cfg.max_len))] = True
        inputs["imgtext"] = img_texts
        inputs["imgtext_mask"] = mask
    if cfg.variant in (1, 2, 3, 4, 5, 7):
        if cfg.image_encoder == "builtin_qcnn":
            missing = [s.id for s in samples if s.image is None]
            if missing:
                raise IngestionError(f"samples missing images: {missing[:3]}")
            inputs["image"] = np.stack([image_planar(s.image) for s in samples])
        else:
            missing = [s.id for s in samples if s.features is None]
            if missing:
                raise IngestionError(f"samples missing features: {missing[:3]}")
            feats = np.stack([features_planar(s.features) for s in samples])
            if feats.shape[1] != 4 * cfg.feature_units:
                raise IngestionError(
                    f"feature width {feats.shape[1]} does not match "
                    f"configured feature_dim {cfg.feature_dim}"
                )
            inputs["features"] = feats
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return inputs, labels


# -- synthetic generator ----------------------------------------------------------

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]  # 70


def synth_vocab(n=200):
    """Deterministic pronounceable vocabulary, independent of any seed."""
    return [_SYLLABLES[i // len(_SYLLABLES)] + _SYLLABLES[i % len(_SYLLABLES)]
            for i in range(n)]


TRIGGER_COUNT = 8


def synth_generate(task, n, seed, out_dir, embed_dim=100):
    """Write a synthetic two-class dataset; returns the sample list.

    ``separable``: label = tweet contains one of the 8 trigger words.
    ``xor``: label = trigger XOR bright-corner patch, so neither text nor
    image alone carries any label signal.  Labels are Bernoulli(1/2) fair by
    construction.  The embedding table (uniform(-0.5, 0.5) per word) is
    bundled alongside the manifest.
    """
    if task not in ("separable", "xor"):
        raise DataError(f"unknown synthesis task {task!r}")
    if n < 1:
        raise DataError(f"need n >= 1, got {n}")
    vocab = synth_vocab()
    triggers = vocab[-TRIGGER_COUNT:]
    fillers = vocab[:-TRIGGER_COUNT]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    samples = []
    for i in range(n):
        has_trigger = rng.random() < 0.5
        has_patch = rng.random() < 0.5
        count = int(rng.integers(4, 13))
        words = [fillers[j] for j in rng.integers(0, len(fillers), count)]
        if has_trigger:
            for _ in range(int(rng.integers(1, 3))):
                pos = int(rng.integers(0, len(words) + 1))
                words.insert(pos, triggers[int(rng.integers(0, TRIGGER_COUNT))])
        img_count = int(rng.integers(0, 7))
        img_words = [fillers[j] for j in rng.integers(0, len(fillers), img_count)]
        img = rng.integers(0, 61, size=(32, 32, 3)).astype(np.uint8)
        if has_patch:
            img[:8, :8] = rng.integers(200, 256, size=(8, 8, 3)).astype(np.uint8)
        if task == "separable":
            label = int(has_trigger)
        else:
            label = int(has_trigger != has_patch)
        samples.append(
            Sample(
                id=f"{task}-{i:06d}",
                tweet_tokens=words,
                imgtext_tokens=img_words,
                label=label,
                image=img.astype(np.float64) / 255.0,
            )
        )
    table_rng = np.random.default_rng(np.random.SeedSequence([seed, 707]))
    vectors = {w: table_rng.uniform(-0.5, 0.5, embed_dim) for w in vocab}
    write_dataset(out_dir, samples, EmbeddingTable(vectors, embed_dim))
    return samples
