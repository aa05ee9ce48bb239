"""The seven model variants and their parameter accounting.

Every variant shares two building blocks.  The text pathway runs a token
sequence through a same-padded quaternion convolution, keeps that sequence
for attention, and reduces it by norm pooling, split ReLU, a dense projection
to the common dimension, and dropout.  The image pathway is a small
quaternion CNN (or a projection of externally computed features) producing a
pooled vector p and its projected form p'.

Fusion differs per variant:

  1  concat(T_t, T_p, p', GS(a_tt, p), GS(a_tp, p), GS(a_tt + a_tp, p))
  2  concat(T_t, T_p, p', GS(a_tt, p))
  3  concat(T_t, T_p, p', GS(a_tp, p))
  4  concat(T_t, T_p, p', GS(a_tt + a_tp, p))
  5  concat(T_t, T_p, p')
  6  concat(T_t)                (text only)
  7  concat(p')                 (image only)

where a_tt / a_tp attend over the tweet / image-text conv sequences with the
projected image vector as query.  Unused modalities contribute no parameters
and their inputs are never read.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .config import ModelConfig
from .errors import ContractError, IngestionError
from .fusion import ConcatHead, GatedSum, QuaternionAttention

_WIRING = {
    1: ("attn_t", "attn_i", "gs_t", "gs_i", "gs_s"),
    2: ("attn_t", "gs_t"),
    3: ("attn_i", "gs_i"),
    4: ("attn_t", "attn_i", "gs_s"),
    5: (),
    6: (),
    7: (),
}


class TextEncoder:
    def __init__(self, name, cfg, rng):
        self.name = name
        self.cfg = cfg
        self.conv = ly.QConv1D(
            name + ".conv", cfg.embed_units, cfg.conv_filters, cfg.conv_width,
            rng, cfg.algebra,
        )
        self.proj = ly.QDense(
            name + ".proj", cfg.conv_filters, cfg.common_dim, rng, cfg.algebra
        )
        self.params = self.conv.params + self.proj.params

    def forward(self, tape, v, mode, step):
        """v (B, L, 4*embed_units) -> (T (B, 4*common), conv sequence)."""
        seq = self.conv.forward(tape, v)
        pooled = ly.norm_pool_global(tape, seq, self.cfg.conv_filters)
        h = ly.split_relu(tape, pooled)
        t = self.proj.forward(tape, h)
        key = ly.tag_seed(self.cfg.seed, self.name + ".dropout", step)
        return ly.quaternion_dropout(tape, t, self.cfg.dropout, mode, key), seq


class BuiltinImageEncoder:
    """Two quaternion convolutions with norm pooling down to one vector."""

    def __init__(self, name, cfg, rng):
        self.name = name
        self.cfg = cfg
        self.conv1 = ly.QConv2D(
            name + ".conv1", 1, cfg.image_filters1, 2, 2, rng, cfg.algebra
        )
        self.conv2 = ly.QConv2D(
            name + ".conv2", cfg.image_filters1, cfg.image_filters2, 3, 3,
            rng, cfg.algebra,
        )
        self.proj = ly.QDense(
            name + ".proj", cfg.image_filters2, cfg.common_dim, rng, cfg.algebra
        )
        self.pooled_units = cfg.image_filters2
        self.params = self.conv1.params + self.conv2.params + self.proj.params

    def forward(self, tape, img, mode, step):
        """img (B, H, W, 4) -> (p (B, 4*f2), p' (B, 4*common))."""
        h = ly.split_relu(tape, self.conv1.forward(tape, img))
        h = ly.norm_pool_2x2(tape, h, self.cfg.image_filters1)
        h = ly.split_relu(tape, self.conv2.forward(tape, h))
        b, hh, ww, pp = h.value.shape
        flat = ad.reshape(tape, h, (b, hh * ww, pp))
        p = ly.norm_pool_global(tape, flat, self.cfg.image_filters2)
        key = ly.tag_seed(self.cfg.seed, self.name + ".dropout", step)
        p_prime = ly.quaternion_dropout(
            tape, self.proj.forward(tape, p), self.cfg.dropout, mode, key
        )
        return p, p_prime


class FeatureImageEncoder:
    """Projection head over precomputed backbone features (already pooled)."""

    def __init__(self, name, cfg, rng):
        self.name = name
        self.cfg = cfg
        self.proj = ly.QDense(
            name + ".proj", cfg.feature_units, cfg.common_dim, rng, cfg.algebra
        )
        self.pooled_units = cfg.feature_units
        self.params = self.proj.params

    def forward(self, tape, feats, mode, step):
        p = feats
        key = ly.tag_seed(self.cfg.seed, self.name + ".dropout", step)
        p_prime = ly.quaternion_dropout(
            tape, self.proj.forward(tape, p), self.cfg.dropout, mode, key
        )
        return p, p_prime


class Model:
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.variant = cfg.variant
        wires = _WIRING[cfg.variant]
        # fixed spawn order keeps initial values per component stable
        # across variants built from the same seed
        streams = np.random.SeedSequence(cfg.seed).spawn(9)
        rngs = {
            name: np.random.default_rng(s)
            for name, s in zip(
                ("tweet", "imgtext", "image", "attn_t", "attn_i",
                 "gs_t", "gs_i", "gs_s", "head"),
                streams,
            )
        }
        self.tweet_enc = self.imgtext_enc = self.image_enc = None
        self.attn_t = self.attn_i = None
        self.gs = {}
        parts = 0
        if cfg.variant != 7:
            self.tweet_enc = TextEncoder("tweet_enc", cfg, rngs["tweet"])
            parts += 1
        if cfg.variant in (1, 2, 3, 4, 5):
            self.imgtext_enc = TextEncoder("imgtext_enc", cfg, rngs["imgtext"])
            parts += 1
        if cfg.variant in (1, 2, 3, 4, 5, 7):
            enc = BuiltinImageEncoder if cfg.image_encoder == "builtin_qcnn" else FeatureImageEncoder
            self.image_enc = enc("image_enc", cfg, rngs["image"])
            parts += 1
        if "attn_t" in wires:
            self.attn_t = QuaternionAttention(
                "attn_tweet", cfg.common_dim, cfg.conv_filters, rngs["attn_t"], cfg.algebra
            )
        if "attn_i" in wires:
            self.attn_i = QuaternionAttention(
                "attn_imgtext", cfg.common_dim, cfg.conv_filters, rngs["attn_i"], cfg.algebra
            )
        for tag, name in (("gs_t", "gs_tweet"), ("gs_i", "gs_imgtext"), ("gs_s", "gs_sum")):
            if tag in wires:
                self.gs[tag] = GatedSum(
                    name, cfg.conv_filters, self.image_enc.pooled_units,
                    cfg.common_dim, rngs[tag], cfg.algebra,
                )
                parts += 1
        self.head = ConcatHead(
            "head", parts * cfg.common_dim, rngs["head"], cfg.algebra, cfg.dropout
        )

        self.params = []
        for block in (
            self.tweet_enc, self.imgtext_enc, self.image_enc,
            self.attn_t, self.attn_i,
            self.gs.get("gs_t"), self.gs.get("gs_i"), self.gs.get("gs_s"),
            self.head,
        ):
            if block is not None:
                self.params.extend(block.params)
        self.params_by_name = {}
        for p in self.params:
            if p.name in self.params_by_name:
                raise ContractError(f"duplicate parameter name {p.name}")
            self.params_by_name[p.name] = p

    def _need(self, inputs, key):
        if key not in inputs:
            raise IngestionError(f"variant {self.variant} needs input {key!r}")
        return inputs[key]

    def forward(self, inputs, mode="eval", step=0):
        """Run a batch; returns (class-probability node (B, 2), tape).

        ``inputs`` holds numpy arrays: ``tweet``/``imgtext`` (B, L, 4u) with
        boolean ``tweet_mask``/``imgtext_mask`` (B, L), and ``image``
        (B, H, W, 4) or ``features`` (B, 4*feature_units) per the configured
        encoder.  ``step`` keys the dropout streams in train mode.
        """
        tape = ad.Tape()
        t_t = seq_t = t_p = seq_p = p_raw = p_prime = None
        if self.tweet_enc is not None:
            v = ad.constant(self._need(inputs, "tweet"))
            t_t, seq_t = self.tweet_enc.forward(tape, v, mode, step)
        if self.imgtext_enc is not None:
            v = ad.constant(self._need(inputs, "imgtext"))
            t_p, seq_p = self.imgtext_enc.forward(tape, v, mode, step)
        if self.image_enc is not None:
            key = "image" if self.cfg.image_encoder == "builtin_qcnn" else "features"
            v = ad.constant(self._need(inputs, key))
            p_raw, p_prime = self.image_enc.forward(tape, v, mode, step)

        a_tt = a_tp = None
        if self.attn_t is not None:
            a_tt = self.attn_t.forward(
                tape, seq_t, p_prime, self._need(inputs, "tweet_mask")
            )
        if self.attn_i is not None:
            a_tp = self.attn_i.forward(
                tape, seq_p, p_prime, self._need(inputs, "imgtext_mask")
            )

        parts = [x for x in (t_t, t_p, p_prime) if x is not None]
        if "gs_t" in self.gs:
            parts.append(self.gs["gs_t"].forward(tape, a_tt, p_raw))
        if "gs_i" in self.gs:
            parts.append(self.gs["gs_i"].forward(tape, a_tp, p_raw))
        if "gs_s" in self.gs:
            a_tw = ad.add(tape, a_tt, a_tp)
            parts.append(self.gs["gs_s"].forward(tape, a_tw, p_raw))

        key = ly.tag_seed(self.cfg.seed, "head.dropout", step)
        return self.head.forward(tape, parts, mode, key), tape


def build_variant(cfg: ModelConfig) -> Model:
    return Model(cfg)


def count_params(model: Model) -> int:
    return ly.count_scalars(model.params)


def ratio_report(cfg: ModelConfig):
    """(variant, quaternion count, mirror count, ratio) for variants 1..7."""
    rows = []
    for v in range(1, 8):
        nq = count_params(build_variant(replace(cfg, variant=v, algebra="quaternion")))
        nr = count_params(build_variant(replace(cfg, variant=v, algebra="real_mirror")))
        rows.append((v, nq, nr, nr / nq))
    return rows
