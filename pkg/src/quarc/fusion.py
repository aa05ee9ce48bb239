"""Cross-modal fusion blocks: attention, gated summation, concat head.

All three consume planar quaternion activations (see layers.py) and work
unchanged in the real-mirror algebra, where the learned maps are plain dense
layers of 4x width.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .errors import ContractError

MASKED_SCORE = -1e30


class QuaternionAttention:
    """Scores text positions against an image-derived query.

    The query u = W_att (x) p' lives in the conv-channel dimension d_c; each
    position's score is the real inner product of the planar representations
    of c_i and u, and the output is the softmax-weighted quaternion sum of
    the positions.  W_att has no bias, matching the single-matrix form.
    """

    def __init__(self, name, d_p, d_c, rng, algebra=ly.QUATERNION):
        self.name = name
        self.d_p, self.d_c = d_p, d_c
        self.proj = ly.QDense(name + ".w_att", d_p, d_c, rng, algebra, bias=False)
        self.params = self.proj.params

    def forward(self, tape, c, p_prime, mask):
        """c (B, L, 4*d_c), p_prime (B, 4*d_p), mask (B, L) boolean."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ContractError(
                f"{self.name}: attention needs at least one unmasked position per row"
            )
        u = self.proj.forward(tape, p_prime)
        b, length, p = c.value.shape
        scores = ad.sum_axis(
            tape, ad.mul(tape, c, ad.reshape(tape, u, (b, 1, p))), axis=2
        )
        scores = ad.add(tape, scores, np.where(mask, 0.0, MASKED_SCORE))
        weights = ad.softmax(tape, scores, axis=1)
        weighted = ad.mul(tape, c, ad.reshape(tape, weights, (b, length, 1)))
        return ad.sum_axis(tape, weighted, axis=1)


class GatedSum:
    """Learned soft mix of an attended text vector and the pooled image vector.

    Both inputs are first mapped into the common dimension (a' and p'), then
    two sigmoid gates and a tanh modulation vector produce
    f = beta_a * a' + beta_p * m with all products componentwise.  Since the
    gates lie in (0,1) and |m| <= 1, every component of f is bounded by
    |a'| + 1.  The modulation gates m rather than p', keeping the published
    asymmetric form.
    """

    def __init__(self, name, d_a, d_p, common, rng, algebra=ly.QUATERNION):
        self.name = name
        self.common = common
        q = algebra == ly.QUATERNION
        self.text_proj = ly.QDense(name + ".text_proj", d_a, common, rng, algebra)
        self.image_proj = ly.QDense(name + ".image_proj", d_p, common, rng, algebra)
        self.gate_aa = ly.QDense(name + ".gate_aa", common, common, rng, algebra, bias=False)
        self.gate_ap = ly.QDense(name + ".gate_ap", common, common, rng, algebra, bias=False)
        self.gate_pa = ly.QDense(name + ".gate_pa", common, common, rng, algebra, bias=False)
        self.gate_pp = ly.QDense(name + ".gate_pp", common, common, rng, algebra, bias=False)
        self.gate_a_bias = ad.Param(name + ".gate_a_bias", np.zeros(4 * common))
        self.gate_p_bias = ad.Param(name + ".gate_p_bias", np.zeros(4 * common))

        def feat_vec():
            if q:
                return ly.quaternion_glorot_init(rng, 1, 1, (common,)).reshape(-1)
            return ly.real_glorot_init(rng, 1, 1, (4 * common,))

        self.mod_a = ad.Param(name + ".mod_a", feat_vec())
        self.mod_p = ad.Param(name + ".mod_p", feat_vec())
        self.mod_bias = ad.Param(name + ".mod_bias", np.zeros(4 * common))
        self.params = (
            self.text_proj.params
            + self.image_proj.params
            + self.gate_aa.params
            + self.gate_ap.params
            + self.gate_pa.params
            + self.gate_pp.params
            + [self.gate_a_bias, self.gate_p_bias]
            + [self.mod_a, self.mod_p, self.mod_bias]
        )

    def forward(self, tape, a, p):
        a2 = self.text_proj.forward(tape, a)
        p2 = self.image_proj.forward(tape, p)
        beta_a = ad.sigmoid(
            tape,
            ad.add(
                tape,
                ad.add(tape, self.gate_aa.forward(tape, a2), self.gate_ap.forward(tape, p2)),
                self.gate_a_bias,
            ),
        )
        beta_p = ad.sigmoid(
            tape,
            ad.add(
                tape,
                ad.add(tape, self.gate_pa.forward(tape, a2), self.gate_pp.forward(tape, p2)),
                self.gate_p_bias,
            ),
        )
        m = ad.tanh(
            tape,
            ad.add(
                tape,
                ad.add(tape, ad.mul(tape, a2, self.mod_a), ad.mul(tape, p2, self.mod_p)),
                self.mod_bias,
            ),
        )
        return ad.add(tape, ad.mul(tape, beta_a, a2), ad.mul(tape, beta_p, m))


class ConcatHead:
    """Concatenate fused parts, apply dropout, and read out 2-class probs.

    The head is one quaternion dense to 2 units; each class logit is the sum
    of its unit's four components (the same reshape-and-sum works on the
    mirror's planar vector), followed by softmax.
    """

    def __init__(self, name, n_units_in, rng, algebra=ly.QUATERNION, rate=0.35):
        self.name = name
        self.rate = rate
        self.head = ly.QDense(name + ".out", n_units_in, 2, rng, algebra)
        self.params = self.head.params

    def forward(self, tape, parts, mode, key):
        if not parts:
            raise ContractError(f"{self.name}: needs at least one input part")
        h = parts[0] if len(parts) == 1 else ad.concat(tape, parts, axis=-1)
        h = ly.quaternion_dropout(tape, h, self.rate, mode, key)
        z = self.head.forward(tape, h)
        b = z.value.shape[0]
        logits = ad.sum_axis(tape, ad.reshape(tape, z, (b, 4, 2)), axis=1)
        return ad.softmax(tape, logits, axis=-1)
