"""Fusion block tests.

Hand-built cases: softmax(ln 2, 0, 0) = (0.5, 0.25, 0.25) since e^{ln 2} = 2
against two 1s; sigmoid(30) differs from 1 by ~9e-14, which drives the gate
saturation case; softmax(ln 3, 0) = (0.75, 0.25).
"""

import numpy as np
import pytest

import quarc.autodiff as ad
from quarc.errors import ContractError
from quarc.fusion import ConcatHead, GatedSum, QuaternionAttention


def rng(seed=0):
    return np.random.default_rng(seed)


def zero_params(block):
    for p in block.params:
        p.value[:] = 0.0


# -- attention ----------------------------------------------------------------


def test_attention_singleton_returns_the_position():
    att = QuaternionAttention("att", 2, 3, rng(1))
    c = rng(2).normal(size=(2, 1, 12))
    p = rng(3).normal(size=(2, 8))
    out = att.forward(ad.Tape(), ad.constant(c), ad.constant(p), np.ones((2, 1), bool))
    assert np.allclose(out.value, c[:, 0], atol=1e-14)


def test_attention_zero_weights_give_unmasked_mean():
    att = QuaternionAttention("att", 2, 3, rng(4))
    zero_params(att)
    c = rng(5).normal(size=(1, 5, 12))
    p = rng(6).normal(size=(1, 8))
    mask = np.array([[True, True, False, True, False]])
    out = att.forward(ad.Tape(), ad.constant(c), ad.constant(p), mask)
    assert np.allclose(out.value[0], c[0, [0, 1, 3]].mean(axis=0), atol=1e-12)


def test_attention_hand_scores():
    att = QuaternionAttention("att", 1, 1, rng(7))
    # identity weight makes u = p'; query (1,0,0,0) scores each position by
    # its r component
    att.proj.weight.value[:] = np.array([1.0, 0, 0, 0]).reshape(4, 1, 1)
    p = np.array([[1.0, 0.0, 0.0, 0.0]])
    c = np.zeros((1, 3, 4))
    c[0, 0] = [np.log(2.0), 1.0, -2.0, 0.5]
    c[0, 1] = [0.0, 4.0, 0.0, 1.0]
    c[0, 2] = [0.0, 0.0, 8.0, -1.0]
    out = att.forward(ad.Tape(), ad.constant(c), ad.constant(p), np.ones((1, 3), bool))
    want = 0.5 * c[0, 0] + 0.25 * c[0, 1] + 0.25 * c[0, 2]
    assert np.allclose(out.value[0], want, atol=1e-12)


def test_attention_all_masked_rejected():
    att = QuaternionAttention("att", 1, 1, rng(8))
    mask = np.array([[True, True], [False, False]])
    with pytest.raises(ContractError):
        att.forward(
            ad.Tape(),
            ad.constant(np.zeros((2, 2, 4))),
            ad.constant(np.zeros((2, 4))),
            mask,
        )


def test_attention_permutation_equivariant():
    att = QuaternionAttention("att", 2, 2, rng(9))
    c = rng(10).normal(size=(1, 6, 8))
    p = rng(11).normal(size=(1, 8))
    mask = np.array([[True, False, True, True, False, True]])
    perm = np.array([3, 0, 5, 1, 4, 2])
    a1 = att.forward(ad.Tape(), ad.constant(c), ad.constant(p), mask).value
    a2 = att.forward(
        ad.Tape(), ad.constant(c[:, perm]), ad.constant(p), mask[:, perm]
    ).value
    assert np.allclose(a1, a2, atol=1e-12)


def test_attention_output_in_componentwise_hull():
    att = QuaternionAttention("att", 2, 2, rng(12))
    c = rng(13).normal(size=(3, 5, 8))
    p = rng(14).normal(size=(3, 8))
    mask = rng(15).random((3, 5)) > 0.3
    mask[:, 0] = True
    out = att.forward(ad.Tape(), ad.constant(c), ad.constant(p), mask).value
    for b in range(3):
        vis = c[b, mask[b]]
        assert np.all(out[b] >= vis.min(axis=0) - 1e-12)
        assert np.all(out[b] <= vis.max(axis=0) + 1e-12)


def test_attention_gradient():
    g = rng(16)
    att = QuaternionAttention("att", 2, 2, g)
    c = g.normal(size=(1, 3, 8))
    p = g.normal(size=(1, 8))
    mask = np.array([[True, True, False]])

    def run():
        t = ad.Tape()
        out = att.forward(t, ad.constant(c), ad.constant(p), mask)
        proj = np.random.default_rng(40).normal(size=out.value.shape)
        return ad.sum_axis(t, ad.mul(t, out, proj)), t

    assert ad.finite_diff_check(att.params, run) < 1e-6


# -- gated sum ----------------------------------------------------------------


def test_gated_sum_all_zero_params():
    gs = GatedSum("gs", 3, 2, 2, rng(17))
    zero_params(gs)
    a = rng(18).normal(size=(2, 12))
    p = rng(19).normal(size=(2, 8))
    out = gs.forward(ad.Tape(), ad.constant(a), ad.constant(p))
    assert np.array_equal(out.value, np.zeros((2, 8)))


def test_gated_sum_saturated_text_gate():
    gs = GatedSum("gs", 2, 2, 2, rng(20))
    zero_params(gs)
    a = rng(21).normal(size=(1, 8))
    gs.text_proj.bias.value[:] = a[0]  # a' = a with zero weights
    gs.gate_a_bias.value[:] = 30.0
    out = gs.forward(ad.Tape(), ad.constant(a), ad.constant(np.zeros((1, 8))))
    assert np.max(np.abs(out.value - a)) < 1e-10


def test_gated_sum_half_gate():
    gs = GatedSum("gs", 2, 2, 2, rng(22))
    for p in (
        gs.gate_aa.weight, gs.gate_ap.weight, gs.gate_pa.weight, gs.gate_pp.weight,
        gs.gate_a_bias, gs.gate_p_bias, gs.mod_a, gs.mod_p, gs.mod_bias,
    ):
        p.value[:] = 0.0
    a = rng(23).normal(size=(2, 8))
    p = rng(24).normal(size=(2, 8))
    ta = ad.Tape()
    aprime = gs.text_proj.forward(ta, ad.constant(a)).value
    out = gs.forward(ad.Tape(), ad.constant(a), ad.constant(p)).value
    assert np.allclose(out, 0.5 * aprime, atol=1e-12)


def test_gated_sum_componentwise_bound():
    gs = GatedSum("gs", 3, 2, 2, rng(25))
    for p in gs.params:
        p.value[:] = rng(26).normal(size=p.value.shape)
    a = rng(27).normal(size=(4, 12)) * 3.0
    p = rng(28).normal(size=(4, 8)) * 3.0
    t = ad.Tape()
    aprime = gs.text_proj.forward(t, ad.constant(a)).value
    out = gs.forward(ad.Tape(), ad.constant(a), ad.constant(p)).value
    assert np.all(np.abs(out) <= np.abs(aprime) + 1.0 + 1e-12)


def test_gated_sum_gradient():
    g = rng(29)
    gs = GatedSum("gs", 2, 1, 1, g)
    a = g.normal(size=(2, 8))
    p = g.normal(size=(2, 4))

    def run():
        t = ad.Tape()
        out = gs.forward(t, ad.constant(a), ad.constant(p))
        proj = np.random.default_rng(41).normal(size=out.value.shape)
        return ad.sum_axis(t, ad.mul(t, out, proj)), t

    assert ad.finite_diff_check(gs.params, run) < 1e-4


# -- concat head --------------------------------------------------------------


def test_head_zero_weights_give_coin_flip():
    head = ConcatHead("h", 4, rng(30))
    zero_params(head)
    parts = [ad.constant(rng(31).normal(size=(3, 8))) for _ in range(2)]
    out = head.forward(ad.Tape(), parts, "eval", [1])
    assert np.allclose(out.value, 0.5, atol=1e-15)


def test_head_hand_logits():
    head = ConcatHead("h", 1, rng(32))
    zero_params(head)
    head.head.bias.value[0] = np.log(3.0)  # r-plane of class 0
    out = head.forward(ad.Tape(), [ad.constant(np.zeros((1, 4)))], "eval", [1])
    assert np.allclose(out.value, [[0.75, 0.25]], atol=1e-12)


def test_head_rows_sum_to_one():
    head = ConcatHead("h", 3, rng(33))
    parts = [ad.constant(rng(34).normal(size=(5, 4))) for _ in range(3)]
    out = head.forward(ad.Tape(), parts, "eval", [1])
    assert np.allclose(out.value.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out.value > 0)


def test_head_empty_parts_rejected():
    head = ConcatHead("h", 2, rng(35))
    with pytest.raises(ContractError):
        head.forward(ad.Tape(), [], "eval", [1])


def test_head_gradient_with_train_dropout():
    g = rng(36)
    head = ConcatHead("h", 2, g, rate=0.35)
    parts_v = [g.normal(size=(2, 4)) for _ in range(2)]

    def run():
        t = ad.Tape()
        out = head.forward(t, [ad.constant(v) for v in parts_v], "train", [9, 9])
        proj = np.random.default_rng(43).normal(size=out.value.shape)
        return ad.sum_axis(t, ad.mul(t, out, proj)), t

    assert ad.finite_diff_check(head.params, run) < 1e-6
