"""Quaternion algebra and packing tests.

The worked product below was expanded by hand from the component formula:
(1,2,3,4) x (5,6,7,8):
  r = 1*5 - 2*6 - 3*7 - 4*8 = -60
  i = 1*6 + 2*5 + 3*8 - 4*7 =  12
  j = 1*7 - 2*8 + 3*5 + 4*6 =  30
  k = 1*8 + 2*7 - 3*6 + 4*5 =  24
"""

import numpy as np
import pytest

from quarc.errors import DimensionError, IngestionError, PackingError
from quarc.quat import (
    QTensor,
    Quaternion,
    hamilton,
    hamilton_channels,
    pack_reals,
    qmatvec,
    qmul,
    rgb_to_quaternion,
    unpack_reals,
)


def test_worked_product():
    out = hamilton(Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8))
    assert out.as_tuple() == (-60.0, 12.0, 30.0, 24.0)


def test_operator_matches_function():
    a, b = Quaternion(0.5, -1.0, 2.0, 0.25), Quaternion(3.0, 1.5, -2.0, 1.0)
    assert (a * b).as_tuple() == hamilton(a, b).as_tuple()


def test_basis_table():
    one = Quaternion(1, 0, 0, 0)
    i = Quaternion(0, 1, 0, 0)
    j = Quaternion(0, 0, 1, 0)
    k = Quaternion(0, 0, 0, 1)
    assert (i * j).as_tuple() == k.as_tuple()
    assert (j * k).as_tuple() == i.as_tuple()
    assert (k * i).as_tuple() == j.as_tuple()
    assert (i * i).as_tuple() == (-1, 0, 0, 0)
    assert (j * j).as_tuple() == (-1, 0, 0, 0)
    assert (k * k).as_tuple() == (-1, 0, 0, 0)
    # anti-commutation distinguishes the handedness
    assert (j * i).as_tuple() == (0, 0, 0, -1)
    assert (one * i).as_tuple() == i.as_tuple()


def test_norm_multiplicative_over_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a = Quaternion(*rng.normal(size=4))
        b = Quaternion(*rng.normal(size=4))
        lhs = (a * b).norm()
        rhs = a.norm() * b.norm()
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, rhs)


def test_associativity():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a, b, c = (Quaternion(*rng.normal(size=4)) for _ in range(3))
        lhs = (a * b) * c
        rhs = a * (b * c)
        assert np.allclose(lhs.as_tuple(), rhs.as_tuple(), rtol=1e-12, atol=1e-12)


def test_conjugate_reverses_products():
    rng = np.random.default_rng(13)
    a = Quaternion(*rng.normal(size=4))
    b = Quaternion(*rng.normal(size=4))
    lhs = (a * b).conjugate()
    rhs = b.conjugate() * a.conjugate()
    assert np.allclose(lhs.as_tuple(), rhs.as_tuple(), rtol=1e-12, atol=1e-12)


def test_channel_form_matches_scalar_form():
    rng = np.random.default_rng(17)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(4, 6))
    out = hamilton_channels(a, b)
    for t in range(6):
        want = hamilton(Quaternion(*a[:, t]), Quaternion(*b[:, t]))
        assert np.allclose(out[:, t], want.as_tuple(), rtol=1e-12, atol=1e-12)


def test_qmul_wraps_channels():
    rng = np.random.default_rng(19)
    a = QTensor(rng.normal(size=(4, 3, 2)))
    b = QTensor(rng.normal(size=(4, 3, 2)))
    out = qmul(a, b)
    assert out.shape == (3, 2)
    assert np.array_equal(out.data, hamilton_channels(a.data, b.data))


def test_qmatvec_matches_per_entry_sum():
    rng = np.random.default_rng(23)
    w = QTensor(rng.normal(size=(4, 3, 2)))
    x = QTensor(rng.normal(size=(4, 2)))
    y = qmatvec(w, x)
    assert y.shape == (3,)
    for o in range(3):
        acc = Quaternion(0, 0, 0, 0)
        for i in range(2):
            term = w.item(o, i) * x.item(i)
            acc = Quaternion(*(np.add(acc.as_tuple(), term.as_tuple())))
        assert np.allclose(y.data[:, o], acc.as_tuple(), rtol=1e-12, atol=1e-12)


def test_qmatvec_shape_mismatch():
    w = QTensor.zeros((3, 2))
    x = QTensor.zeros((3,))
    with pytest.raises(DimensionError):
        qmatvec(w, x)


def test_pack_unpack_roundtrip_bit_exact():
    rng = np.random.default_rng(29)
    v = rng.normal(size=104)
    q = pack_reals(v)
    assert q.shape == (26,)
    assert q.item(0).as_tuple() == (v[0], v[1], v[2], v[3])
    assert q.item(25).as_tuple() == (v[100], v[101], v[102], v[103])
    back = unpack_reals(q)
    assert np.array_equal(back, v)


def test_pack_rejects_ragged_length():
    with pytest.raises(PackingError):
        pack_reals(np.arange(10.0))


def test_rgb_mapping_is_pure_imaginary():
    rng = np.random.default_rng(31)
    img = rng.uniform(size=(5, 4, 3))
    q = rgb_to_quaternion(img)
    assert q.shape == (5, 4)
    assert np.array_equal(q.r, np.zeros((5, 4)))
    assert np.array_equal(q.i, img[:, :, 0])
    assert np.array_equal(q.j, img[:, :, 1])
    assert np.array_equal(q.k, img[:, :, 2])


def test_rgb_mapping_rejects_bad_shape():
    with pytest.raises(IngestionError):
        rgb_to_quaternion(np.zeros((5, 4)))


def test_qtensor_norms():
    q = QTensor.from_quaternions([Quaternion(1, 2, 2, 0), Quaternion(0, 0, 3, 4)])
    assert np.array_equal(q.norms(), [3.0, 5.0])
