"""Quaternion scalar and tensor algebra.

A quaternion q = r + i*I + j*J + k*K follows the right-handed basis rules
I^2 = J^2 = K^2 = IJK = -1 (so IJ = K, JK = I, KI = J).  Tensors of
quaternions are stored as four aligned real channels (structure-of-channels):
one contiguous plane per component, so every operation vectorizes over plain
real arrays.  All numerics are float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PackingError, IngestionError


@dataclass(frozen=True)
class Quaternion:
    """A single quaternion with real components (r, i, j, k)."""

    r: float
    i: float
    j: float
    k: float

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton(self, other)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.r, -self.i, -self.j, -self.k)

    def norm(self) -> float:
        return float(np.sqrt(self.r**2 + self.i**2 + self.j**2 + self.k**2))

    def as_tuple(self):
        return (self.r, self.i, self.j, self.k)


def hamilton(q1: Quaternion, q2: Quaternion) -> Quaternion:
    """Hamilton product q1 * q2 (non-commutative, right-handed basis)."""
    r1, i1, j1, k1 = q1.r, q1.i, q1.j, q1.k
    r2, i2, j2, k2 = q2.r, q2.i, q2.j, q2.k
    return Quaternion(
        r1 * r2 - i1 * i2 - j1 * j2 - k1 * k2,
        r1 * i2 + i1 * r2 + j1 * k2 - k1 * j2,
        r1 * j2 - i1 * k2 + j1 * r2 + k1 * i2,
        r1 * k2 + i1 * j2 - j1 * i2 + k1 * r2,
    )


def conjugate(q: Quaternion) -> Quaternion:
    return q.conjugate()


class QTensor:
    """An N-dimensional array of quaternions stored as four real planes.

    ``data`` has shape ``(4,) + shape``; plane 0 holds the real parts and
    planes 1..3 the i, j, k parts.  Instances are treated as immutable:
    operations return new tensors.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim < 1 or data.shape[0] != 4:
            raise DimensionError(
                f"QTensor needs a (4, ...) channel array, got shape {data.shape}"
            )
        self.data = data

    # -- construction -----------------------------------------------------

    @classmethod
    def zeros(cls, shape) -> "QTensor":
        return cls(np.zeros((4,) + tuple(shape)))

    @classmethod
    def from_channels(cls, r, i, j, k) -> "QTensor":
        return cls(np.stack([r, i, j, k], axis=0))

    @classmethod
    def from_quaternions(cls, qs) -> "QTensor":
        """1-D tensor from a sequence of Quaternion scalars."""
        arr = np.array([q.as_tuple() for q in qs], dtype=np.float64)
        if arr.size == 0:
            return cls.zeros((0,))
        return cls(arr.T.copy())

    # -- views ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape[1:]

    @property
    def r(self):
        return self.data[0]

    @property
    def i(self):
        return self.data[1]

    @property
    def j(self):
        return self.data[2]

    @property
    def k(self):
        return self.data[3]

    def real_dim(self) -> int:
        return 4 * int(np.prod(self.shape, dtype=np.int64))

    def item(self, *index) -> Quaternion:
        sel = (slice(None),) + tuple(index)
        r, i, j, k = self.data[sel]
        return Quaternion(float(r), float(i), float(j), float(k))

    def norms(self) -> np.ndarray:
        """Per-quaternion Euclidean norm, shape == self.shape."""
        return np.sqrt(np.sum(self.data**2, axis=0))

    def conjugate(self) -> "QTensor":
        out = self.data.copy()
        out[1:] = -out[1:]
        return QTensor(out)

    def __repr__(self):
        return f"QTensor(shape={self.shape})"


def hamilton_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise Hamilton product of two (4, ...) channel arrays."""
    ar, ai, aj, ak = a
    br, bi, bj, bk = b
    return np.stack(
        [
            ar * br - ai * bi - aj * bj - ak * bk,
            ar * bi + ai * br + aj * bk - ak * bj,
            ar * bj - ai * bk + aj * br + ak * bi,
            ar * bk + ai * bj - aj * bi + ak * br,
        ],
        axis=0,
    )


def qmul(a: QTensor, b: QTensor) -> QTensor:
    """Elementwise (broadcasting) Hamilton product of two tensors."""
    return QTensor(hamilton_channels(a.data, b.data))


def qmatvec(W: QTensor, x: QTensor) -> QTensor:
    """Quaternion matrix-vector product y_o = sum_i W[o, i] * x[i].

    ``W`` is an [m, n] quaternion matrix, ``x`` an [n] quaternion vector;
    each term is a Hamilton product (weight on the left).
    """
    if len(W.shape) != 2 or len(x.shape) != 1 or W.shape[1] != x.shape[0]:
        raise DimensionError(
            f"qmatvec: W shape {W.shape} incompatible with x shape {x.shape}"
        )
    wr, wi, wj, wk = W.data
    xr, xi, xj, xk = x.data
    return QTensor.from_channels(
        wr @ xr - wi @ xi - wj @ xj - wk @ xk,
        wr @ xi + wi @ xr + wj @ xk - wk @ xj,
        wr @ xj - wi @ xk + wj @ xr + wk @ xi,
        wr @ xk + wi @ xj - wj @ xi + wk @ xr,
    )


def pack_reals(v) -> QTensor:
    """Pack a real sequence into quaternions, four consecutive values each.

    v[4t], v[4t+1], v[4t+2], v[4t+3] become (r, i, j, k) of quaternion t.
    The length must be divisible by 4; ``unpack_reals`` is the exact inverse.
    """
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size % 4 != 0:
        raise PackingError(f"cannot pack {arr.size} reals: length not divisible by 4")
    return QTensor(arr.reshape(-1, 4).T.copy())


def unpack_reals(q: QTensor) -> np.ndarray:
    """Inverse of pack_reals; returns a flat float64 array."""
    if len(q.shape) != 1:
        raise PackingError(f"unpack_reals expects a 1-D QTensor, got shape {q.shape}")
    return q.data.T.reshape(-1).copy()


def rgb_to_quaternion(img: np.ndarray) -> QTensor:
    """Map an H x W x 3 image in [0, 1] to pure-imaginary quaternion pixels.

    Each pixel (R, G, B) becomes the quaternion (0, R, G, B), keeping the
    color channels on symmetric footing.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise IngestionError(
            f"expected an H x W x 3 image, got shape {img.shape}"
        )
    h, w, _ = img.shape
    data = np.zeros((4, h, w))
    data[1] = img[:, :, 0]
    data[2] = img[:, :, 1]
    data[3] = img[:, :, 2]
    return QTensor(data)
