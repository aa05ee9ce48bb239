"""Quaternion network layers and their real-valued mirror twins.

Activations use a planar real layout: a vector of n quaternion units is a
real vector of length 4n arranged [r-plane | i-plane | j-plane | k-plane],
which is exactly a flattened channel-major QTensor.  Sequences are
(batch, length, 4n) and feature maps (batch, h, w, 4n).  In this layout a
quaternion dense layer is one real matmul against the block expansion of its
weight channels, and split activations are ordinary elementwise ops.

Every layer supports two algebras:

- ``quaternion``: weights stored as 4-channel tensors, applied through the
  Hamilton block form.
- ``real_mirror``: unstructured real weights over the same planar vectors,
  with every width multiplied by 4. Identical topology, activations and
  pooling; only the weight structure (and so the trainable scalar count)
  differs.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DimensionError

QUATERNION = "quaternion"
REAL_MIRROR = "real_mirror"


def _check_algebra(algebra):
    if algebra not in (QUATERNION, REAL_MIRROR):
        raise ConfigError(f"unknown algebra {algebra!r}")


# -- initialization -----------------------------------------------------------


def quaternion_glorot_init(rng, fan_in, fan_out, shape):
    """Glorot-scaled quaternion weights, returned as a (4, *shape) array.

    Magnitudes are Rayleigh with sigma = 1/sqrt(2(fan_in+fan_out)) so
    E[|w|^2] = 1/(fan_in+fan_out); the axis is uniform on the unit sphere of
    pure imaginaries and the phase uniform in (-pi, pi).  The three draws
    happen in that fixed order, so a seeded generator reproduces bit-identical
    tensors.
    """
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"fans must be >= 1, got {fan_in}, {fan_out}")
    shape = tuple(shape)
    sigma = 1.0 / np.sqrt(2.0 * (fan_in + fan_out))
    mag = rng.rayleigh(scale=sigma, size=shape)
    axis = rng.normal(size=(3,) + shape)
    axis /= np.maximum(np.sqrt((axis * axis).sum(axis=0)), 1e-300)
    theta = rng.uniform(-np.pi, np.pi, size=shape)
    out = np.empty((4,) + shape)
    out[0] = mag * np.cos(theta)
    out[1:] = mag * axis * np.sin(theta)
    return out


def real_glorot_init(rng, fan_in, fan_out, shape):
    """Standard Glorot-uniform draw for the mirror's unstructured weights."""
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=tuple(shape))


def tag_seed(*parts):
    """Fold strings and ints into an integer list usable as a seed key."""
    out = []
    for p in parts:
        out.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return out


# -- dense / convolution -------------------------------------------------------


class QDense:
    """Quaternion fully connected map, n_in -> n_out units.

    Planar input (..., 4*n_in) -> (..., 4*n_out); y_o = sum_i W_oi (x) x_i + b_o.
    """

    def __init__(self, name, n_in, n_out, rng, algebra=QUATERNION, bias=True):
        _check_algebra(algebra)
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.algebra = algebra
        if algebra == QUATERNION:
            w = quaternion_glorot_init(rng, n_in, n_out, (n_in, n_out))
        else:
            w = real_glorot_init(rng, 4 * n_in, 4 * n_out, (4 * n_in, 4 * n_out))
        self.weight = ad.Param(name + ".weight", w)
        self.bias = ad.Param(name + ".bias", np.zeros(4 * n_out)) if bias else None
        self.params = [self.weight] + ([self.bias] if bias else [])

    def forward(self, tape, x):
        if x.value.shape[-1] != 4 * self.n_in:
            raise DimensionError(
                f"{self.name}: expected trailing dim {4 * self.n_in}, "
                f"got {x.value.shape[-1]}"
            )
        k = ad.qblock(tape, self.weight) if self.algebra == QUATERNION else self.weight
        y = ad.matmul(tape, x, k)
        if self.bias is not None:
            y = ad.add(tape, y, self.bias)
        return y


class QConv1D:
    """Width-w quaternion convolution over sequences with "same" zero padding.

    Input (B, L, 4*n_in) -> (B, L, 4*n_out).  Each tap is a dense block
    applied to a shifted slice, so the whole op is ``width`` matmuls.
    """

    def __init__(self, name, n_in, n_out, width, rng, algebra=QUATERNION):
        _check_algebra(algebra)
        self.name = name
        self.n_in, self.n_out, self.width = n_in, n_out, width
        self.algebra = algebra
        fi, fo = n_in * width, n_out * width
        if algebra == QUATERNION:
            w = quaternion_glorot_init(rng, fi, fo, (width, n_in, n_out))
        else:
            w = real_glorot_init(
                rng, 4 * fi, 4 * fo, (width, 4 * n_in, 4 * n_out)
            )
        self.kernel = ad.Param(name + ".kernel", w)
        self.bias = ad.Param(name + ".bias", np.zeros(4 * n_out))
        self.params = [self.kernel, self.bias]

    def forward(self, tape, x):
        b, length, p = x.value.shape
        if p != 4 * self.n_in:
            raise DimensionError(
                f"{self.name}: expected trailing dim {4 * self.n_in}, got {p}"
            )
        left = (self.width - 1) // 2
        xp = ad.pad_axis(tape, x, 1, left, self.width - 1 - left)
        y = None
        for d in range(self.width):
            if self.algebra == QUATERNION:
                tap = ad.slice_axis(tape, self.kernel, 1, d, d + 1)
                tap = ad.reshape(tape, tap, (4, self.n_in, self.n_out))
                k = ad.qblock(tape, tap)
            else:
                tap = ad.slice_axis(tape, self.kernel, 0, d, d + 1)
                k = ad.reshape(tape, tap, (4 * self.n_in, 4 * self.n_out))
            term = ad.matmul(tape, ad.slice_axis(tape, xp, 1, d, d + length), k)
            y = term if y is None else ad.add(tape, y, term)
        return ad.add(tape, y, self.bias)


class QConv2D:
    """kh x kw quaternion convolution, valid padding, stride 1.

    Input (B, H, W, 4*n_in) -> (B, H-kh+1, W-kw+1, 4*n_out).
    """

    def __init__(self, name, n_in, n_out, kh, kw, rng, algebra=QUATERNION):
        _check_algebra(algebra)
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.kh, self.kw = kh, kw
        self.algebra = algebra
        fi, fo = n_in * kh * kw, n_out * kh * kw
        if algebra == QUATERNION:
            w = quaternion_glorot_init(rng, fi, fo, (kh, kw, n_in, n_out))
        else:
            w = real_glorot_init(
                rng, 4 * fi, 4 * fo, (kh, kw, 4 * n_in, 4 * n_out)
            )
        self.kernel = ad.Param(name + ".kernel", w)
        self.bias = ad.Param(name + ".bias", np.zeros(4 * n_out))
        self.params = [self.kernel, self.bias]

    def forward(self, tape, x):
        b, h, w, p = x.value.shape
        if p != 4 * self.n_in:
            raise DimensionError(
                f"{self.name}: expected trailing dim {4 * self.n_in}, got {p}"
            )
        if h < self.kh or w < self.kw:
            raise DimensionError(
                f"{self.name}: kernel {self.kh}x{self.kw} larger than input {h}x{w}"
            )
        ho, wo = h - self.kh + 1, w - self.kw + 1
        y = None
        for dy in range(self.kh):
            for dx in range(self.kw):
                if self.algebra == QUATERNION:
                    tap = ad.slice_axis(tape, self.kernel, 1, dy, dy + 1)
                    tap = ad.slice_axis(tape, tap, 2, dx, dx + 1)
                    tap = ad.reshape(tape, tap, (4, self.n_in, self.n_out))
                    k = ad.qblock(tape, tap)
                else:
                    tap = ad.slice_axis(tape, self.kernel, 0, dy, dy + 1)
                    tap = ad.slice_axis(tape, tap, 1, dx, dx + 1)
                    k = ad.reshape(tape, tap, (4 * self.n_in, 4 * self.n_out))
                rows = ad.slice_axis(tape, x, 1, dy, dy + ho)
                cols = ad.slice_axis(tape, rows, 2, dx, dx + wo)
                term = ad.matmul(tape, cols, k)
                y = term if y is None else ad.add(tape, y, term)
        return ad.add(tape, y, self.bias)


# -- normalization --------------------------------------------------------------


class QBatchNorm:
    """Shared-variance quaternion batch norm over (B, 4n) planar activations.

    Normalizes with the componentwise batch mean and the per-unit variance of
    the 4-component deviation norm (v = mean ||x - mu||^2 / 4), then applies a
    real scale gamma per unit and a quaternion shift beta.  The four
    components of a unit share one scale, so inter-component geometry is
    preserved without a whitening matrix inverse.  The mirror variant is
    ordinary per-feature real batch norm over the 4n planar features.
    """

    def __init__(self, name, n, algebra=QUATERNION, momentum=0.9, eps=1e-5):
        _check_algebra(algebra)
        self.name = name
        self.n = n
        self.algebra = algebra
        self.momentum = momentum
        self.eps = eps
        nvar = n if algebra == QUATERNION else 4 * n
        self.gamma = ad.Param(name + ".gamma", np.ones(nvar))
        self.beta = ad.Param(name + ".beta", np.zeros(4 * n))
        self.running_mean = ad.Param(
            name + ".running_mean", np.zeros(4 * n), trainable=False
        )
        self.running_var = ad.Param(
            name + ".running_var", np.ones(nvar), trainable=False
        )
        self.params = [self.gamma, self.beta, self.running_mean, self.running_var]

    def _tile4(self, tape, v):
        if self.algebra != QUATERNION:
            return v
        return ad.concat(tape, [v, v, v, v], axis=0)

    def forward(self, tape, x, mode):
        b = x.value.shape[0]
        if mode == "train":
            if b < 2:
                raise ContractError(
                    f"{self.name}: train-mode batch norm needs batch >= 2, got {b}"
                )
            mu = ad.mean_axis(tape, x, axis=0)
            dev = ad.sub(tape, x, mu)
            sq = ad.mul(tape, dev, dev)
            if self.algebra == QUATERNION:
                norms2 = ad.sum_axis(
                    tape, ad.reshape(tape, sq, (b, 4, self.n)), axis=1
                )
                v = ad.scale(tape, ad.mean_axis(tape, norms2, axis=0), 0.25)
            else:
                v = ad.mean_axis(tape, sq, axis=0)
            self.running_mean.value = (
                self.momentum * self.running_mean.value
                + (1.0 - self.momentum) * mu.value
            )
            self.running_var.value = (
                self.momentum * self.running_var.value
                + (1.0 - self.momentum) * v.value
            )
        else:
            mu = ad.constant(self.running_mean.value.copy())
            dev = ad.sub(tape, x, mu)
            v = ad.constant(self.running_var.value.copy())
        denom = self._tile4(tape, ad.sqrt(tape, ad.add(tape, v, self.eps)))
        scaled = ad.mul(tape, ad.div(tape, dev, denom), self._tile4(tape, self.gamma))
        return ad.add(tape, scaled, self.beta)


# -- stateless pieces -------------------------------------------------------------


def split_relu(tape, x):
    """Componentwise max(0, x); in the planar layout this is plain ReLU."""
    return ad.relu(tape, x)


def quaternion_dropout(tape, x, rate, mode, key):
    """Drop whole quaternion units together; survivors scaled by 1/(1-rate).

    ``key`` is a sequence of ints (see ``tag_seed``) feeding a counter-based
    Philox stream, so masks depend only on the key, never on ambient RNG
    state: finite-difference perturbations and reruns see identical masks.
    Eval mode and rate 0 return the input node unchanged.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x
    shape = x.value.shape
    if shape[-1] % 4 != 0:
        raise DimensionError(f"dropout: trailing dim {shape[-1]} not planar")
    n = shape[-1] // 4
    gen = np.random.Generator(
        np.random.Philox(key=np.random.SeedSequence(key).generate_state(2, np.uint64))
    )
    keep = (gen.random(shape[:-1] + (n,)) >= rate).astype(np.float64)
    full = np.tile(keep, (1,) * (len(shape) - 1) + (4,)) / (1.0 - rate)
    return ad.mul(tape, x, full)


def _unit_norms2(xv, n):
    """Squared quaternion norms of a planar array (..., 4n) -> (..., n)."""
    sq = xv.reshape(xv.shape[:-1] + (4, n)) ** 2
    return sq.sum(axis=-2)


def norm_pool_global(tape, x, n):
    """Per unit, keep the sequence position with the largest quaternion norm.

    x (B, L, 4n) -> (B, 4n); ties go to the lowest index (argmax convention).
    The mirror uses the same 4-plane grouping so both algebras pool
    identically shaped structures.
    """
    b, length, p = x.value.shape
    if length < 1:
        raise ContractError("norm pooling needs at least one position")
    idx = np.argmax(_unit_norms2(x.value, n), axis=1)
    return ad.pool_select(tape, x, idx, n)


def norm_pool_2x2(tape, x, n):
    """2x2/stride-2 norm pooling over (B, H, W, 4n); odd edges are dropped."""
    b, h, w, p = x.value.shape
    hc, wc = h // 2, w // 2
    if hc < 1 or wc < 1:
        raise ContractError(f"2x2 pooling needs h, w >= 2, got {h}x{w}")
    norms = _unit_norms2(x.value[:, : hc * 2, : wc * 2], n)
    # cells ordered row-major inside each window so argmax ties pick the
    # lowest flat position
    cells = norms.reshape(b, hc, 2, wc, 2, n).transpose(0, 1, 3, 5, 2, 4)
    cell = np.argmax(cells.reshape(b, hc, wc, n, 4), axis=-1)
    gy = np.arange(hc)[None, :, None, None] * 2 + cell // 2
    gx = np.arange(wc)[None, None, :, None] * 2 + cell % 2
    flat = (gy * w + gx).transpose(0, 1, 2, 3)
    xf = ad.reshape(tape, x, (b, h * w, p))
    return ad.pool_select(tape, xf, flat, n)


def real_mirror(layer, rng):
    """Build the real twin of a quaternion layer: same dims, 4x real units."""
    if isinstance(layer, QDense):
        return QDense(
            layer.name, layer.n_in, layer.n_out, rng, REAL_MIRROR,
            bias=layer.bias is not None,
        )
    if isinstance(layer, QConv1D):
        return QConv1D(
            layer.name, layer.n_in, layer.n_out, layer.width, rng, REAL_MIRROR
        )
    if isinstance(layer, QConv2D):
        return QConv2D(
            layer.name, layer.n_in, layer.n_out, layer.kh, layer.kw, rng, REAL_MIRROR
        )
    if isinstance(layer, QBatchNorm):
        return QBatchNorm(
            layer.name, layer.n, REAL_MIRROR, layer.momentum, layer.eps
        )
    raise ConfigError(f"no mirror rule for {type(layer).__name__}")


def count_scalars(params):
    """Trainable real scalars; 4-channel storage already counts all planes."""
    return sum(p.value.size for p in params if p.trainable)
