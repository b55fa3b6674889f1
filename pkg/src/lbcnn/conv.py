"""Convolution kernels: dense, sparse-binary (multiply-free) and 1x1.

All convolutions are cross-correlations with zero padding and no bias.
Every op accepts an optional :class:`OpCounter` and records the logical
number of multiplications and additions it performs; an accumulation into a
zero-initialised output counts one addition per term.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError
from .tensor import as_tensor


@dataclass
class OpCounter:
    multiplications: int = 0
    additions: int = 0

    def record(self, mults=0, adds=0):
        self.multiplications += int(mults)
        self.additions += int(adds)

    def merge(self, other):
        self.record(other.multiplications, other.additions)
        return self

    def snapshot(self):
        return OpCounter(self.multiplications, self.additions)

    def reset(self):
        self.multiplications = 0
        self.additions = 0


@dataclass(frozen=True)
class ConvGeometry:
    """Stride and zero padding. ``pad=None`` means "same" padding, kernel // 2."""

    stride: int = 1
    pad: int | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")
        if self.pad is not None and self.pad < 0:
            raise ShapeError("pad must be >= 0")

    def padding(self, k):
        return k // 2 if self.pad is None else self.pad

    def out_size(self, size, k):
        o = (size + 2 * self.padding(k) - k) // self.stride + 1
        if o < 1:
            raise ShapeError(f"kernel {k} does not fit input extent {size} with pad {self.padding(k)}")
        return o


SAME = ConvGeometry()


def _out_hw(x, h, w, geom):
    ph, pw = geom.padding(h), geom.padding(w)
    ho = (x.shape[2] + 2 * ph - h) // geom.stride + 1
    wo = (x.shape[3] + 2 * pw - w) // geom.stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {h}x{w} does not fit input {x.shape[2]}x{x.shape[3]}")
    return ph, pw, ho, wo


def _pad2(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def im2col(x, h, w, geom=SAME):
    """(n, p, H, W) -> (n, p*h*w, Ho*Wo) patch matrix, channel-major within a patch."""
    n, p = x.shape[:2]
    ph, pw, ho, wo = _out_hw(x, h, w, geom)
    xp = _pad2(x, ph, pw)
    s = geom.stride
    cols = np.empty((n, p, h, w, ho, wo))
    for dy in range(h):
        for dx in range(w):
            cols[:, :, dy, dx] = xp[:, :, dy:dy + s * (ho - 1) + 1:s, dx:dx + s * (wo - 1) + 1:s]
    return cols.reshape(n, p * h * w, ho * wo)


def col2im(dcols, x_shape, h, w, geom=SAME):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the input."""
    n, p, H, W = x_shape
    ph, pw = geom.padding(h), geom.padding(w)
    ho = (H + 2 * ph - h) // geom.stride + 1
    wo = (W + 2 * pw - w) // geom.stride + 1
    s = geom.stride
    d = dcols.reshape(n, p, h, w, ho, wo)
    gx = np.zeros((n, p, H + 2 * ph, W + 2 * pw))
    for dy in range(h):
        for dx in range(w):
            gx[:, :, dy:dy + s * (ho - 1) + 1:s, dx:dx + s * (wo - 1) + 1:s] += d[:, :, dy, dx]
    return gx[:, :, ph:ph + H, pw:pw + W]


def conv2d_dense(x, wgt, geom=SAME, counter=None, cols=None):
    """Dense cross-correlation of (n, p, H, W) input with (q, p, h, w) filters."""
    x = as_tensor(x, ndim=4)
    wgt = as_tensor(wgt, ndim=4)
    q, p, h, w = wgt.shape
    if x.shape[1] != p:
        raise ShapeError(f"input has {x.shape[1]} channels, filters expect {p}")
    n = x.shape[0]
    _, _, ho, wo = _out_hw(x, h, w, geom)
    if cols is None:
        cols = im2col(x, h, w, geom)
    out = np.matmul(wgt.reshape(q, -1), cols).reshape(n, q, ho, wo)
    if counter is not None:
        terms = n * q * ho * wo * p * h * w
        counter.record(mults=terms, adds=terms)
    return out


def conv2d_dense_backward(x, wgt, grad_out, geom=SAME, counter=None, cols=None, need_input_grad=True):
    """Return ``(grad_x, grad_wgt)``; ``grad_x`` is None if not requested."""
    x = as_tensor(x, ndim=4)
    wgt = as_tensor(wgt, ndim=4)
    q, p, h, w = wgt.shape
    n = x.shape[0]
    _, _, ho, wo = _out_hw(x, h, w, geom)
    grad_out = as_tensor(grad_out, ndim=4)
    if grad_out.shape != (n, q, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, q, ho, wo)}")
    if cols is None:
        cols = im2col(x, h, w, geom)
    g = grad_out.reshape(n, q, ho * wo)
    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wgt.shape)
    terms = n * q * ho * wo * p * h * w
    grad_x = None
    if need_input_grad:
        dcols = np.matmul(wgt.reshape(q, -1).T, g)
        grad_x = col2im(dcols, x.shape, h, w, geom)
    if counter is not None:
        k = 2 if need_input_grad else 1
        counter.record(mults=k * terms, adds=k * terms)
    return grad_x, grad_w


def _wide_offsets(bank, hp, wp):
    hw = bank.h * bank.w
    idx = bank.indices
    c, r = idx // hw, idx % hw
    return c * (hp * wp) + (r // bank.w) * wp + r % bank.w


def _check_bank(x, bank):
    if x.shape[1] != bank.p:
        raise ShapeError(f"input has {x.shape[1]} channels, bank expects {bank.p}")


def conv2d_sparse_binary(x, bank, geom=SAME, counter=None):
    """Multiply-free convolution with a sparse +/-1 bank: (n, p, H, W) -> (n, m, Ho, Wo)."""
    x = as_tensor(x, ndim=4)
    _check_bank(x, bank)
    n = x.shape[0]
    ph, pw, ho, wo = _out_hw(x, bank.h, bank.w, geom)
    xp = _pad2(x, ph, pw)
    if geom.stride == 1:
        hp, wp = xp.shape[2], xp.shape[3]
        length = ho * wp
        flat = np.zeros((n, bank.p * hp * wp + bank.w - 1))
        flat[:, :bank.p * hp * wp] = xp.reshape(n, -1)
        wide = np.empty((n, bank.m, length))
        _kernels.sparse_forward_wide(flat, _wide_offsets(bank, hp, wp), bank.signs.astype(np.int64), length, wide)
        out = np.ascontiguousarray(wide.reshape(n, bank.m, ho, wp)[..., :wo])
    else:
        chans, dys, dxs = _split_entries(bank)
        out = np.empty((n, bank.m, ho, wo))
        _kernels.sparse_forward_strided(np.ascontiguousarray(xp), chans, dys, dxs, bank.signs,
                                        geom.stride, out)
    if counter is not None:
        counter.record(mults=0, adds=n * bank.m * ho * wo * bank.nnz)
    return out


def conv2d_sparse_binary_backward(x_shape, bank, grad_out, geom=SAME, counter=None):
    """Input gradient of :func:`conv2d_sparse_binary`; the bank has no gradient.

    Only the input shape is needed, since the op is linear in ``x``.
    """
    n, p, H, W = x_shape
    if p != bank.p:
        raise ShapeError(f"input has {p} channels, bank expects {bank.p}")
    ph, pw = geom.padding(bank.h), geom.padding(bank.w)
    ho = (H + 2 * ph - bank.h) // geom.stride + 1
    wo = (W + 2 * pw - bank.w) // geom.stride + 1
    grad_out = as_tensor(grad_out, ndim=4)
    if grad_out.shape != (n, bank.m, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, bank.m, ho, wo)}")
    hp, wp = H + 2 * ph, W + 2 * pw
    if geom.stride == 1:
        length = ho * wp
        gwide = np.zeros((n, bank.m, ho, wp))
        gwide[..., :wo] = grad_out
        gflat = np.zeros((n, p * hp * wp + bank.w - 1))
        _kernels.sparse_backward_wide(gwide.reshape(n, bank.m, length), _wide_offsets(bank, hp, wp),
                                      bank.signs, length, gflat)
        gxp = gflat[:, :p * hp * wp].reshape(n, p, hp, wp)
    else:
        chans, dys, dxs = _split_entries(bank)
        gxp = np.zeros((n, p, hp, wp))
        _kernels.sparse_backward_strided(grad_out, chans, dys, dxs, bank.signs, geom.stride, gxp)
    if counter is not None:
        counter.record(mults=0, adds=n * bank.m * ho * wo * bank.nnz)
    return np.ascontiguousarray(gxp[:, :, ph:ph + H, pw:pw + W])


def _split_entries(bank):
    hw = bank.h * bank.w
    idx = bank.indices
    return idx // hw, (idx % hw) // bank.w, idx % bank.w


def conv2d_1x1(x, v, counter=None):
    """Per-pixel channel mixing: out[:, t] = sum_i v[t, i] * x[:, i]."""
    x = as_tensor(x, ndim=4)
    v = as_tensor(v, ndim=4)
    q, m = v.shape[:2]
    if v.shape[2:] != (1, 1):
        raise ShapeError(f"1x1 weights must have spatial size 1x1, got {v.shape}")
    if x.shape[1] != m:
        raise ShapeError(f"input has {x.shape[1]} channels, 1x1 weights expect {m}")
    n, _, H, W = x.shape
    out = np.matmul(v.reshape(q, m), x.reshape(n, m, H * W)).reshape(n, q, H, W)
    if counter is not None:
        counter.record(mults=n * q * H * W * m, adds=n * q * H * W * m)
    return out


def conv2d_1x1_backward(x, v, grad_out, counter=None, need_input_grad=True):
    n, m, H, W = x.shape
    q = v.shape[0]
    g = as_tensor(grad_out, ndim=4)
    if g.shape != (n, q, H, W):
        raise ShapeError(f"grad_out shape {g.shape} != forward output {(n, q, H, W)}")
    g = g.reshape(n, q, H * W)
    grad_v = np.matmul(g, x.reshape(n, m, H * W).transpose(0, 2, 1)).sum(axis=0).reshape(q, m, 1, 1)
    grad_x = None
    if need_input_grad:
        grad_x = np.matmul(v.reshape(q, m).T, g).reshape(n, m, H, W)
    if counter is not None:
        k = 2 if need_input_grad else 1
        counter.record(mults=k * n * q * H * W * m, adds=k * n * q * H * W * m)
    return grad_x, grad_v
