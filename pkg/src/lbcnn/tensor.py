"""Tensor helpers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in (n, c, h, w)
layout. This module only adds the checked constructors and patch gathering
that the rest of the package relies on.
"""

import numpy as np

from .errors import BoundsError, ShapeError

DTYPE = np.float64


def check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"tensor order must be 1..4, got {len(shape)}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def new(shape, fill=0.0):
    """Return a float64 tensor of ``shape`` with every element equal to ``fill``."""
    return np.full(check_shape(shape), fill, dtype=DTYPE)


def as_tensor(x, ndim=None):
    a = np.ascontiguousarray(x, dtype=DTYPE)
    if ndim is not None and a.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d tensor, got shape {a.shape}")
    check_shape(a.shape)
    return a


def pad_spatial(x, pad):
    """Zero-pad the last two axes of an (n, c, h, w) tensor."""
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2patch(x, center, h, w, pad):
    """Gather the h x w patch around ``center`` from a (1, p, H, W) tensor.

    The patch is returned as a vector of length p*h*w in channel-major,
    row-major order. The top-left of the patch sits at ``center - (h//2, w//2)``
    in image coordinates; positions outside the image read as zero.
    ``center`` must lie inside the image padded by ``pad``.
    """
    x = as_tensor(x, ndim=4)
    if x.shape[0] != 1:
        raise ShapeError("im2patch expects a single image (batch of 1)")
    if pad < 0:
        raise ShapeError("pad must be >= 0")
    _, p, H, W = x.shape
    cy, cx = center
    if not (-pad <= cy < H + pad and -pad <= cx < W + pad):
        raise BoundsError(f"center {center} outside padded image {H}x{W} (pad={pad})")
    y0, x0 = cy - h // 2, cx - w // 2
    out = np.zeros((p, h, w), dtype=DTYPE)
    ys = slice(max(y0, 0), min(y0 + h, H))
    xs = slice(max(x0, 0), min(x0 + w, W))
    out[:, ys.start - y0:ys.stop - y0, xs.start - x0:xs.stop - x0] = x[0, :, ys, xs]
    return out.reshape(-1)
