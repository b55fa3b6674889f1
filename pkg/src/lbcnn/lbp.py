"""Local binary patterns, directly and as sparse difference-filter convolutions.

Neighbours of a window are the window positions other than the pivot, listed
in row-major order; ``ordering[n]`` selects which of them drives bit ``n``.
A neighbour sets its bit when its intensity is >= the pivot's. Pixels outside
the image read as zero.
"""

from dataclasses import dataclass, field

import numpy as np

from .anchors import SparseBinaryFilterBank
from .conv import conv2d_sparse_binary
from .errors import ParameterError, ShapeError
from .tensor import as_tensor


@dataclass(frozen=True)
class LbpConfig:
    neighborhood: int = 3
    pivot: tuple | None = None
    ordering: tuple | None = None
    weights: tuple | None = None
    _neighbors: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nb = self.neighborhood
        if nb not in (3, 5):
            raise ParameterError(f"neighborhood must be 3 or 5, got {nb}")
        L = nb * nb - 1
        pivot = (nb // 2, nb // 2) if self.pivot is None else tuple(int(v) for v in self.pivot)
        if not (0 <= pivot[0] < nb and 0 <= pivot[1] < nb):
            raise ParameterError(f"pivot {pivot} outside the {nb}x{nb} window")
        ordering = tuple(range(L)) if self.ordering is None else tuple(int(v) for v in self.ordering)
        if sorted(ordering) != list(range(L)):
            raise ParameterError("ordering must be a permutation of 0..L-1")
        weights = (tuple(float(2 ** (L - 1 - n)) for n in range(L)) if self.weights is None
                   else tuple(float(v) for v in self.weights))
        if len(weights) != L:
            raise ParameterError(f"expected {L} weights, got {len(weights)}")
        object.__setattr__(self, "pivot", pivot)
        object.__setattr__(self, "ordering", ordering)
        object.__setattr__(self, "weights", weights)
        pivot_flat = pivot[0] * nb + pivot[1]
        object.__setattr__(self, "_neighbors", tuple(i for i in range(nb * nb) if i != pivot_flat))

    @property
    def length(self):
        return self.neighborhood ** 2 - 1

    def neighbor_offsets(self):
        """Window position (row, col) of the neighbour driving each bit n."""
        nb = self.neighborhood
        return [divmod(self._neighbors[k], nb) for k in self.ordering]


def _check_image(img, cfg):
    img = as_tensor(img, ndim=4)
    if img.shape[:2] != (1, 1):
        raise ShapeError(f"expected a (1, 1, H, W) image, got {img.shape}")
    if min(img.shape[2:]) < cfg.neighborhood:
        raise ShapeError(f"image {img.shape[2:]} smaller than the {cfg.neighborhood}x{cfg.neighborhood} window")
    return img


def lbp_encode_classic(img, cfg=LbpConfig()):
    """Per-pixel sum of v[n] * [i_n >= i_c] by explicit pixel comparisons."""
    img = _check_image(img, cfg)
    nb = cfg.neighborhood
    r = nb // 2
    H, W = img.shape[2:]
    padded = np.pad(img[0, 0], r)
    py, px = cfg.pivot
    center = padded[py:py + H, px:px + W]
    out = np.zeros((H, W))
    for n, (dy, dx) in enumerate(cfg.neighbor_offsets()):
        neighbor = padded[dy:dy + H, dx:dx + W]
        out += np.where(neighbor >= center, cfg.weights[n], 0.0)
    return out.reshape(1, 1, H, W)


def lbp_difference_filters(cfg=LbpConfig()):
    """L two-sparse filters: +1 on neighbour ``ordering[n]``, -1 on the pivot."""
    nb = cfg.neighborhood
    pivot = cfg.pivot[0] * nb + cfg.pivot[1]
    idx, sgn = [], []
    for dy, dx in cfg.neighbor_offsets():
        pos = dy * nb + dx
        pair = sorted([(pos, 1), (pivot, -1)])
        idx.append([p for p, _ in pair])
        sgn.append([s for _, s in pair])
    return SparseBinaryFilterBank(cfg.length, 1, nb, nb, idx, sgn)


def heaviside(z):
    return (z >= 0).astype(np.float64)


def lbp_encode_conv(img, cfg=LbpConfig()):
    """LBP as difference-filter convolution, Heaviside thresholding and weighted sum."""
    img = _check_image(img, cfg)
    bits = heaviside(conv2d_sparse_binary(img, lbp_difference_filters(cfg)))
    out = np.zeros(img.shape)
    for n, v in enumerate(cfg.weights):
        out[0, 0] += bits[0, n] * v
    return out
