"""Multiply-free kernels for sparse +/-1 convolution.

Stride-1 kernels work on "wide rows": each padded channel plane is flattened
to ``Hp*Wp`` values and output pixel ``(y, x)`` lives at ``y*Wp + x``. A filter
entry at ``(c, dy, dx)`` then reads one contiguous run starting at
``c*Hp*Wp + dy*Wp + dx``, so the inner loop is a single long vector add.
Columns ``x >= Wo`` of a wide row are junk and are cropped by the caller.

The only arithmetic in these kernels is addition and subtraction of input
values. Entries are visited in ascending flat index order.
"""

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy")
def sparse_forward_wide(xpf, offsets, signs, length, out):
    # xpf: (n, P) padded planes; offsets/signs: (m, nnz); out: (n, m, length)
    n = xpf.shape[0]
    m = offsets.shape[0]
    nnz = offsets.shape[1]
    for b in range(n):
        img = xpf[b]
        for f in range(m):
            acc = out[b, f]
            acc[:] = 0.0
            for e in range(nnz):
                o = offsets[f, e]
                seg = img[o:o + length]
                if signs[f, e] > 0:
                    np.add(acc, seg, acc)
                else:
                    np.subtract(acc, seg, acc)


@njit(cache=True, error_model="numpy")
def sparse_backward_wide(gwide, offsets, signs, length, gxpf):
    # gwide: (n, m, length) with junk columns zeroed; gxpf: (n, P) zero-initialised
    n = gwide.shape[0]
    m = offsets.shape[0]
    nnz = offsets.shape[1]
    for b in range(n):
        dst = gxpf[b]
        for f in range(m):
            g = gwide[b, f]
            for e in range(nnz):
                o = offsets[f, e]
                seg = dst[o:o + length]
                if signs[f, e] > 0:
                    np.add(seg, g, seg)
                else:
                    np.subtract(seg, g, seg)


@njit(cache=True, error_model="numpy")
def sparse_forward_strided(xp, chans, dys, dxs, signs, stride, out):
    # xp: (n, p, Hp, Wp); out: (n, m, Ho, Wo)
    n = xp.shape[0]
    m = chans.shape[0]
    nnz = chans.shape[1]
    ho = out.shape[2]
    wo = out.shape[3]
    for job in range(n * m):
        b = job // m
        f = job % m
        acc = out[b, f]
        acc[:, :] = 0.0
        for e in range(nnz):
            plane = xp[b, chans[f, e]]
            dy = dys[f, e]
            dx = dxs[f, e]
            for y in range(ho):
                row = plane[y * stride + dy]
                for x in range(wo):
                    if signs[f, e] > 0:
                        acc[y, x] += row[x * stride + dx]
                    else:
                        acc[y, x] -= row[x * stride + dx]


@njit(cache=True, error_model="numpy")
def sparse_backward_strided(gout, chans, dys, dxs, signs, stride, gxp):
    n = gout.shape[0]
    m = chans.shape[0]
    nnz = chans.shape[1]
    ho = gout.shape[2]
    wo = gout.shape[3]
    for b in range(n):
        for f in range(m):
            g = gout[b, f]
            for e in range(nnz):
                plane = gxp[b, chans[f, e]]
                dy = dys[f, e]
                dx = dxs[f, e]
                for y in range(ho):
                    row = plane[y * stride + dy]
                    for x in range(wo):
                        if signs[f, e] > 0:
                            row[x * stride + dx] += g[y, x]
                        else:
                            row[x * stride + dx] -= g[y, x]
