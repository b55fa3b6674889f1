"""Fixed sparse +/-1 anchor filter banks.

A bank holds ``m`` filters of shape (p, h, w). Each filter has exactly ``nnz``
non-zero weights, every one of them +1 or -1. Entries are kept as flat indices
``c*h*w + dy*w + dx`` in ascending order plus a parallel array of signs.

Generated banks are a pure function of ``(m, p, h, w, sparsity, seed)``.
The bit stream is Philox4x64-10 with key ``(seed, 0)``, evaluated at the
counters ``(1, 0, 0, 0)``, ``(2, 0, 0, 0)``, ... (numpy's ``Philox(key=seed)``
increments the counter before each block) and read as consecutive 64-bit
words, four per block. Filter ``f`` consumes words
``[2*nnz*f, 2*nnz*(f+1))``:

* words ``0..nnz-1`` drive a partial Fisher-Yates shuffle of ``0..N-1``
  (``N = p*h*w``); step ``j`` swaps slot ``j`` with
  ``j + (((r >> 32) * (N - j)) >> 32)``. The first ``nnz`` slots, sorted
  ascending, are the support.
* words ``nnz..2*nnz-1`` give the signs of the sorted support positions in
  order: top bit clear is +1, set is -1.
"""

import hashlib
import math
import struct

import numpy as np

from .errors import FormatError, ParameterError

BANK_MAGIC = b"LBCB"
BANK_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIdQ")
HEADER_SIZE = _HEADER.size


def nnz_for(sparsity, n):
    """Non-zeros per filter: max(1, round-half-up(sparsity * n))."""
    return max(1, int(math.floor(sparsity * n + 0.5 + 1e-9)))


class SparseBinaryFilterBank:
    """Immutable bank of sparse binary filters."""

    def __init__(self, m, p, h, w, indices, signs, sparsity=None, seed=None):
        self.m, self.p, self.h, self.w = int(m), int(p), int(h), int(w)
        indices = np.asarray(indices, dtype=np.int64)
        signs = np.asarray(signs, dtype=np.int8)
        if indices.shape != signs.shape or indices.ndim != 2 or indices.shape[0] != self.m:
            raise ParameterError(f"entries must be ({self.m}, nnz) arrays, got {indices.shape} / {signs.shape}")
        if indices.shape[1] < 1:
            raise ParameterError("every filter needs at least one non-zero")
        if np.any(indices < 0) or np.any(indices >= self.size):
            raise ParameterError("entry position outside the filter")
        if not np.all(np.abs(signs) == 1):
            raise ParameterError("signs must be +1 or -1")
        order = np.argsort(indices, axis=1, kind="stable")
        indices = np.take_along_axis(indices, order, axis=1)
        signs = np.take_along_axis(signs, order, axis=1)
        if np.any(np.diff(indices, axis=1) == 0):
            raise ParameterError("duplicate entry positions within a filter")
        indices.flags.writeable = False
        signs.flags.writeable = False
        self.indices = indices
        self.signs = signs
        self.sparsity = sparsity if sparsity is not None else indices.shape[1] / self.size
        self.seed = seed

    @property
    def size(self):
        return self.p * self.h * self.w

    @property
    def nnz(self):
        return self.indices.shape[1]

    @property
    def shape(self):
        return (self.m, self.p, self.h, self.w)

    def entries(self, f):
        """List of ``(channel, dy, dx, sign)`` for filter ``f``."""
        hw = self.h * self.w
        return [(int(i // hw), int(i % hw // self.w), int(i % self.w), int(s))
                for i, s in zip(self.indices[f], self.signs[f])]

    def matrix(self):
        """Dense (m, p*h*w) matrix with filters as rows."""
        out = np.zeros((self.m, self.size))
        np.put_along_axis(out, self.indices, self.signs.astype(np.float64), axis=1)
        return out

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(struct.pack("<IIII", *self.shape))
        h.update(self.indices.tobytes())
        h.update(self.signs.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, SparseBinaryFilterBank):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.signs, other.signs))

    def __hash__(self):
        return hash(self.fingerprint())

    def __repr__(self):
        return (f"SparseBinaryFilterBank(m={self.m}, p={self.p}, h={self.h}, w={self.w}, "
                f"nnz={self.nnz}, seed={self.seed})")


def _raw_words(seed, count):
    if not 0 <= seed < 2**64:
        raise ParameterError("seed must fit in 64 bits")
    return np.random.Philox(key=int(seed)).random_raw(count).astype(np.uint64)


def generate_bank(m, p, h, w, sparsity, seed):
    """Draw a bank of ``m`` exact-``nnz`` sparse +/-1 filters (see module doc)."""
    if not 0.0 < sparsity <= 1.0:
        raise ParameterError(f"sparsity must be in (0, 1], got {sparsity}")
    if min(m, p, h, w) < 1:
        raise ParameterError("bank dimensions must be >= 1")
    n = p * h * w
    k = nnz_for(sparsity, n)
    raw = _raw_words(seed, m * 2 * k).reshape(m, 2 * k)
    perm = np.tile(np.arange(n, dtype=np.int64), (m, 1))
    rows = np.arange(m)
    hi = raw[:, :k] >> np.uint64(32)
    for j in range(k):
        pick = j + ((hi[:, j] * np.uint64(n - j)) >> np.uint64(32)).astype(np.int64)
        a = perm[rows, j].copy()
        perm[rows, j] = perm[rows, pick]
        perm[rows, pick] = a
    support = np.sort(perm[:, :k], axis=1)
    signs = np.where(raw[:, k:] >> np.uint64(63), -1, 1).astype(np.int8)
    return SparseBinaryFilterBank(m, p, h, w, support, signs, sparsity=sparsity, seed=int(seed))


def densify(bank):
    """Dense (m, p, h, w) tensor with +/-1 at the entry positions."""
    return bank.matrix().reshape(bank.shape)


def empirical_sign_balance(bank):
    """(#(+1) - #(-1)) / total entries."""
    s = bank.signs.astype(np.int64)
    return float(s.sum()) / s.size


def bank_header_bytes(bank):
    if bank.seed is None:
        raise FormatError("only seed-generated banks can be serialized")
    return _HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.m, bank.p, bank.h, bank.w,
                        float(bank.sparsity), int(bank.seed))


def bank_from_header(buf, offset=0):
    """Parse a bank header at ``offset``; return ``(bank, next_offset)``."""
    if len(buf) - offset < HEADER_SIZE:
        raise FormatError("truncated bank record")
    magic, version, m, p, h, w, sparsity, seed = _HEADER.unpack_from(buf, offset)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}")
    if version != BANK_VERSION:
        raise FormatError(f"unsupported bank version {version}")
    try:
        bank = generate_bank(m, p, h, w, sparsity, seed)
    except ParameterError as exc:
        raise FormatError(f"invalid bank record: {exc}") from exc
    return bank, offset + HEADER_SIZE


def save_bank(bank, path):
    with open(path, "wb") as fh:
        fh.write(bank_header_bytes(bank))


def load_bank(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    bank, end = bank_from_header(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after bank record")
    return bank
