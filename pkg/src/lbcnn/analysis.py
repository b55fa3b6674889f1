"""Approximation study for LBC responses, the random-projection bound and filter correlation."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .anchors import SparseBinaryFilterBank, densify, generate_bank
from .conv import ConvGeometry, im2col
from .errors import ParameterError, ShapeError
from .layers import activate


@dataclass
class ApproxExperimentConfig:
    sparsity_grid: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 11)])
    m_grid: list = field(default_factory=lambda: [64, 128, 512])
    n_images: int = 100
    p: int = 3
    h: int = 3
    w: int = 3
    image_size: int = 32
    seed: int = 0
    act: str = "relu"

    def __post_init__(self):
        if not self.sparsity_grid or not self.m_grid:
            raise ParameterError("sparsity and m grids must be non-empty")
        if any(not 0.0 < s <= 1.0 for s in self.sparsity_grid):
            raise ParameterError("sparsities must lie in (0, 1]")
        if any(m < 1 for m in self.m_grid):
            raise ParameterError("m values must be >= 1")
        if self.n_images < 1:
            raise ParameterError("need at least one image")


def cnn_response(x_patch, w):
    """relu(w . x) for one patch."""
    x_patch, w = np.asarray(x_patch, dtype=np.float64), np.asarray(w, dtype=np.float64)
    if x_patch.shape != w.shape:
        raise ShapeError(f"patch {x_patch.shape} and filter {w.shape} differ")
    return max(float(x_patch @ w), 0.0)


def _bank_matrix(bank):
    if isinstance(bank, SparseBinaryFilterBank):
        return densify(bank).reshape(bank.m, -1)
    return np.asarray(bank, dtype=np.float64)


def lbc_response(x_patch, bank_matrix, v, act="relu"):
    """sigma(B x) . v for one patch."""
    B = _bank_matrix(bank_matrix)
    x_patch, v = np.asarray(x_patch, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != x_patch.size or v.shape != (B.shape[0],):
        raise ShapeError(f"bank {B.shape}, patch {x_patch.shape} and v {v.shape} do not agree")
    return float(activate(act, B @ x_patch) @ v)


@dataclass
class LstsqInfo:
    rank: int
    rank_deficient: bool
    condition: float


def solve_v_least_squares(C, d, return_info=False):
    """Minimise ||C^T v - d|| by a rank-revealing orthogonal factorisation.

    Underdetermined and rank-deficient systems get the minimum-norm solution.
    With ``return_info`` the numerical rank and the 2-norm condition number
    of C are returned as well.
    """
    C, d = np.asarray(C, dtype=np.float64), np.asarray(d, dtype=np.float64)
    if C.ndim != 2 or d.shape != (C.shape[1],):
        raise ShapeError(f"C {C.shape} and d {d.shape} do not agree")
    v, _, rank, _ = scipy.linalg.lstsq(C.T, d, lapack_driver="gelsy", check_finite=False)
    if not return_info:
        return v
    sv = np.linalg.svd(C, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return v, LstsqInfo(int(rank), int(rank) < min(C.shape), cond)


def nmse(d_hat, d):
    d_hat, d = np.asarray(d_hat, dtype=np.float64), np.asarray(d, dtype=np.float64)
    denom = float(d @ d)
    if denom == 0.0:
        raise ParameterError("reference response is identically zero")
    r = d_hat - d
    return float(r @ r) / denom


def image_patches(img, h, w):
    """(p*h*w, H*W) matrix of stride-1, zero-padded patches of a (p, H, W) image."""
    img = np.asarray(img, dtype=np.float64)
    return im2col(img[None], h, w, ConvGeometry())[0]


def fit_nmse(X, d, B, act="relu"):
    """NMSE of the best v for bank matrix B on patch matrix X and targets d."""
    C = activate(act, B @ X)
    v = solve_v_least_squares(C, d)
    return nmse(C.T @ v, d)


def _bank_seed(seed, image, m, sparsity):
    return int(np.random.SeedSequence([seed, image, m, int(round(sparsity * 1000))]).generate_state(1, np.uint64)[0])


def nmse_curve(cfg, images=None):
    """Mean and std of NMSE over images for every (sparsity, m) pair.

    For each image a dense Gaussian filter w gives targets d = relu(w^T X)
    over all H*W patches; w is redrawn while d is identically zero. Each
    (image, m, sparsity) gets its own bank. Returns rows
    ``(sparsity, m, mean, std)`` ordered by sparsity then m.
    """
    if images is None:
        from .data import synthetic_natural

        images = synthetic_natural(cfg.n_images, cfg.p, cfg.image_size, cfg.image_size, seed=cfg.seed).images
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ParameterError("no images")
    N = cfg.p * cfg.h * cfg.w
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    vals = {(s, m): [] for s in cfg.sparsity_grid for m in cfg.m_grid}
    for i, img in enumerate(images):
        if img.shape[0] != cfg.p:
            raise ShapeError(f"image {i} has {img.shape[0]} channels, expected {cfg.p}")
        X = image_patches(img, cfg.h, cfg.w)
        for _ in range(1000):
            d = np.maximum(rng.standard_normal(N) @ X, 0.0)
            if d.any():
                break
        else:
            raise ParameterError(f"image {i}: no filter gives a non-zero response")
        for s in cfg.sparsity_grid:
            for m in cfg.m_grid:
                bank = generate_bank(m, cfg.p, cfg.h, cfg.w, s, _bank_seed(cfg.seed, i, m, s))
                vals[(s, m)].append(fit_nmse(X, d, densify(bank).reshape(m, N), cfg.act))
    return [(s, m, float(np.mean(vals[(s, m)])), float(np.std(vals[(s, m)])))
            for s in cfg.sparsity_grid for m in cfg.m_grid]


def nmse_csv(rows):
    lines = ["sparsity,m,nmse_mean,nmse_std"]
    lines += [f"{s:g},{m},{mean:.10g},{std:.10g}" for s, m, mean, std in rows]
    return "\n".join(lines) + "\n"


def theorem1_montecarlo(N, m, t, trials, seed=0, chunk=1000):
    """Fraction of trials in which max_i (B x)_i >= sqrt(1 - t) ||x|| for dense +-1 B.

    x is a fixed standard normal vector; each trial draws a fresh m x N
    matrix of independent equiprobable signs.
    """
    if not 0.0 < t < 1.0:
        raise ParameterError(f"t must lie in (0, 1), got {t}")
    if N < 1 or m < 1 or trials < 1:
        raise ParameterError("N, m and trials must be >= 1")
    x_ss, b_ss = np.random.SeedSequence(seed).spawn(2)
    x = np.random.default_rng(x_ss).standard_normal(N)
    thresh = np.sqrt(1.0 - t) * np.linalg.norm(x)
    rng = np.random.default_rng(b_ss)
    hits = 0
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        B = rng.integers(0, 2, size=(k, m, N), dtype=np.int8).astype(np.float64) * 2.0 - 1.0
        hits += int(np.count_nonzero((B @ x).max(axis=1) >= thresh))
        done += k
    return hits / trials


def filter_decorrelation(filters):
    """(||S||_F^2 - ||diag S||^2) / ||S||_F^2 for S the m x m covariance of the filters.

    ``filters`` is an (m, ...) array or a bank; each filter is flattened and
    centred on its own mean before the covariance is formed.
    """
    if isinstance(filters, SparseBinaryFilterBank):
        F = densify(filters).reshape(filters.m, -1)
    else:
        F = np.asarray(filters, dtype=np.float64)
        F = F.reshape(F.shape[0], -1)
    if F.shape[0] < 2:
        raise ParameterError("need at least two filters")
    S = np.atleast_2d(np.cov(F))
    total = float(np.sum(S * S))
    if total == 0.0:
        raise ParameterError("filters have zero variance")
    return (total - float(np.sum(np.diag(S) ** 2))) / total
