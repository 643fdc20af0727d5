"""Exact O(n^2) t-SNE: perplexity-calibrated Gaussian affinities plus
KL-minimizing gradient descent to 2 or 3 dimensions.

The optimizer follows the standard reference loop: early exaggeration x12 for
the first 250 iterations, learning rate 200 with per-coordinate gains,
momentum 0.5 switching to 0.8 at iteration 250, and a tiny Gaussian init.
Everything is deterministic given the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest, load_image

P_FLOOR = 1e-12
EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
LEARNING_RATE = 200.0
MOMENTUM_EARLY = 0.5
MOMENTUM_LATE = 0.8
INIT_SCALE = 1e-4
MIN_GAIN = 0.01


@dataclass
class AffinityMatrix:
    P: np.ndarray          # n x n symmetric joint probabilities, zero diagonal
    perplexity: float
    sigmas: np.ndarray     # per-point Gaussian bandwidths


@dataclass
class EmbeddingResult:
    points: np.ndarray     # n x d
    kl: float              # final KL(P || Q)
    iterations: int
    seed: int
    kl_history: tuple[float, ...] = ()


def squared_distances(x: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances with a clean zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_affinity(d: np.ndarray, beta: float):
    """Gaussian affinities of one row at precision beta; returns (H, p)."""
    p = np.exp(-d * beta)
    s = p.sum()
    if s <= 0.0 or not np.isfinite(s):
        # fully collapsed row (duplicates or extreme beta): uniform fallback
        p = np.full_like(d, 1.0 / d.size)
        return math.log(d.size), p
    h = math.log(s) + beta * float(d @ p) / s
    return h, p / s


def conditional_affinities(x, perplexity: float = 30.0, max_iter: int = 50) -> AffinityMatrix:
    """Per-row bandwidth search to the target perplexity, then symmetrize.

    Each row's sigma is found by binary search on the precision until the
    realized perplexity exp(H) matches the target within 1e-5 (or the search
    budget runs out, e.g. when n-1 neighbors cannot reach the target).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if perplexity <= 1.0:
        raise ValueError(f"perplexity must be > 1, got {perplexity}")
    d_full = squared_distances(x)
    log_u = math.log(perplexity)
    tol_h = 1e-5 / perplexity  # |exp(H) - u| <= 1e-5 near H = log(u)
    p_cond = np.zeros((n, n), dtype=np.float64)
    sigmas = np.empty(n, dtype=np.float64)
    others = np.arange(n)
    for i in range(n):
        idx = np.concatenate((others[:i], others[i + 1:]))
        d = d_full[i, idx]
        beta, lo, hi = 1.0, 0.0, math.inf
        h, p = _row_affinity(d, beta)
        for _ in range(max_iter):
            if abs(h - log_u) <= tol_h:
                break
            if h > log_u:        # too flat: tighten the kernel
                lo = beta
                beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
            else:                # too peaked: widen the kernel
                hi = beta
                beta = 0.5 * (beta + lo)
            h, p = _row_affinity(d, beta)
        p = np.maximum(p, P_FLOOR)
        p /= p.sum()
        p_cond[i, idx] = p
        sigmas[i] = math.sqrt(0.5 / beta)
    p_joint = (p_cond + p_cond.T) / (2.0 * n)
    return AffinityMatrix(P=p_joint, perplexity=perplexity, sigmas=sigmas)


def kl_divergence(p, q) -> float:
    """sum p*log(p/q) with 1e-12 floors; diagonals are skipped for square inputs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if p.ndim == 2 and p.shape[0] == p.shape[1]:
        mask &= ~np.eye(p.shape[0], dtype=bool)
    ratio = np.maximum(p, P_FLOOR) / np.maximum(q, P_FLOOR)
    return float(np.sum(np.where(mask, p * np.log(ratio), 0.0)))


def _student_t_q(y: np.ndarray):
    """Low-dimensional affinities under a 1-dof Student-t kernel."""
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def tsne_embed(x, d: int = 2, perplexity: float = 30.0, iters: int = 1000,
               seed: int = 0, record_kl: bool = False) -> EmbeddingResult:
    """Embed feature vectors into d in {2,3} dimensions by minimizing KL(P||Q)."""
    if d not in (2, 3):
        raise ValueError(f"embedding dimension must be 2 or 3, got {d}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 points to embed, got {n}")
    p_true = conditional_affinities(x, perplexity).P
    p = p_true * EXAGGERATION
    rng = np.random.Generator(np.random.PCG64(seed))
    y = rng.normal(0.0, INIT_SCALE, size=(n, d))
    inc = np.zeros_like(y)
    gains = np.ones_like(y)
    momentum = MOMENTUM_EARLY
    history: list[float] = []
    if record_kl:
        history.append(kl_divergence(p_true, _student_t_q(y)[0]))
    for it in range(iters):
        if it == EXAGGERATION_ITERS:
            p = p_true
            momentum = MOMENTUM_LATE
        q, num = _student_t_q(y)
        w = (p - q) * num
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        if not np.isfinite(grad).all():
            raise FloatingPointError(f"non-finite t-SNE gradient at iteration {it}")
        flip = (grad > 0.0) != (inc > 0.0)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.maximum(gains, MIN_GAIN, out=gains)
        inc = momentum * inc - LEARNING_RATE * (gains * grad)
        y = y + inc
        y -= y.mean(axis=0)
        if record_kl:
            history.append(kl_divergence(p_true, _student_t_q(y)[0]))
    final_kl = history[-1] if record_kl else kl_divergence(p_true, _student_t_q(y)[0])
    return EmbeddingResult(
        points=y,
        kl=final_kl,
        iterations=iters,
        seed=seed,
        kl_history=tuple(history),
    )


def features_for_tsne(manifest: DatasetManifest, split: str, img_size: int = 128,
                      cache: dict | None = None):
    """Raw-pixel feature matrix for a split: (X [n, 3*S*S], labels, files).

    Rows follow manifest order; each image is decoded to [3,S,S] and
    flattened in C order.
    """
    entries = manifest.entries(split)
    features = np.empty((len(entries), 3 * img_size * img_size), dtype=np.float32)
    labels: list[int] = []
    files: list[str] = []
    for row, (path, label) in enumerate(entries):
        if cache is not None and (str(path), img_size) in cache:
            img = cache[(str(path), img_size)]
        else:
            img = load_image(path, img_size)
            if cache is not None:
                cache[(str(path), img_size)] = img
        features[row] = img.reshape(-1)
        labels.append(label)
        files.append(str(path))
    return features, labels, files
