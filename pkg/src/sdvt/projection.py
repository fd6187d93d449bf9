"""2-D embedding projection: PCA and exact (quadratic) t-SNE.

The t-SNE is the standard exact algorithm: per-point precision found by
binary search to match the target perplexity, symmetrized joint P, gradient
descent on the Student-t similarities with early exaggeration, momentum, and
per-dimension gain adaptation.  Deterministic given the seed.
"""

from __future__ import annotations

import csv
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError

TSNE_MAX_POINTS = 2000


def pca_2d(embeddings: np.ndarray) -> np.ndarray:
    """Top-2 principal component scores after mean-centering."""
    x = np.asarray(embeddings, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    coords = u[:, :2] * s[:2]
    # fix the sign ambiguity so output is reproducible across BLAS builds
    for j in range(coords.shape[1]):
        k = np.argmax(np.abs(coords[:, j]))
        if coords[k, j] < 0:
            coords[:, j] = -coords[:, j]
    return coords


def _conditional_probs(dist_sq: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-wise conditional P via binary search on the precision beta."""
    n = dist_sq.shape[0]
    target_entropy = np.log(perplexity)
    P = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        d = np.delete(dist_sq[i], i)
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        for _ in range(50):
            p = np.exp(-d * beta)
            sum_p = p.sum()
            if sum_p <= 0:
                h = 0.0
                p = np.zeros_like(d)
            else:
                h = np.log(sum_p) + beta * float((d * p).sum()) / sum_p
                p = p / sum_p
            diff = h - target_entropy
            if abs(diff) < 1e-5:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        row = np.insert(p, i, 0.0)
        P[i] = row
    return P


def tsne_2d(embeddings: np.ndarray, seed: int = 0, perplexity: float = 30.0,
            n_iter: int = 1000, learning_rate: float = 200.0,
            early_exaggeration: float = 12.0, exaggeration_iters: int = 250) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    sq = (x * x).sum(axis=1)
    dist_sq = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)

    P = _conditional_probs(dist_sq, perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    dy_prev = np.zeros_like(y)
    gains = np.ones_like(y)

    for it in range(n_iter):
        p_eff = P * early_exaggeration if it < exaggeration_iters else P
        ysq = (y * y).sum(axis=1)
        num = 1.0 / (1.0 + np.maximum(ysq[:, None] + ysq[None, :] - 2.0 * (y @ y.T), 0.0))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        pq_num = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq_num.sum(axis=1)) - pq_num) @ y)

        momentum = 0.5 if it < exaggeration_iters else 0.8
        same_sign = np.sign(grad) == np.sign(dy_prev)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.clip(gains, 0.01, None, out=gains)
        dy_prev = momentum * dy_prev - learning_rate * gains * grad
        y = y + dy_prev
        y = y - y.mean(axis=0, keepdims=True)
    return y


def project_embeddings(embeddings: np.ndarray, method: str = "pca", seed: int = 0,
                       perplexity: float = 30.0, n_iter: int = 1000,
                       learning_rate: float = 200.0,
                       early_exaggeration: float = 12.0) -> np.ndarray:
    """Project [n, dim] embeddings to [n, 2] with PCA or exact t-SNE."""
    x = np.asarray(embeddings)
    if x.ndim != 2:
        raise InvalidArgumentError(f"embeddings must be [n, dim], got shape {x.shape}")
    n = x.shape[0]
    if n < 3:
        raise InvalidArgumentError(f"need at least 3 points, got {n}")
    if method == "pca":
        return pca_2d(x)
    if method == "tsne":
        if n > TSNE_MAX_POINTS:
            raise InvalidArgumentError(
                f"exact t-SNE supports up to {TSNE_MAX_POINTS} points, got {n}")
        if not perplexity < (n - 1) / 3:
            raise InvalidArgumentError(
                f"perplexity {perplexity} infeasible for {n} points (need < {(n - 1) / 3:.1f})")
        return tsne_2d(x, seed=seed, perplexity=perplexity, n_iter=n_iter,
                       learning_rate=learning_rate, early_exaggeration=early_exaggeration)
    raise InvalidArgumentError(f"method must be 'pca' or 'tsne', got {method!r}")


def write_projection_csv(path, coords: np.ndarray, labels: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for (x, y), lab in zip(coords, labels):
            writer.writerow([f"{x:.6f}", f"{y:.6f}", int(lab)])
