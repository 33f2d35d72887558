"""Deep embedded clustering on encoder embeddings.

Centroids start from seeded k-means++, soft assignments use a Student-t
kernel, and a sharpened target distribution drives joint KL-gradient
refinement of the encoder weights and the centroids. Hard labels are the
row-wise argmax of the soft assignment, ties to the lowest cluster index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import substream_rng, substream_seed
from .neural import DenseStack, DivergenceError, TrainConfig, backward, forward, sgd_step

logger = logging.getLogger(__name__)


@dataclass
class DecConfig:
    k: int = 5
    max_iterations: int = 100
    target_update_interval: int = 1
    stop_tolerance: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        # tolerance 1.0 is the documented degenerate early stop
        if not 0.0 <= self.stop_tolerance <= 1.0:
            raise ValueError("stop_tolerance must be in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.target_update_interval < 1:
            raise ValueError("target_update_interval must be >= 1")


@dataclass
class ClusterState:
    k: int
    centroids: np.ndarray   # (k, d_e)
    alpha: float
    q: np.ndarray           # (m, k) soft assignment
    p: np.ndarray           # (m, k) target distribution


# ---------------------------------------------------------------------------
# k-means initialization

def kmeans(embeddings: np.ndarray, k: int, seed: int,
           max_iter: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ start, Lloyd iterations to a stable assignment.
    Empty clusters are re-seeded at the point farthest from its centroid."""
    x = np.asarray(embeddings, dtype=float)
    m = x.shape[0]
    if m < k:
        raise ValueError(f"need at least k={k} samples, got {m}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = np.zeros(m, dtype=int)
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        new_labels = np.argmin(d2, axis=1)
        for j in range(k):
            members = x[new_labels == j]
            if len(members) == 0:
                far = int(np.argmax(d2[np.arange(m), new_labels]))
                centroids[j] = x[far]
                new_labels[far] = j
            else:
                centroids[j] = members.mean(axis=0)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centroids, labels


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(m)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            idx = int(rng.choice(m, p=d2 / total))
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (m, k) squared Euclidean distances
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


# ---------------------------------------------------------------------------
# DEC math

def soft_assignment(embeddings: np.ndarray, centroids: np.ndarray,
                    alpha: float = 1.0) -> np.ndarray:
    """Student-t kernel similarity, row-normalized."""
    d2 = _sq_dists(np.asarray(embeddings, dtype=float),
                   np.asarray(centroids, dtype=float))
    num = (1.0 + d2 / alpha) ** (-(alpha + 1.0) / 2.0)
    return num / num.sum(axis=1, keepdims=True)


def target_distribution(q: np.ndarray) -> np.ndarray:
    """Square q and renormalize by soft cluster frequency, then per row."""
    q = np.asarray(q, dtype=float)
    weight = q ** 2 / q.sum(axis=0)
    return weight / weight.sum(axis=1, keepdims=True)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """sum_ij p log(p/q), natural log, 0*log0 := 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    pos = p > 0.0
    if np.any(pos & (q <= 0.0)):
        raise ValueError("KL divergence is infinite: q=0 where p>0")
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def kl_gradients(embeddings: np.ndarray, centroids: np.ndarray,
                 p: np.ndarray, q: np.ndarray | None = None,
                 alpha: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of the KL loss w.r.t. embeddings and centroids.

    dL/dz_i = (alpha+1)/alpha * sum_j (1+||z_i-u_j||^2/alpha)^-1 (p-q)(z_i-u_j)
    dL/du_j is its negative, summed over i.
    """
    z = np.asarray(embeddings, dtype=float)
    u = np.asarray(centroids, dtype=float)
    if q is None:
        q = soft_assignment(z, u, alpha)
    diff = z[:, None, :] - u[None, :, :]          # (m, k, d)
    s = 1.0 / (1.0 + (diff ** 2).sum(axis=2) / alpha)
    coef = (alpha + 1.0) / alpha * s * (p - q)    # (m, k)
    weighted = coef[:, :, None] * diff
    dz = weighted.sum(axis=1)
    du = -weighted.sum(axis=0)
    return dz, du


def hard_assignment(q: np.ndarray) -> np.ndarray:
    """Row argmax; the first (lowest) index wins ties."""
    return np.argmax(np.asarray(q), axis=1)


# ---------------------------------------------------------------------------
# joint refinement

def dec_train(encoder: DenseStack, x: np.ndarray, cfg: DecConfig,
              train_cfg: TrainConfig) -> tuple[DenseStack, ClusterState, np.ndarray]:
    """Refine encoder + centroids against the self-training target.

    Alternates: recompute the target distribution every
    ``target_update_interval`` passes, then take minibatch KL-gradient
    steps on encoder weights and centroids. Stops when fewer than
    ``stop_tolerance`` of hard labels change between consecutive target
    updates (checked from the second update on, since the first always
    matches the k-means init), or at ``max_iterations``.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    alpha = 1.0
    e0, _ = forward(encoder, x)
    centroids, _ = kmeans(e0, cfg.k, substream_seed(cfg.seed, "kmeans"))
    rng_shuffle = substream_rng(cfg.seed, "dec-shuffle")
    batch = min(train_cfg.batch_size, m)
    velocity = None
    labels_prev: np.ndarray | None = None
    for it in range(cfg.max_iterations):
        emb, _ = forward(encoder, x)
        q = soft_assignment(emb, centroids, alpha)
        labels = hard_assignment(q)
        if labels_prev is not None:
            changed = float(np.mean(labels != labels_prev))
            if changed < cfg.stop_tolerance:
                logger.debug("dec_train converged at iteration %d (%.4f%% changed)",
                             it, 100 * changed)
                break
        labels_prev = labels
        p = target_distribution(q)
        for _ in range(cfg.target_update_interval):
            order = rng_shuffle.permutation(m)
            for start in range(0, m, batch):
                idx = order[start:start + batch]
                z, cache = forward(encoder, x[idx])
                qb = soft_assignment(z, centroids, alpha)
                if not np.all(np.isfinite(z)):
                    raise DivergenceError(_divergence_dump(it, z, centroids))
                dz, du = kl_gradients(z, centroids, p[idx], qb, alpha)
                scale = 1.0 / len(idx)
                grads = backward(encoder, cache, dz * scale)
                velocity = sgd_step(encoder, grads, train_cfg.learning_rate,
                                    train_cfg.momentum, velocity)
                centroids -= train_cfg.learning_rate * du * scale
        if not np.all(np.isfinite(centroids)):
            raise DivergenceError(_divergence_dump(it, emb, centroids))
    emb, _ = forward(encoder, x)
    q = soft_assignment(emb, centroids, alpha)
    p = target_distribution(q)
    labels = hard_assignment(q)
    state = ClusterState(cfg.k, centroids, alpha, q, p)
    return encoder, state, labels


def _divergence_dump(iteration: int, emb: np.ndarray, centroids: np.ndarray) -> str:
    return (
        f"DEC refinement diverged at iteration {iteration}: "
        f"finite embeddings={bool(np.all(np.isfinite(emb)))}, "
        f"finite centroids={bool(np.all(np.isfinite(centroids)))}, "
        f"|centroids|_max={np.max(np.abs(centroids)):.3e}; "
        "lower train.learning_rate")
