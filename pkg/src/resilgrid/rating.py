"""Cluster labels to ordinal resilience levels.

Min-max scale the aligned feature matrix, fit a forest on the clustering
labels, take Gini importances as feature weights, aggregate per-cluster
feature means into one score per cluster, and rank scores ascending:
level 1 is the least resilient cluster, level k the most.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .config import substream_seed
from .dec import DecConfig, dec_train
from .neural import DivergenceError, TrainConfig, forward
from .sdae import fit_sdae

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# scaling

@dataclass
class ScaleResult:
    scaled: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray
    constant_columns: list[int] = field(default_factory=list)


def min_max_scale(matrix: np.ndarray) -> ScaleResult:
    """Column-wise (x - min)/(max - min); constant columns map to 0 and are
    reported so unit differences cannot dominate any feature."""
    x = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("min_max_scale requires finite values")
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    span = maxs - mins
    constant = [int(j) for j in np.nonzero(span == 0)[0]]
    if constant:
        logger.warning("min_max_scale: constant columns %s set to 0", constant)
    safe_span = np.where(span == 0, 1.0, span)
    scaled = (x - mins) / safe_span
    scaled[:, constant] = 0.0
    return ScaleResult(scaled, mins, maxs, constant)


def apply_min_max(matrix: np.ndarray, mins: np.ndarray,
                  maxs: np.ndarray) -> np.ndarray:
    """Scale with previously stored column bounds (values may leave [0,1])."""
    x = np.asarray(matrix, dtype=float)
    span = np.where(maxs - mins == 0, 1.0, maxs - mins)
    out = (x - mins) / span
    out[:, maxs == mins] = 0.0
    return out


# ---------------------------------------------------------------------------
# classifier fidelity metrics

@dataclass
class MetricsReport:
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    auc_macro: float | None
    confusion: np.ndarray
    class_labels: np.ndarray
    per_class: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f1": self.micro_f1,
            "auc_macro": self.auc_macro,
            "confusion": self.confusion.tolist(),
            "class_labels": [int(c) for c in self.class_labels],
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _binary_auc(is_positive: np.ndarray, scores: np.ndarray) -> float:
    n_pos = int(is_positive.sum())
    n_neg = len(is_positive) - n_pos
    ranks = _average_ranks(scores)
    return (ranks[is_positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def classification_metrics(y_true, y_pred, scores: np.ndarray | None = None,
                           class_labels=None) -> MetricsReport:
    """Precision/recall/F1 in macro and micro averaging plus macro
    one-vs-rest AUC. Macro averages skip classes absent from the truth."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred lengths differ")
    if class_labels is None:
        class_labels = np.unique(np.concatenate([y_true, y_pred]))
    else:
        class_labels = np.asarray(class_labels)
    if scores is not None:
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (len(y_true), len(class_labels)):
            raise ValueError(
                f"scores must be ({len(y_true)}, {len(class_labels)}), got {scores.shape}")

    c = len(class_labels)
    index = {label: i for i, label in enumerate(class_labels)}
    confusion = np.zeros((c, c), dtype=int)
    for t, p in zip(y_true, y_pred):
        confusion[index[t], index[p]] += 1

    per_class = {}
    precisions, recalls, f1s = [], [], []
    for i, label in enumerate(class_labels):
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        support = confusion[i, :].sum()
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[label] = {"precision": precision, "recall": recall,
                            "f1": f1, "support": int(support)}
        if support == 0:
            logger.warning("class %r absent from truth; excluded from macro averages", label)
            continue
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)

    tp_total = int(np.trace(confusion))
    n = len(y_true)
    micro = tp_total / n if n else 0.0

    auc_macro = None
    if scores is not None:
        aucs = []
        for i, label in enumerate(class_labels):
            pos = y_true == label
            if 0 < pos.sum() < n:
                aucs.append(_binary_auc(pos, scores[:, i]))
        auc_macro = float(np.mean(aucs)) if aucs else None

    return MetricsReport(
        macro_precision=float(np.mean(precisions)) if precisions else 0.0,
        macro_recall=float(np.mean(recalls)) if recalls else 0.0,
        macro_f1=float(np.mean(f1s)) if f1s else 0.0,
        micro_precision=micro, micro_recall=micro, micro_f1=micro,
        auc_macro=auc_macro, confusion=confusion,
        class_labels=class_labels, per_class=per_class)


# ---------------------------------------------------------------------------
# level determination

def cluster_means(scaled: np.ndarray, labels, k: int | None = None) -> np.ndarray:
    """(k, d) per-cluster feature means; every cluster must be nonempty."""
    x = np.asarray(scaled, dtype=float)
    labels = np.asarray(labels)
    if k is None:
        k = int(labels.max()) + 1
    means = np.empty((k, x.shape[1]))
    for j in range(k):
        members = x[labels == j]
        if len(members) == 0:
            raise ValueError(f"cluster {j} is empty")
        means[j] = members.mean(axis=0)
    return means


@dataclass
class LevelAssignment:
    cluster_means: np.ndarray   # (k, d)
    scores: np.ndarray          # (k,) importance-weighted aggregates
    levels: np.ndarray          # (k,) ordinal level per cluster, 1..k

    @property
    def k(self) -> int:
        return len(self.scores)

    def cell_levels(self, labels) -> np.ndarray:
        return self.levels[np.asarray(labels)]


def aggregate_and_rank(means: np.ndarray, importances: np.ndarray) -> LevelAssignment:
    """Weighted-sum score per cluster, then ascending rank as the level:
    level 1 = lowest score (least resilient), level k = highest."""
    means = np.asarray(means, dtype=float)
    imp = np.asarray(importances, dtype=float)
    if means.shape[1] != len(imp):
        raise ValueError("importance length does not match feature count")
    scores = means @ imp
    order = np.argsort(scores, kind="stable")  # ties keep cluster-label order
    if len(np.unique(scores)) < len(scores):
        logger.warning("aggregate_and_rank: tied aggregate scores; "
                       "ties broken by cluster label order")
    levels = np.empty(len(scores), dtype=int)
    levels[order] = np.arange(1, len(scores) + 1)
    return LevelAssignment(means, scores, levels)


# ---------------------------------------------------------------------------
# model selection

def silhouette_score(x: np.ndarray, labels) -> float:
    """Mean silhouette over samples; singleton-cluster samples score 0."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    dist = np.sqrt(np.maximum(d2, 0.0))
    m = len(x)
    sil = np.zeros(m)
    masks = {c: labels == c for c in uniq}
    sizes = {c: int(masks[c].sum()) for c in uniq}
    for i in range(m):
        own = labels[i]
        if sizes[own] == 1:
            sil[i] = 0.0
            continue
        a = dist[i][masks[own]].sum() / (sizes[own] - 1)
        b = min(dist[i][masks[c]].mean() for c in uniq if c != own)
        denom = max(a, b)
        sil[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(sil.mean())


@dataclass
class GridSearchEntry:
    embedding_dim: int
    k: int
    score: float
    diverged: bool = False


@dataclass
class GridSearchResult:
    embedding_dim: int
    k: int
    entries: list[GridSearchEntry]


def grid_search(x_scaled: np.ndarray, embedding_space, k_space, seed: int,
                train_cfg: TrainConfig, dec_cfg: DecConfig,
                hidden_dims=(500, 500, 2000),
                criterion=None) -> GridSearchResult:
    """Search embedding dim and cluster count jointly.

    The selection criterion defaults to label-free mean silhouette of each
    config's hard labels, evaluated in the shared pre-refinement embedding
    space of its dim row: refinement sharpens embeddings around whatever
    centroids a config assumed, so scoring inside each refined space would
    reward over-split k. Pluggable via ``criterion(embeddings, labels)``.
    The SDAE does not depend on k, so it is trained once per embedding dim
    (seed substream keyed by the dim index) and shared across that k row;
    each (dim, k) cell refines a fresh copy. Ties resolve to the smaller
    embedding dim, then the smaller k; diverged configs score -inf.
    """
    x = np.asarray(x_scaled, dtype=float)
    score_fn = criterion if criterion is not None else silhouette_score
    entries: list[GridSearchEntry] = []
    best: tuple[float, int, int] | None = None
    for di, d_e in enumerate(embedding_space):
        dims = [x.shape[1], *hidden_dims, int(d_e)]
        sdae_cfg = replace(train_cfg, seed=substream_seed(seed, "sdae", di))
        try:
            model = fit_sdae(x, sdae_cfg, dims)
        except DivergenceError:
            logger.warning("grid search: SDAE diverged for embedding dim %d", d_e)
            for k in k_space:
                entries.append(GridSearchEntry(int(d_e), int(k), float("-inf"), True))
            continue
        emb_shared, _ = forward(model.encoder, x)
        for ki, k in enumerate(k_space):
            cfg_k = replace(dec_cfg, k=int(k),
                            seed=substream_seed(seed, "dec", di, ki))
            encoder = model.encoder.copy()
            try:
                encoder, _, labels = dec_train(encoder, x, cfg_k, sdae_cfg)
                if len(np.unique(labels)) < 2:
                    logger.warning("grid search: config (d_e=%d, k=%d) collapsed "
                                   "to one cluster", d_e, k)
                    entries.append(GridSearchEntry(int(d_e), int(k), float("-inf"), True))
                    continue
                score = float(score_fn(emb_shared, labels))
            except DivergenceError:
                logger.warning("grid search: DEC diverged for (d_e=%d, k=%d)", d_e, k)
                entries.append(GridSearchEntry(int(d_e), int(k), float("-inf"), True))
                continue
            entries.append(GridSearchEntry(int(d_e), int(k), score, False))
            if best is None or score > best[0]:
                best = (score, int(d_e), int(k))
    if best is None:
        raise DivergenceError("grid search: every configuration diverged")
    return GridSearchResult(best[1], best[2], entries)
