"""Soft-target cross-entropy, in-batch triplet mining, and the joint objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad
from .errors import ShapeMismatch
from .ndgrad import Tensor

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class SoftLabel:
    """Mixture weights over the class set; non-negative, summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise ShapeMismatch(f"label weights must be 1-D, got shape {w.shape}")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("label weights must be non-negative and sum to 1")

    @classmethod
    def one_hot(cls, label: int, num_classes: int) -> "SoftLabel":
        w = np.zeros(num_classes)
        w[label] = 1.0
        return cls(w)


def soft_cross_entropy(probs: Tensor, targets) -> Tensor:
    """Mean over the batch of -sum_c target_c * log(prob_c).

    probs: (N, C) rows on the simplex. targets: (N, C) array or a list of
    SoftLabel. Logs are clamped at 1e-12 so degenerate predictions stay
    finite.
    """
    if isinstance(targets, (list, tuple)):
        targets = np.stack([t.weights for t in targets])
    targets = np.asarray(targets, dtype=np.float64)
    if probs.data.shape != targets.shape:
        raise ShapeMismatch(f"probs {probs.data.shape} vs targets {targets.shape}")
    logp = ndgrad.log(ndgrad.clamp_min(probs, LOG_FLOOR))
    per_row = ndgrad.tensor_sum(logp * Tensor(targets), axis=1)
    return ndgrad.neg(ndgrad.tensor_mean(per_row))


@dataclass(frozen=True)
class TripletIndices:
    """Batch index triples (anchor, positive, negative)."""

    anchors: tuple
    positives: tuple
    negatives: tuple

    def __len__(self):
        return len(self.anchors)

    def triples(self):
        return list(zip(self.anchors, self.positives, self.negatives))


def mine_triplets(embeddings, hard_labels) -> TripletIndices:
    """Batch-hard mining under Euclidean distance.

    For every anchor that has at least one same-label partner and one
    different-label sample: positive = farthest same-label point,
    negative = nearest different-label point. Ties break to the lowest
    index. Returns empty indices when no valid triplet exists.
    """
    emb = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    labels = np.asarray(hard_labels)
    n = emb.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch(f"{n} embeddings but {labels.shape} labels")
    if n < 2:
        return TripletIndices((), (), ())
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same

    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    if not valid.any():
        return TripletIndices((), (), ())
    positives = np.argmax(np.where(pos_mask, dist, -np.inf), axis=1)
    negatives = np.argmin(np.where(neg_mask, dist, np.inf), axis=1)
    anchors = np.flatnonzero(valid)
    return TripletIndices(
        tuple(int(a) for a in anchors),
        tuple(int(positives[a]) for a in anchors),
        tuple(int(negatives[a]) for a in anchors),
    )


def triplet_loss(emb_a: Tensor, emb_p: Tensor, emb_n: Tensor, margin: float) -> Tensor:
    """Mean over triplets of max(0, d(a,p) - d(a,n) + margin)."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if not (emb_a.data.shape == emb_p.data.shape == emb_n.data.shape):
        raise ShapeMismatch(
            f"triplet shapes differ: {emb_a.data.shape}, {emb_p.data.shape}, {emb_n.data.shape}"
        )
    if emb_a.data.ndim != 2 or emb_a.data.shape[0] == 0:
        raise ShapeMismatch(f"expected non-empty (T, D) embeddings, got {emb_a.data.shape}")
    d_ap = _row_distances(emb_a, emb_p)
    d_an = _row_distances(emb_a, emb_n)
    hinge = ndgrad.relu(d_ap - d_an + Tensor(float(margin)))
    return ndgrad.tensor_mean(hinge)


def _row_distances(x: Tensor, y: Tensor) -> Tensor:
    d = x - y
    return ndgrad.safe_sqrt(ndgrad.tensor_sum(d * d, axis=1))


def joint_loss(ce: Tensor, triplet: Tensor, weight: float) -> Tensor:
    """ce + weight * triplet."""
    if weight < 0:
        raise ValueError(f"weight must be >= 0, got {weight}")
    return ce + Tensor(float(weight)) * triplet
