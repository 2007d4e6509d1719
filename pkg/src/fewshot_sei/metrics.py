"""Identification accuracy, silhouette coefficient, and embedding export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cvnn import CvcnnModel
from .data import minmax_normalize, stack_records
from .errors import EmptyInput, LengthMismatch, ShapeMismatch, SingleClass
from .ndgrad import Tensor

EMBED_BATCH = 64


@dataclass
class EmbeddingSet:
    """Feature matrix (N, D) with per-row class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if feats.ndim != 2:
            raise ShapeMismatch(f"features must be (N, D), got {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise ShapeMismatch(
                f"{feats.shape[0]} feature rows but labels shape {labels.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain NaN or Inf")
        self.features = feats
        self.labels = labels


def accuracy(predicted, truth) -> float:
    """Exact-match fraction."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise LengthMismatch(f"predicted {pred.shape} vs truth {true.shape}")
    if pred.size == 0:
        raise EmptyInput("accuracy of zero predictions is undefined")
    return float(np.mean(pred == true))


def silhouette(embedding_set: EmbeddingSet) -> float:
    """Mean silhouette coefficient under Euclidean distance.

    Per point: a = mean distance to its own class (excluding itself),
    b = smallest mean distance to any other class, s = (b - a) / max(a, b)
    with s = 0 for singleton clusters and for the 0/0 case.
    """
    feats = embedding_set.features
    labels = embedding_set.labels
    n = feats.shape[0]
    if n < 2:
        raise SingleClass("silhouette needs at least 2 points")
    classes = np.unique(labels)
    if classes.size < 2:
        raise SingleClass("silhouette needs at least 2 distinct labels")

    diff = feats[:, None, :] - feats[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    # per-point summed distance to each class via one indicator matmul
    indicators = np.stack([(labels == c).astype(np.float64) for c in classes], axis=1)
    counts = indicators.sum(axis=0)
    class_sums = dist @ indicators  # (n, n_classes)

    own_col = np.searchsorted(classes, labels)
    own_count = counts[own_col]
    rows = np.arange(n)
    a = np.where(own_count > 1, class_sums[rows, own_col] / np.maximum(own_count - 1, 1), 0.0)
    other_means = class_sums / counts
    other_means[rows, own_col] = np.inf
    b = other_means.min(axis=1)
    denom = np.maximum(a, b)
    scores = np.where(
        (own_count > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0
    )
    return float(scores.mean())


def embed_records(model: CvcnnModel, records, normalize: bool = True) -> np.ndarray:
    """Feature matrix for a record list; min-max normalized like training input."""
    if normalize:
        records = [minmax_normalize(r) for r in records]
    feats = []
    for lo in range(0, len(records), EMBED_BATCH):
        chunk = stack_records(records[lo : lo + EMBED_BATCH])
        feats.append(model.embed_stacked(Tensor(chunk)).data)
    return np.concatenate(feats, axis=0)


def export_embeddings(model: CvcnnModel, records, path):
    """Write `label,emitter_id,f0..f{D-1}` rows at full float64 precision.

    Records are normalized exactly as during training; row order follows
    the input. Re-running with the same model and records reproduces the
    file byte for byte.
    """
    if not records:
        raise EmptyInput("no records to export")
    feats = embed_records(model, records)
    dim = feats.shape[1]
    header = "label,emitter_id," + ",".join(f"f{i}" for i in range(dim))
    lines = [header]
    for rec, row in zip(records, feats):
        lines.append(
            f"{rec.label},{rec.emitter_id}," + ",".join(repr(v) for v in row.tolist())
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_embeddings_csv(path) -> EmbeddingSet:
    """Read a file written by export_embeddings back into an EmbeddingSet."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("label,emitter_id,"):
        raise LengthMismatch("not an embedding CSV")
    labels, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        labels.append(int(parts[0]))
        rows.append([float(v) for v in parts[2:]])
    return EmbeddingSet(features=np.asarray(rows), labels=np.asarray(labels))
