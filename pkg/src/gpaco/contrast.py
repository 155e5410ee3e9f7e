"""Shared contrastive machinery: normalization, class priors, the FIFO feature
queue, contrast-set construction and the momentum (key network) update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateFeatureError(ValueError):
    """Raised when a zero vector has to be normalized."""


def l2_normalize(v, axis=-1):
    """Scale ``v`` to unit Euclidean norm along ``axis``.

    Works on a single vector or a stack of row vectors. Any zero-norm row
    raises :class:`DegenerateFeatureError`.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0.0):
        raise DegenerateFeatureError("cannot normalize a zero feature vector")
    return v / norm


@dataclass(frozen=True)
class ClassPriors:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 1 or q.size < 1:
            raise ValueError("priors must be a non-empty vector")
        if np.any(q <= 0.0) or np.any(q > 1.0):
            raise ValueError("priors must lie in (0, 1]")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ValueError(f"priors must sum to one, got {q.sum()!r}")
        object.__setattr__(self, "q", q)

    @property
    def log_q(self) -> np.ndarray:
        return np.log(self.q)

    def __len__(self):
        return self.q.size


def class_priors_from_counts(counts) -> ClassPriors:
    counts = np.asarray(counts)
    if np.any(counts < 1):
        raise ValueError("every class needs at least one sample")
    counts = counts.astype(np.float64)
    return ClassPriors(counts / counts.sum())


def expected_positives(priors: ClassPriors, queue_len: int, y: int) -> float:
    """Approximate number of same-class entries in a queue of ``queue_len``."""
    if queue_len < 1:
        raise ValueError("queue_len must be >= 1")
    return float(queue_len * priors.q[y])


class FeatureQueue:
    """Fixed-capacity FIFO ring buffer of labeled embeddings.

    Starts empty and grows until full; afterwards each push evicts the oldest
    entries. :meth:`snapshot` returns copies in oldest-first order.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._emb = np.zeros((self.capacity, self.dim))
        self._lab = np.zeros(self.capacity, dtype=np.int64)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def cursor(self) -> int:
        return self._cursor

    def push(self, embeddings, labels) -> "FeatureQueue":
        embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        k = embeddings.shape[0]
        if k != labels.size:
            raise ValueError("embeddings and labels differ in length")
        if k > self.capacity:
            raise ValueError(f"cannot push {k} entries into a queue of capacity {self.capacity}")
        if embeddings.shape[1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {embeddings.shape[1]}")
        idx = (self._cursor + np.arange(k)) % self.capacity
        self._emb[idx] = embeddings
        self._lab[idx] = labels
        self._cursor = int((self._cursor + k) % self.capacity)
        self._size = min(self.capacity, self._size + k)
        return self

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """(embeddings, labels) oldest first, as copies."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (self._cursor + np.arange(self.capacity)) % self.capacity
        return self._emb[order].copy(), self._lab[order].copy()

    def copy(self) -> "FeatureQueue":
        other = FeatureQueue(self.capacity, self.dim)
        other._emb = self._emb.copy()
        other._lab = self._lab.copy()
        other._cursor = self._cursor
        other._size = self._size
        return other


def queue_push(queue: FeatureQueue, embeddings, labels) -> FeatureQueue:
    """Non-mutating push: returns a new queue."""
    return queue.copy().push(embeddings, labels)


@dataclass
class ContrastBatch:
    """Two index-aligned views of a labeled batch. ``z_v2`` may be None for
    single-view training."""

    z_v1: np.ndarray
    labels: np.ndarray
    z_v2: np.ndarray | None = None

    def __post_init__(self):
        self.z_v1 = np.atleast_2d(np.asarray(self.z_v1, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.size != self.z_v1.shape[0]:
            raise ValueError("labels must align with z_v1")
        if self.z_v2 is not None:
            self.z_v2 = np.atleast_2d(np.asarray(self.z_v2, dtype=np.float64))
            if self.z_v2.shape != self.z_v1.shape:
                raise ValueError("both views must have the same shape")

    def __len__(self):
        return self.labels.size


@dataclass
class ContrastSet:
    """The contrast set A(i) of one anchor with its positive mask P(i) ⊆ A(i)."""

    embeddings: np.ndarray
    labels: np.ndarray
    positive: np.ndarray

    def __len__(self):
        return self.labels.size

    @property
    def n_positive(self) -> int:
        return int(self.positive.sum())

    @property
    def positives(self) -> np.ndarray:
        return self.embeddings[self.positive]

    @classmethod
    def empty(cls, dim: int) -> "ContrastSet":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))


def build_contrast_sets(i: int, batch: ContrastBatch, queue: FeatureQueue | None = None) -> ContrastSet:
    """A(i) = queue ∪ Z_v1 ∪ Z_v2 minus the anchor's own view-1 entry.

    Order is queue (oldest first), then Z_v1, then Z_v2. P(i) is the mask of
    members sharing the anchor's label.
    """
    B = len(batch)
    if not 0 <= i < B:
        raise IndexError(f"anchor index {i} outside batch of size {B}")
    parts, labs = [], []
    if queue is not None and len(queue):
        qe, ql = queue.snapshot()
        parts.append(qe)
        labs.append(ql)
    keep = np.arange(B) != i
    parts.append(batch.z_v1[keep])
    labs.append(batch.labels[keep])
    if batch.z_v2 is not None:
        parts.append(batch.z_v2)
        labs.append(batch.labels)
    emb = np.concatenate(parts, axis=0)
    lab = np.concatenate(labs)
    return ContrastSet(emb, lab, lab == batch.labels[i])


def momentum_update(theta_q, theta_k, m: float = 0.999) -> np.ndarray:
    """Key-network update θ_k ← m·θ_k + (1 − m)·θ_q."""
    theta_q = np.asarray(theta_q, dtype=np.float64)
    theta_k = np.asarray(theta_k, dtype=np.float64)
    if theta_q.shape != theta_k.shape:
        raise ValueError(f"parameter shapes differ: {theta_q.shape} vs {theta_k.shape}")
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum coefficient must lie in [0, 1]")
    return m * theta_k + (1.0 - m) * theta_q
