"""Accuracy by frequency split, the linear probe and the classifier
gradient-norm probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contrast import class_priors_from_counts
from ..losses import softmax
from .data import Dataset
from .encoder import Network


@dataclass
class Metrics:
    acc_all: float
    acc_many: float
    acc_medium: float
    acc_few: float
    n_many: int
    n_medium: int
    n_few: int


def frequency_splits(counts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Class ids of the Many/Medium/Few tertiles by descending training count
    (ties broken by class id); tertile sizes differ by at most one."""
    counts = np.asarray(counts)
    order = np.lexsort((np.arange(counts.size), -counts))
    many, medium, few = np.array_split(order, 3)
    return many, medium, few


def predict(features, centers) -> np.ndarray:
    """argmax_k c_k . f; np.argmax returns the lowest index on ties."""
    return np.argmax(np.asarray(features) @ np.asarray(centers).T, axis=1)


def split_accuracies(pred, y, counts) -> Metrics:
    pred, y = np.asarray(pred), np.asarray(y)
    correct = pred == y
    n = np.asarray(counts).size
    per_class = np.array([correct[y == k].mean() if np.any(y == k) else np.nan for k in range(n)])

    def acc(classes):
        vals = per_class[classes]
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if vals.size else float("nan")

    many, medium, few = frequency_splits(counts)
    return Metrics(acc(np.arange(n)), acc(many), acc(medium), acc(few), many.size, medium.size, few.size)


def evaluate(net: Network, state, test: Dataset, train_counts) -> Metrics:
    """Classify with the centers (no log-prior); accuracies are class-balanced."""
    feats = net.features(state.params, test.x)
    return split_accuracies(predict(feats, state.centers), test.y, train_counts)


def linear_probe(net: Network, state, train: Dataset, config, test: Dataset | None = None):
    """Retrain only the centers with cross-entropy on frozen encoder features.

    Mini-batch SGD with momentum and the same cosine schedule as training.
    Returns test Metrics when ``test`` is given.
    """
    from .train import batches, cosine_lr

    feats = net.features(state.params, train.x)
    C = state.centers.copy()
    vel = np.zeros_like(C)
    B = min(config.batch_size, len(train))
    steps = (len(train) // B) * config.probe_epochs
    t = 0
    for _ in range(config.probe_epochs):
        for idx in batches(len(train), B, state.rng):
            F, y = feats[idx], train.y[idx]
            p = softmax(F @ C.T)
            p[np.arange(y.size), y] -= 1.0
            grad = p.T @ F / y.size
            vel = config.sgd_momentum * vel + grad + config.weight_decay * C
            C -= cosine_lr(config.probe_lr, t, steps) * vel
            t += 1
    state.centers = C
    if test is not None:
        return evaluate(net, state, test, train.counts)
    return None


def classifier_grad_norms(features, labels, centers, tau: float = 1.0, priors=None) -> np.ndarray:
    """Per-class mean of ||d loss_i / d c_k|| over the samples i of class k.

    ``loss_i`` is the classifier cross-entropy of sample i (log-prior offsets
    added when ``priors`` is given). The row-k gradient of a class-k sample is
    ``(p_ik - 1) * f_i / tau``. Classes without samples get NaN.
    """
    F = np.asarray(features, dtype=np.float64)
    C = np.asarray(centers, dtype=np.float64)
    y = np.asarray(labels)
    if F.shape[0] == 0:
        raise ValueError("grad-norm probe needs data")
    logits = F @ C.T / tau
    if priors is not None:
        q = priors.q if hasattr(priors, "q") else np.asarray(priors)
        logits = logits + np.log(q)[None, :]
    p_own = softmax(logits)[np.arange(y.size), y]
    per_sample = (1.0 - p_own) * np.linalg.norm(F, axis=1) / tau
    n = C.shape[0]
    sums = np.bincount(y, weights=per_sample, minlength=n)
    cnt = np.bincount(y, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, sums / cnt, np.nan)


def classifier_grad_norm_probe(net: Network, state, data: Dataset, train_counts, tau: float = 1.0,
                               rebalanced: bool = False):
    """Per-class classifier gradient norms, sorted by descending training count.

    Returns (class ids in that order, their counts, their norms).
    """
    feats = net.features(state.params, data.x)
    priors = class_priors_from_counts(train_counts) if rebalanced else None
    norms = classifier_grad_norms(feats, data.y, state.centers, tau, priors)
    counts = np.asarray(train_counts)
    order = np.lexsort((np.arange(counts.size), -counts))
    return order, counts[order], norms[order]


def decile_ratio(norms_sorted) -> float:
    """max/min over the means of ten frequency-ordered groups of classes."""
    groups = np.array_split(np.asarray(norms_sorted, dtype=np.float64), min(10, len(norms_sorted)))
    means = np.array([g.mean() for g in groups])
    return float(means.max() / means.min())
