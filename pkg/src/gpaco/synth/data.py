"""Long-tailed Gaussian mixtures and the two-view augmentation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


@dataclass
class DatasetSpec:
    n_classes: int = 10
    dim: int = 16
    n_max: int = 800
    beta: float = 100.0
    seed: int = 0
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    n_test_per_class: int = 100

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.beta < 1:
            raise ValueError(f"imbalance factor beta must be >= 1, got {self.beta}")
        if self.n_max < self.beta:
            raise ValueError("n_max must be >= beta so the rarest class keeps a sample")
        if self.class_separation <= 0 or self.noise_sigma < 0:
            raise ValueError("class_separation must be positive and noise_sigma non-negative")
        if self.n_test_per_class < 1:
            raise ValueError("n_test_per_class must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown dataset keys: {', '.join(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return self.y.size

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


def class_counts(spec: DatasetSpec) -> np.ndarray:
    """n_k = round(N_max * beta^(-k/(n-1))), halves rounded up."""
    k = np.arange(spec.n_classes)
    raw = spec.n_max * float(spec.beta) ** (-k / (spec.n_classes - 1))
    return np.floor(raw + 0.5).astype(np.int64)


def class_means(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Means with pairwise distance >= class_separation.

    With dim >= n_classes the means are scaled columns of a random orthonormal
    basis (all pairwise distances exactly equal to the separation). Otherwise
    they are drawn by rejection inside a ball that grows on repeated failure.
    """
    n, d, sep = spec.n_classes, spec.dim, spec.class_separation
    if d >= n:
        Q, R = np.linalg.qr(rng.standard_normal((d, n)))
        Q = Q * np.sign(np.diag(R))
        return (sep / np.sqrt(2.0)) * Q.T
    radius = sep * n ** (1.0 / d)
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < n:
        cand = rng.uniform(-radius, radius, size=d)
        if all(np.linalg.norm(cand - m) >= sep for m in means):
            means.append(cand)
        tries += 1
        if tries % 1000 == 0:
            radius *= 1.5
    return np.array(means)


def make_longtailed_gaussians(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Long-tailed training set and class-balanced test set from one seed."""
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec, rng)
    counts = class_counts(spec)

    def draw(per_class):
        y = np.repeat(np.arange(spec.n_classes), per_class)
        x = means[y] + spec.noise_sigma * rng.standard_normal((y.size, spec.dim))
        return Dataset(x, y, spec.n_classes)

    train = draw(counts)
    test = draw(np.full(spec.n_classes, spec.n_test_per_class))
    return train, test


def augment_view(x, noise: float, scale_jitter: float, rng: np.random.Generator) -> np.ndarray:
    """s * x + eps with s ~ U[1 - jitter, 1 + jitter] per row, eps ~ N(0, noise^2)."""
    if noise < 0 or scale_jitter < 0:
        raise ValueError("noise and scale_jitter must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    rows = x.reshape(-1, x.shape[-1])
    s = rng.uniform(1.0 - scale_jitter, 1.0 + scale_jitter, size=(rows.shape[0], 1))
    eps = noise * rng.standard_normal(rows.shape)
    return (s * rows + eps).reshape(x.shape)


def dataset_to_json(spec: DatasetSpec, train: Dataset, path) -> Path:
    """Writes {"spec": {...}, "counts": [...], "seed": int}; the data itself is
    regenerated from the spec."""
    path = Path(path)
    doc = {"spec": asdict(spec), "counts": train.counts.tolist(), "seed": spec.seed}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def dataset_from_json(path) -> tuple[DatasetSpec, Dataset, Dataset]:
    doc = json.loads(Path(path).read_text())
    spec = DatasetSpec.from_dict(doc["spec"])
    train, test = make_longtailed_gaussians(spec)
    if "counts" in doc and list(doc["counts"]) != train.counts.tolist():
        raise ValueError("stored class counts do not match the regenerated dataset")
    return spec, train, test
