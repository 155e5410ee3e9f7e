"""Pixel sampling for using GPaCo as an auxiliary segmentation loss.

Each sampled pixel is one example: its raw channel vector is F(x) (scored
against the class centers) and a three-layer MLP of it, normalized, is G(x)
(contrasted against the other sampled pixels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contrast import l2_normalize
from ..losses import LossConfig, batch_loss
from .encoder import MLP


@dataclass
class PixelSample:
    positions: np.ndarray
    features: np.ndarray
    embeddings: np.ndarray
    labels: np.ndarray


def pixel_transform(channels: int, widths=(64, 64, 32), activation: str = "relu") -> MLP:
    if len(widths) != 3:
        raise ValueError("the pixel transform has exactly three layers")
    return MLP([channels, *widths], activation)


def sample_positions(height: int, width: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """min(k, H*W) distinct (row, col) positions, uniformly without replacement."""
    total = height * width
    if total < 1:
        raise ValueError("empty feature map")
    flat = rng.choice(total, size=min(k, total), replace=False)
    return np.column_stack(np.unravel_index(flat, (height, width)))


def sample_pixel_features(feature_map, labels, k: int, rng: np.random.Generator,
                          transform: MLP, params, normalize: bool = True) -> PixelSample:
    fm = np.asarray(feature_map, dtype=np.float64)
    labels = np.asarray(labels)
    H, W, _ = fm.shape
    if labels.shape != (H, W):
        raise ValueError("labels must be an H x W map")
    pos = sample_positions(H, W, k, rng)
    feats = fm[pos[:, 0], pos[:, 1]]
    emb, _ = transform.forward(params, feats)
    if normalize:
        emb = l2_normalize(emb)
    return PixelSample(pos, feats, emb, labels[pos[:, 0], pos[:, 1]])


@dataclass
class PixelLoss:
    value: float
    grad_params: np.ndarray
    grad_centers: np.ndarray
    grad_feature_map: np.ndarray
    n_pixels: int


def pixel_auxiliary_loss(feature_map, labels, k: int, rng: np.random.Generator, transform: MLP,
                         params, centers, config: LossConfig, priors=None) -> PixelLoss:
    """GPaCo over sampled pixels: every sampled pixel is an anchor whose
    contrast set is all other sampled pixels. Gradients flow back to the
    transform, the centers and the feature map."""
    fm = np.asarray(feature_map, dtype=np.float64)
    labels = np.asarray(labels)
    H, W, _ = fm.shape
    pos = sample_positions(H, W, k, rng)
    feats = fm[pos[:, 0], pos[:, 1]]
    y = labels[pos[:, 0], pos[:, 1]]
    u, cache = transform.forward(params, feats)
    g = l2_normalize(u) if config.normalize_samples else u
    m = y.size
    res = batch_loss(config, g, feats, g, y, y, np.eye(m, dtype=bool), centers, priors=priors)

    dg = res.grad_g + res.grad_keys
    if config.normalize_samples:
        du = (dg - g * np.sum(g * dg, axis=1, keepdims=True)) / np.linalg.norm(u, axis=1, keepdims=True)
    else:
        du = dg
    gparams, dfeats = transform.backward(params, cache, du)
    dfeats = dfeats + res.grad_f
    gmap = np.zeros_like(fm)
    np.add.at(gmap, (pos[:, 0], pos[:, 1]), dfeats)
    return PixelLoss(res.value, gparams, res.grad_centers, gmap, m)


def synthetic_feature_map(height: int, width: int, channels: int, n_classes: int,
                          rng: np.random.Generator, block: int = 8, noise: float = 0.5):
    """Blocky label map with class-dependent channel means plus noise."""
    means = rng.standard_normal((n_classes, channels))
    coarse = rng.integers(0, n_classes, size=(-(-height // block), -(-width // block)))
    labels = np.kron(coarse, np.ones((block, block), dtype=np.int64))[:height, :width]
    fm = means[labels] + noise * rng.standard_normal((height, width, channels))
    return fm, labels
