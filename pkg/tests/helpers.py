import math

import numpy as np

from gpaco.contrast import ContrastSet


def central_diff(fn, x, h=1e-5):
    """Central finite differences of scalar ``fn`` w.r.t. every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + h
        up = fn(x)
        flat[j] = old - h
        down = fn(x)
        flat[j] = old
        g[j] = (up - down) / (2 * h)
    return grad


def rel_err(a, b, floor=1e-3):
    """Componentwise |a-b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def scalar_lse(xs):
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def random_contrast(rng, m, d, n_classes, y, n_pos, unit=True):
    """Random contrast set of size m with exactly n_pos members of class y."""
    Z = rng.standard_normal((m, d))
    if unit:
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    others = [k for k in range(n_classes) if k != y]
    labels = rng.choice(others, size=m)
    labels[rng.choice(m, size=n_pos, replace=False)] = y
    return ContrastSet(Z, labels, labels == y)


def unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)
