"""Small MLP encoder + transform with hand-written reverse mode.

All weights of a network live in one flat vector (so the key network update
and SGD are plain vector ops); layers are reshaped views into it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contrast import l2_normalize

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, da):
    if name == "relu":
        return da * (z > 0.0)
    if name == "tanh":
        return da * (1.0 - a * a)
    return da


class MLP:
    """Dense layers ``widths[0] -> ... -> widths[-1]``; ``activation`` after
    every layer except the last."""

    def __init__(self, widths, activation: str = "relu"):
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"bad layer widths {widths}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = tuple(int(w) for w in widths)
        self.activation = activation
        self.shapes = [(a, b) for a, b in zip(self.widths[:-1], self.widths[1:])]
        self.n_params = sum(a * b + b for a, b in self.shapes)

    def layers(self, params):
        """(W, b) views into the flat parameter vector."""
        out, k = [], 0
        for a, b in self.shapes:
            W = params[k:k + a * b].reshape(a, b)
            k += a * b
            out.append((W, params[k:k + b]))
            k += b
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        params = np.zeros(self.n_params)
        for W, _ in self.layers(params):
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        return params

    def forward(self, params, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.widths[0]:
            raise ValueError(f"expected input width {self.widths[0]}, got {X.shape[-1]}")
        cache = []
        h = X
        layers = self.layers(params)
        for j, (W, b) in enumerate(layers):
            z = h @ W + b
            a = z if j == len(layers) - 1 else _act(self.activation, z)
            cache.append((h, z, a))
            h = a
        return h, cache

    def backward(self, params, cache, dout):
        """Returns (flat parameter gradient, gradient w.r.t. the input)."""
        grad = np.zeros(self.n_params)
        glayers = self.layers(grad)
        layers = self.layers(params)
        d = dout
        for j in range(len(layers) - 1, -1, -1):
            h, z, a = cache[j]
            if j != len(layers) - 1:
                d = _act_grad(self.activation, z, a, d)
            gW, gb = glayers[j]
            gW[...] = h.T @ d
            gb[...] = d.sum(axis=0)
            d = d @ layers[j][0].T
        return grad, d


@dataclass
class EncoderSpec:
    input_dim: int = 16
    hidden: int = 64
    embed_dim: int = 32
    transform_hidden: int = 64
    transform_dim: int = 32
    pixel_widths: tuple = (64, 64, 32)
    activation: str = "relu"

    def __post_init__(self):
        widths = [self.input_dim, self.hidden, self.embed_dim, self.transform_hidden, self.transform_dim]
        if any(int(w) < 1 for w in widths) or any(int(w) < 1 for w in self.pixel_widths):
            raise ValueError("all widths must be positive")
        if len(self.pixel_widths) != 3:
            raise ValueError("the pixel transform has exactly three layers")
        self.pixel_widths = tuple(int(w) for w in self.pixel_widths)


class Network:
    """Encoder (input -> hidden -> f) followed by the two-layer transform
    (f -> hidden -> g). F is the identity on the encoder output."""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        self.encoder = MLP([spec.input_dim, spec.hidden, spec.embed_dim], spec.activation)
        self.transform = MLP([spec.embed_dim, spec.transform_hidden, spec.transform_dim], spec.activation)
        self.split = self.encoder.n_params
        self.n_params = self.encoder.n_params + self.transform.n_params

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([self.encoder.init(rng), self.transform.init(rng)])

    def identity_params(self) -> np.ndarray:
        """Identity weights, zero biases; needs all widths equal."""
        s = self.spec
        if len({s.input_dim, s.hidden, s.embed_dim, s.transform_hidden, s.transform_dim}) != 1:
            raise ValueError("identity initialization needs equal widths")
        params = np.zeros(self.n_params)
        for mlp, part in ((self.encoder, params[:self.split]), (self.transform, params[self.split:])):
            for W, _ in mlp.layers(part):
                W[...] = np.eye(W.shape[0])
        return params

    def encode(self, params, X, normalize: bool = True):
        """Returns f, g and the cache for :meth:`backward`."""
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        f, c_enc = self.encoder.forward(params[:self.split], X)
        u, c_tr = self.transform.forward(params[self.split:], f)
        g = l2_normalize(u) if normalize else u
        return f, g, (c_enc, c_tr, u, g, normalize)

    def features(self, params, X) -> np.ndarray:
        return self.encoder.forward(params[:self.split], X)[0]

    def backward(self, params, cache, dF=None, dG=None) -> np.ndarray:
        """Flat gradient for upstream gradients w.r.t. f and g (either may be None)."""
        c_enc, c_tr, u, g, normalize = cache
        grad = np.zeros(self.n_params)
        df = np.zeros_like(c_enc[-1][2]) if dF is None else np.array(dF, dtype=np.float64)
        if dG is not None:
            if normalize:
                norm = np.linalg.norm(u, axis=-1, keepdims=True)
                du = (dG - g * np.sum(g * dG, axis=-1, keepdims=True)) / norm
            else:
                du = dG
            grad[self.split:], df_t = self.transform.backward(params[self.split:], c_tr, du)
            df = df + df_t
        grad[:self.split], _ = self.encoder.backward(params[:self.split], c_enc, df)
        return grad
