"""Contrastive loss family with exact gradients.

Every loss here is a weighted negative log-likelihood under one softmax (or a
sum of two, for the multi-task baseline)::

    loss = s * sum_j w_j * (logsumexp(l) - l_j)
    dloss/dl = s * (sum(w) * softmax(l) - w)

Sample logits are ``z . g / tau``; center logits are ``c . f / tau_c``, plus
``log q(y)`` when center learning is rebalanced. The per-sample functions are
the reference definitions; :func:`batch_loss` is the vectorized version the
trainer uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contrast import ClassPriors, ContrastSet

VARIANTS = ("info_nce", "cross_entropy", "supcon", "paco", "gpaco", "paco_rebalanced", "multi_task")


@dataclass
class LossConfig:
    variant: str = "paco"
    alpha: float = 0.05
    tau: float = 0.2
    center_rebalance: bool = False
    multi_task_weight: float = 1.0
    normalize_samples: bool = True
    center_tau: bool = True
    scaled: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if self.multi_task_weight < 0.0:
            raise ValueError("multi_task_weight must be >= 0")

    @property
    def tau_center(self) -> float:
        return self.tau if self.center_tau else 1.0

    @property
    def uses_centers_in_contrast(self) -> bool:
        return self.variant in ("paco", "gpaco", "paco_rebalanced")

    @property
    def rebalanced(self) -> bool:
        return self.variant == "paco_rebalanced" or (self.center_rebalance and self.uses_centers_in_contrast)

    @property
    def two_stage(self) -> bool:
        """Representation-only losses need a separate classifier (linear probe)."""
        return self.variant in ("supcon", "info_nce")


@dataclass
class LossResult:
    value: float
    grad_g: np.ndarray
    grad_f: np.ndarray
    grad_centers: np.ndarray
    grad_contrast: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __add__(self, other: "LossResult") -> "LossResult":
        return LossResult(
            self.value + other.value,
            self.grad_g + other.grad_g,
            self.grad_f + other.grad_f,
            self.grad_centers + other.grad_centers,
            self.grad_contrast + other.grad_contrast,
        )

    def scale(self, s: float) -> "LossResult":
        return LossResult(
            s * self.value, s * self.grad_g, s * self.grad_f, s * self.grad_centers, s * self.grad_contrast
        )


@dataclass
class Decomposition:
    l_sup: float
    l_supcon: float
    p_sup: float
    p_supcon: float
    exp_sum: float
    l_extra: float
    residual: float
    scaled: bool = False


def logsumexp(x, axis=-1):
    """Max-subtracted log-sum-exp; entries equal to -inf are ignored."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(x - np.expand_dims(logsumexp(x, axis=axis), axis))


def _weighted_nll(logits, weights, scale):
    lse = logsumexp(logits)
    p = np.exp(logits - lse)
    value = scale * float(np.dot(weights, lse - logits)) if weights.size else 0.0
    dlogits = scale * (weights.sum() * p - weights)
    return value, dlogits


def _log_prior(priors, n):
    if priors is None:
        return np.zeros(n)
    q = priors.q if isinstance(priors, ClassPriors) else np.asarray(priors, dtype=np.float64)
    if q.shape != (n,):
        raise ValueError(f"need {n} priors, got shape {q.shape}")
    return np.log(q)


def info_nce(q, k_plus, k_neg, tau: float) -> LossResult:
    q = np.asarray(q, dtype=np.float64)
    keys = np.vstack([np.asarray(k_plus, dtype=np.float64)[None, :],
                      np.asarray(k_neg, dtype=np.float64).reshape(-1, q.size)])
    logits = keys @ q / tau
    w = np.zeros(keys.shape[0])
    w[0] = 1.0
    value, dl = _weighted_nll(logits, w, 1.0)
    return LossResult(value, keys.T @ dl / tau, np.zeros(0), np.zeros((0, 0)), np.outer(dl, q) / tau)


def cross_entropy(x, centers, y: int, tau: float = 1.0, priors=None) -> LossResult:
    """Softmax cross-entropy with the centers as linear classifier weights."""
    x = np.asarray(x, dtype=np.float64)
    C = np.asarray(centers, dtype=np.float64)
    n = C.shape[0]
    if not 0 <= y < n:
        raise IndexError(f"label {y} outside [0, {n})")
    logits = C @ x / tau + _log_prior(priors, n)
    w = np.zeros(n)
    w[y] = 1.0
    value, dl = _weighted_nll(logits, w, 1.0)
    return LossResult(value, np.zeros(0), C.T @ dl / tau, np.outer(dl, x) / tau, np.zeros((0, 0)))


def supcon_loss(g, contrast: ContrastSet, tau: float) -> LossResult:
    """Supervised contrastive loss of one anchor, averaged over its positives.

    An empty positive set contributes zero loss and zero gradient.
    """
    g = np.asarray(g, dtype=np.float64)
    if len(contrast) == 0:
        raise ValueError("contrast set A(i) is empty")
    Z = contrast.embeddings
    K = contrast.n_positive
    if K == 0:
        return LossResult(0.0, np.zeros_like(g), np.zeros(0), np.zeros((0, 0)), np.zeros_like(Z))
    logits = Z @ g / tau
    value, dl = _weighted_nll(logits, contrast.positive.astype(np.float64), 1.0 / K)
    return LossResult(value, Z.T @ dl / tau, np.zeros(0), np.zeros((0, 0)), np.outer(dl, g) / tau)


def paco_loss(g, f, contrast: ContrastSet, centers, y: int, alpha: float, tau: float,
              priors=None, tau_center: float | None = None, scaled: bool = True) -> LossResult:
    """Parametric contrastive loss of one anchor.

    One softmax over the sample logits ``z.g/tau`` (z in A(i)) and the center
    logits ``c.f/tau_center``. Positives carry weight ``alpha``, the own-class
    center weight 1; the sum is divided by ``1 + alpha*|P(i)|`` when ``scaled``.
    ``centers=None`` drops the center block and its target entirely.
    ``priors`` adds ``log q(y_k)`` to the center logits (Balanced Softmax).
    """
    g = np.asarray(g, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    tau_c = tau if tau_center is None else tau_center
    Z = contrast.embeddings.reshape(-1, g.size)
    M = Z.shape[0]
    K = contrast.n_positive
    parts = [Z @ g / tau]
    w = [alpha * contrast.positive.astype(np.float64)]
    n = 0
    if centers is not None:
        C = np.asarray(centers, dtype=np.float64)
        n = C.shape[0]
        if not 0 <= y < n:
            raise IndexError(f"label {y} outside [0, {n})")
        parts.append(C @ f / tau_c + _log_prior(priors, n))
        wc = np.zeros(n)
        wc[y] = 1.0
        w.append(wc)
    logits = np.concatenate(parts)
    weights = np.concatenate(w)
    if logits.size == 0:
        raise ValueError("no candidates: empty contrast set and no centers")
    scale = 1.0 / (1.0 + alpha * K) if scaled else 1.0
    value, dl = _weighted_nll(logits, weights, scale)
    ds, dc = dl[:M], dl[M:]
    grad_g = Z.T @ ds / tau
    grad_contrast = np.outer(ds, g) / tau
    if centers is None:
        return LossResult(value, grad_g, np.zeros_like(f), np.zeros((0, f.size)), grad_contrast)
    return LossResult(value, grad_g, C.T @ dc / tau_c, np.outer(dc, f) / tau_c, grad_contrast)


def paco_rebalanced_loss(g, f, contrast: ContrastSet, centers, y: int, alpha: float, tau: float,
                         priors, tau_center: float | None = None, scaled: bool = True) -> LossResult:
    """PaCo with Balanced Softmax on the center block: center logit + log q(y_k)."""
    if priors is None:
        raise ValueError("rebalanced loss needs class priors")
    return paco_loss(g, f, contrast, centers, y, alpha, tau, priors=priors,
                     tau_center=tau_center, scaled=scaled)


def multi_task_loss(g, f, contrast: ContrastSet, centers, y: int, tau: float, weight: float,
                    tau_center: float | None = None) -> LossResult:
    """Fixed-weight sum: cross-entropy + weight * SupCon."""
    if weight < 0:
        raise ValueError("weight must be >= 0")
    ce = cross_entropy(f, centers, y, tau if tau_center is None else tau_center)
    sc = supcon_loss(g, contrast, tau).scale(weight)
    return LossResult(ce.value + sc.value, sc.grad_g, ce.grad_f, ce.grad_centers, sc.grad_contrast)


def decompose_paco(g, f, contrast: ContrastSet, centers, y: int, alpha: float, tau: float,
                   tau_center: float | None = None, unscaled: bool = True) -> Decomposition:
    """Split the PaCo loss into cross-entropy, SupCon and the extra term.

    Uses the actual ``|P(i)|`` as K. The components are computed from their own
    definitions and the residual against :func:`paco_loss` is reported.
    """
    K = contrast.n_positive
    if K == 0 or len(contrast) == 0:
        raise ValueError("decomposition needs a non-empty contrast set with positives")
    g = np.asarray(g, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    C = np.asarray(centers, dtype=np.float64)
    tau_c = tau if tau_center is None else tau_center
    ls = contrast.embeddings @ g / tau
    lc = C @ f / tau_c
    lse_a, lse_c = logsumexp(ls), logsumexp(lc)
    lse_all = logsumexp(np.array([lse_a, lse_c]))
    l_sup = lse_c - lc[y]
    l_supcon = float(np.sum(lse_a - ls[contrast.positive]))
    log_p_sup = lse_c - lse_all
    log_p_supcon = lse_a - lse_all
    extra = -log_p_sup - alpha * K * log_p_supcon
    s = 1.0 if unscaled else 1.0 / (1.0 + alpha * K)
    full = paco_loss(g, f, contrast, C, y, alpha, tau, tau_center=tau_c, scaled=not unscaled).value
    residual = abs(full - s * (l_sup + alpha * l_supcon + extra))
    return Decomposition(
        l_sup=float(s * l_sup),
        l_supcon=float(s * l_supcon),
        p_sup=float(np.exp(log_p_sup)),
        p_supcon=float(np.exp(log_p_supcon)),
        exp_sum=float(np.exp(lse_all)),
        l_extra=float(s * extra),
        residual=float(residual),
        scaled=not unscaled,
    )


def l_extra(p_sup, alpha: float, k_star: float):
    """-log(p) - alpha*K*log(1-p): the term PaCo adds on top of multi-task."""
    p = np.asarray(p_sup, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("p_sup must lie strictly inside (0, 1)")
    if not alpha * k_star > 0:
        raise ValueError("alpha * k_star must be positive")
    out = -np.log(p) - alpha * k_star * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def supcon_at_fixed_psup(p, alpha: float, k_star: float):
    """SupCon value forced when the sample block holds mass 1-p and each pair
    sits at its optimum alpha/(1+alpha*K)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("p must lie strictly inside (0, 1)")
    pair = alpha / (1.0 + alpha * k_star)
    out = -k_star * (np.log(pair) - np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def evaluate_loss(config: LossConfig, g, f, contrast: ContrastSet, centers, y: int,
                  priors=None) -> LossResult:
    """Per-sample dispatch on ``config.variant``.

    For ``info_nce`` the positive mask of ``contrast`` must hold exactly the
    anchor's own second view.
    """
    v, tau, tc = config.variant, config.tau, config.tau_center
    if v == "cross_entropy":
        r = cross_entropy(f, centers, y, tc)
        return LossResult(r.value, np.zeros_like(np.asarray(g, dtype=np.float64)), r.grad_f,
                          r.grad_centers, np.zeros_like(contrast.embeddings))
    if v in ("supcon", "info_nce"):
        if v == "info_nce" and contrast.n_positive != 1:
            raise ValueError("info_nce needs exactly one positive key")
        r = supcon_loss(g, contrast, tau)
        C = np.asarray(centers, dtype=np.float64)
        return LossResult(r.value, r.grad_g, np.zeros_like(np.asarray(f, dtype=np.float64)),
                          np.zeros_like(C), r.grad_contrast)
    if v == "multi_task":
        return multi_task_loss(g, f, contrast, centers, y, tau, config.multi_task_weight, tc)
    pri = priors if config.rebalanced else None
    if config.rebalanced and priors is None:
        raise ValueError("rebalanced loss needs class priors")
    return paco_loss(g, f, contrast, centers, y, config.alpha, tau, priors=pri,
                     tau_center=tc, scaled=config.scaled)


@dataclass
class BatchLoss:
    value: float
    per_sample: np.ndarray
    grad_g: np.ndarray
    grad_f: np.ndarray
    grad_centers: np.ndarray
    grad_keys: np.ndarray


def batch_loss(config: LossConfig, G, F, keys, key_labels, labels, exclude, centers,
               priors=None, positive=None) -> BatchLoss:
    """Mean loss over a batch of anchors, vectorized.

    G, F: (B, d) / (B, d_f) anchor outputs of the transform and the encoder.
    keys: (M, d) every candidate sample embedding; ``exclude`` (B, M) marks
    entries that are not in A(i) (the anchor's own view-1 copy).
    ``positive`` overrides the same-label positive mask (used by info_nce).
    """
    G = np.asarray(G, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    C = np.asarray(centers, dtype=np.float64)
    labels = np.asarray(labels)
    B, M, n = G.shape[0], keys.shape[0], C.shape[0]
    tau, tc, alpha = config.tau, config.tau_center, config.alpha
    v = config.variant

    if positive is None:
        positive = (np.asarray(key_labels)[None, :] == labels[:, None]) & ~exclude
    pos = positive.astype(np.float64)
    K = pos.sum(axis=1)
    onehot = np.zeros((B, n))
    onehot[np.arange(B), labels] = 1.0

    S = np.where(exclude, -np.inf, G @ keys.T / tau) if M else np.zeros((B, 0))
    L = F @ C.T / tc
    if config.rebalanced and v != "cross_entropy" and v != "multi_task":
        if priors is None:
            raise ValueError("rebalanced loss needs class priors")
        L = L + _log_prior(priors, n)[None, :]

    def nll(logits, w, scale):
        lse = logsumexp(logits, axis=1)
        lse = np.where(np.isfinite(lse), lse, 0.0)
        p = np.exp(logits - lse[:, None])
        terms = np.where(w > 0, lse[:, None] - np.where(np.isfinite(logits), logits, 0.0), 0.0)
        vals = scale * np.sum(w * terms, axis=1)
        d = scale[:, None] * (w.sum(axis=1, keepdims=True) * p - w)
        return vals, d

    dS = np.zeros((B, M))
    dL = np.zeros((B, n))
    if v == "cross_entropy":
        vals, dL = nll(L, onehot, np.ones(B))
    elif v in ("supcon", "info_nce"):
        has = K > 0
        vals, dS = nll(S, pos, np.where(has, 1.0 / np.maximum(K, 1.0), 0.0))
    elif v == "multi_task":
        has = K > 0
        v_ce, dL = nll(L, onehot, np.ones(B))
        v_sc, dS = nll(S, pos, config.multi_task_weight * np.where(has, 1.0 / np.maximum(K, 1.0), 0.0))
        vals = v_ce + v_sc
    else:
        scale = 1.0 / (1.0 + alpha * K) if config.scaled else np.ones(B)
        vals, d = nll(np.concatenate([S, L], axis=1), np.concatenate([alpha * pos, onehot], axis=1), scale)
        dS, dL = d[:, :M], d[:, M:]

    dS /= B
    dL /= B
    return BatchLoss(
        value=float(vals.mean()),
        per_sample=vals,
        grad_g=dS @ keys / tau,
        grad_f=dL @ C / tc,
        grad_centers=dL.T @ F / tc,
        grad_keys=dS.T @ G / tau,
    )
