"""Numerical checks of the optimal softmax distributions of SupCon and PaCo.

The simplex solvers minimize ``-sum_j w_j log p_j`` over the probability
simplex with exponentiated-gradient (mirror descent) steps; they know nothing
about the closed forms they are compared against.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import l_extra, logsumexp, supcon_at_fixed_psup


@dataclass
class SimplexSolution:
    probabilities: np.ndarray
    achieved_loss: float
    iterations: int
    converged: bool
    kkt_violation: float = np.nan


def _kkt_violation(p, grad):
    # simplex KKT: grad_j >= lam everywhere, with equality on the support
    lam = float(p @ grad)
    comp = np.max(p * np.abs(grad - lam))
    dual = np.max(np.maximum(0.0, lam - grad))
    return max(comp, dual) / max(abs(lam), 1e-300)


def exponentiated_gradient(weights, step: float = 0.5, tol: float = 1e-11,
                           max_iter: int = 10_000) -> SimplexSolution:
    """Minimize ``-sum_j w_j log p_j`` over the simplex.

    Iterates in log space, ``log p <- log p - eta * grad`` followed by
    renormalization, with ``eta = step / max|grad|``. Stops once the relative
    KKT violation drops below ``tol``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be a non-negative, non-zero vector")
    logp = np.full(w.size, -np.log(w.size))
    support = w > 0
    it, viol = 0, np.inf
    for it in range(1, max_iter + 1):
        p = np.exp(logp)
        # zero-weight slots have zero gradient even once p underflows
        grad = np.zeros_like(w)
        grad[support] = -w[support] / p[support]
        viol = _kkt_violation(p, grad)
        if viol < tol:
            it -= 1
            break
        logp = logp - (step / np.max(np.abs(grad))) * grad
        logp -= logsumexp(logp)
    p = np.exp(logp)
    loss = float(-np.sum(w[support] * logp[support]))
    return SimplexSolution(p, loss, it, bool(viol < tol), float(viol))


def optimal_supcon_distribution(k_positives: int, m_total: int, tol: float = 1e-11,
                                max_iter: int = 10_000) -> SimplexSolution:
    """Softmax over ``m_total`` contrast slots, the first ``k_positives`` of
    which are positives, minimizing the SupCon objective."""
    if not 1 <= k_positives <= m_total:
        raise ValueError("need 1 <= k_positives <= m_total")
    w = np.zeros(m_total)
    w[:k_positives] = 1.0 / k_positives
    return exponentiated_gradient(w, tol=tol, max_iter=max_iter)


def optimal_paco_distribution(alpha: float, k_positives: int, m_total: int, tol: float = 1e-11,
                              max_iter: int = 10_000, include_center: bool = True) -> SimplexSolution:
    """Slot 0 is the own-class center (weight 1), slots 1..K the positives
    (weight alpha), the remaining sample slots negatives."""
    if not 1 <= k_positives <= m_total:
        raise ValueError("need 1 <= k_positives <= m_total")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    w = np.zeros(m_total)
    w[:k_positives] = alpha
    if include_center:
        w = np.concatenate([[1.0], w])
    return exponentiated_gradient(w, tol=tol, max_iter=max_iter)


def paco_optimum(alpha: float, k: float) -> tuple[float, float]:
    """Closed-form (center, pair) probabilities at the PaCo optimum."""
    return 1.0 / (1.0 + alpha * k), alpha / (1.0 + alpha * k)


def l_extra_argmin(alpha: float, k_star: float) -> float:
    if not alpha * k_star > 0:
        raise ValueError("alpha * k_star must be positive")
    return 1.0 / (1.0 + alpha * k_star)


def open_grid(points: int) -> np.ndarray:
    """``points`` equally spaced values strictly inside (0, 1)."""
    if points < 3:
        raise ValueError("need at least 3 grid points")
    return np.arange(1, points + 1) / (points + 1)


def l_extra_curve(alpha: float, k_star: float, grid_points: int) -> np.ndarray:
    """Rows (p_sup, L_extra(p_sup)) in ascending p_sup."""
    p = open_grid(grid_points)
    return np.column_stack([p, l_extra(p, alpha, k_star)])


def eq8_curve(alpha: float, k_star: float, grid_points: int) -> np.ndarray:
    """Rows (p, SupCon value forced at center mass p)."""
    p = open_grid(grid_points)
    return np.column_stack([p, supcon_at_fixed_psup(p, alpha, k_star)])


def curve_argmin(curve: np.ndarray) -> float:
    return float(curve[np.argmin(curve[:, 1]), 0])


def write_curve_csv(curve: np.ndarray, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p", "value"])
        for p, v in curve:
            writer.writerow([repr(float(p)), repr(float(v))])
    return path
