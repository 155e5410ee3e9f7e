# %% [markdown]
# # One softmax, several losses
#
# Every variant is a weighted negative log-likelihood under one softmax, so
# the gradient w.r.t. the logits is always s * (sum(w) * p - w).

# %%
import numpy as np

from gpaco.contrast import ContrastSet, class_priors_from_counts
from gpaco.losses import (
    LossConfig,
    cross_entropy,
    decompose_paco,
    evaluate_loss,
    paco_loss,
    supcon_loss,
)

rng = np.random.default_rng(0)
d, n, m = 16, 10, 64
y = 3
Z = rng.standard_normal((m, d))
Z /= np.linalg.norm(Z, axis=1, keepdims=True)
labels = rng.integers(0, n, m)
labels[:5] = y
cs = ContrastSet(Z, labels, labels == y)
g = Z[0] + 0.1 * rng.standard_normal(d)
g /= np.linalg.norm(g)
f = 0.3 * rng.standard_normal(d)
C = 0.3 * rng.standard_normal((n, d))

# %%
print("cross-entropy", cross_entropy(f, C, y, 0.2).value)
print("supcon       ", supcon_loss(g, cs, 0.2).value)
print("paco         ", paco_loss(g, f, cs, C, y, 0.05, 0.2).value)

# %%
# the decomposition is exact: residual at round-off level
dec = decompose_paco(g, f, cs, C, y, 0.05, 0.2)
print(dec)

# %%
# rebalancing adds log q(y) to every center logit
pri = class_priors_from_counts([500, 300, 180, 110, 66, 40, 24, 14, 9, 5])
for variant in ("paco", "gpaco"):
    cfg = LossConfig(variant=variant, center_rebalance=True)
    print(variant, evaluate_loss(cfg, g, f, cs, C, y, pri).value)

# %%
# a finite-difference spot check on grad_f
cfg = LossConfig(variant="gpaco", center_rebalance=True)
r = evaluate_loss(cfg, g, f, cs, C, y, pri)
h, j = 1e-5, 2
e = np.zeros(d)
e[j] = h
fd = (evaluate_loss(cfg, g, f + e, cs, C, y, pri).value - evaluate_loss(cfg, g, f - e, cs, C, y, pri).value) / (2 * h)
print(r.grad_f[j], fd)
