# %% [markdown]
# # Queue and contrast sets

# %%
import numpy as np

from gpaco.contrast import (
    ContrastBatch,
    FeatureQueue,
    build_contrast_sets,
    class_priors_from_counts,
    expected_positives,
    momentum_update,
)

q = FeatureQueue(capacity=4, dim=2)
for start in (1, 3, 5):
    vals = np.array([start, start + 1], dtype=float)
    q.push(np.column_stack([vals, vals]), [0, 1])
print(q.snapshot()[0][:, 0])  # oldest first: pushes 3..6

# %%
rng = np.random.default_rng(0)
batch = ContrastBatch(rng.standard_normal((2, 2)), [0, 1], rng.standard_normal((2, 2)))
cs = build_contrast_sets(0, batch, q)
print(len(cs), "members,", cs.n_positive, "positives")

# %%
pri = class_priors_from_counts([100, 10, 1])
print([expected_positives(pri, 8192, k) for k in range(3)])

# %%
theta_q, theta_k = np.ones(3), np.zeros(3)
for _ in range(3):
    theta_k = momentum_update(theta_q, theta_k, 0.9)
print(theta_k)
