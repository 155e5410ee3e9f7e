# %% [markdown]
# # Pixel sampling as an auxiliary loss
#
# Sampled pixels of a feature map play the role of samples: raw channels
# are scored against the centers, a three-layer MLP of them is contrasted.

# %%
import numpy as np

from gpaco.losses import LossConfig
from gpaco.synth.pixels import pixel_auxiliary_loss, pixel_transform, sample_positions, synthetic_feature_map

rng = np.random.default_rng(0)
print(len(sample_positions(128, 128, 8192, rng)), len(sample_positions(64, 64, 8192, rng)))

# %%
fm, labels = synthetic_feature_map(32, 32, 8, 4, rng)
mlp = pixel_transform(8, (16, 16, 8))
params = mlp.init(rng)
centers = 0.1 * rng.standard_normal((4, 8))
cfg = LossConfig(variant="gpaco", alpha=0.05, tau=0.2)

# %%
# plain SGD on the transform and centers; the feature map stays fixed
for step in range(200):
    out = pixel_auxiliary_loss(fm, labels, 256, rng, mlp, params, centers, cfg)
    params -= 0.1 * out.grad_params
    centers -= 0.1 * out.grad_centers
    if step % 40 == 0:
        print(step, round(out.value, 4))

# %%
pred = np.argmax(fm.reshape(-1, 8) @ centers.T, axis=1)
print("pixel accuracy", (pred == labels.ravel()).mean())
