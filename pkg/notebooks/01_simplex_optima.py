# %% [markdown]
# # Optimal softmax distributions
#
# The simplex solver minimizes a weighted negative log-likelihood over the
# probability simplex. It is never told the closed forms; we compare after.

# %%
import numpy as np

from gpaco import theory

# %%
for k in (1, 2, 5, 8, 50):
    sol = theory.optimal_supcon_distribution(k, 4 * k)
    print(f"K={k:>2}  positive mass {sol.probabilities[:k].mean():.6f}  1/K={1 / k:.6f}  "
          f"loss {sol.achieved_loss:.6f}  log K={np.log(k):.6f}  iters {sol.iterations}")

# %% [markdown]
# With a class center in the candidate set, the center takes 1/(1+aK) and each
# positive a/(1+aK). Small a leaves most mass on the center.

# %%
for alpha in (0.01, 0.05, 0.2):
    for k in (2, 8, 50):
        sol = theory.optimal_paco_distribution(alpha, k, 4 * k)
        center, pair = theory.paco_optimum(alpha, k)
        print(f"a={alpha:<5} K={k:>2}  center {sol.probabilities[0]:.6f} ({center:.6f})  "
              f"pair {sol.probabilities[1]:.6f} ({pair:.6f})")

# %%
# queue of 8192 keys, a class with frequency 0.001
k_star = 8192 * 0.001
print(theory.paco_optimum(0.05, k_star))
