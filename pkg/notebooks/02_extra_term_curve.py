# %% [markdown]
# # The extra term
#
# PaCo = cross-entropy + a * SupCon + an extra term in the center mass p.
# The extra term is convex in p with its minimum at 1/(1 + a K*).

# %%
import numpy as np

from gpaco import theory

alpha, k_star = 0.05, 8.192
curve = theory.l_extra_curve(alpha, k_star, 999)
print("grid argmin    ", theory.curve_argmin(curve))
print("analytic argmin", theory.l_extra_argmin(alpha, k_star))
print("min second difference", np.diff(curve[:, 1], 2).min())

# %%
# crude text plot
for p, v in curve[::111]:
    print(f"{p:.3f} {v:7.3f} " + "#" * int(8 * v))

# %% [markdown]
# Holding each pair at its optimum, the SupCon value forced by a given center
# mass p falls monotonically and crosses zero where the sample block holds
# exactly K* optimal pairs.

# %%
eq8 = theory.eq8_curve(alpha, k_star, 9)
print(eq8)
print("root", 1 - alpha / (1 + alpha * k_star))

# %%
theory.write_curve_csv(curve, "l_extra_curve.csv")
