# %% [markdown]
# # Density-shifted class centers
#
# A class centroid is dragged toward any clump of corrupted samples. Starting
# from the centroid, repeated mean-shift steps over the nearest fraction of
# the class walk the estimate back toward the dense core.

# %%
import numpy as np

from densemetric.density_center import EnclosureSpec, ShiftConfig, shift_center

rng = np.random.default_rng(0)
dim = 8
core = rng.standard_normal((4500, dim))
direction = rng.standard_normal(dim)
direction /= np.linalg.norm(direction)
outliers = rng.standard_normal((500, dim)) + 10 * direction
points = np.vstack([core, outliers])

# %% [markdown]
# The true core mean is the origin. Ten percent of the points sit ten sigma
# away along one direction, so the centroid is off by about one sigma.

# %%
c = shift_center(0, points, ShiftConfig())
print("centroid error :", np.linalg.norm(c.centroid))
print("shifted error  :", np.linalg.norm(c.center))
print("iterations     :", c.iterations_run, "converged:", c.converged)
print("shift norms    :", np.round(c.shift_norms, 4))

# %% [markdown]
# The first step makes the biggest move: the enclosure around the centroid
# already excludes the outlier clump. Later steps only refine the mode.
#
# The enclosure size matters. Taking the whole class (fraction 1.0) makes
# every step return the centroid again.

# %%
for fraction in (0.05, 0.17, 0.4, 0.8, 1.0):
    cfg = ShiftConfig(enclosure=EnclosureSpec(fraction=fraction))
    err = np.linalg.norm(shift_center(0, points, cfg).center)
    print(f"fraction {fraction:4.2f} -> error {err:.3f}")

# %% [markdown]
# With small samples the nearest-fraction window contains few points, so the
# mode estimate is itself noisy. At 100 points the 17% window holds 17
# points, and the estimate is often no better than the centroid.

# %%
small = np.vstack([rng.standard_normal((90, 2)), rng.standard_normal((10, 2)) + [10, 0]])
c = shift_center(0, small)
print("100 points, centroid error", np.linalg.norm(c.centroid), "shifted", np.linalg.norm(c.center))
