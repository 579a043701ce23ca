# %% [markdown]
# # Tuple losses and their gradients
#
# All losses use squared Euclidean distance D and a hinge. The center
# anchored variants treat the anchor as a constant, so only the positive and
# negatives receive gradient.

# %%
import numpy as np

from densemetric.losses import daql_loss, datl_loss, quadruplet_loss, triplet_loss

c = np.array([0.0, 0.0])
p = np.array([1.0, 0.0])
n = np.array([1.0, 0.0])
print(datl_loss(c, p, n, alpha=0.5))

# %% [markdown]
# The quadruplet form adds a second hinge against a negative from a third
# class with a weaker margin.

# %%
n2 = np.array([0.0, 1.0])
r = daql_loss(c, p, np.array([np.sqrt(0.9), 0.0]), n2, alpha1=0.2, alpha2=0.1)
print("value", r.value, "(0.3 from the first hinge, 0.1 from the second)")

# %% [markdown]
# A central finite difference check on a random instance.

# %%
rng = np.random.default_rng(1)
a, p, n, m = rng.standard_normal((4, 6))


def numeric(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


r = quadruplet_loss(a, p, n, m, 2.0, 1.0)
g_num = numeric(lambda x: quadruplet_loss(x, p, n, m, 2.0, 1.0).value, a)
print("anchor grad error", np.abs(g_num - r.grad_wrt_anchor).max())
g_num = numeric(lambda x: triplet_loss(a, x, n, 2.0).value, p)
print("positive grad error", np.abs(g_num - triplet_loss(a, p, n, 2.0).grad_wrt_positive).max())
