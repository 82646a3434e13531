# %% [markdown]
# # TaLU next to the other activations
#
# TaLU is the identity on positives and `alpha * tanh(x)` elsewhere, with a
# trainable `alpha` starting at 1.  This walk-through evaluates it, its
# derivative, and the nine comparison activations on a few points.

# %%
import numpy as np

from talunet import activations as act

x = np.array([-20.0, -1.0, 0.0, 1.0, 20.0])
print("talu ", act.talu_forward(x, 1.0))
print("relu ", act.relu_forward(x))

# %% [markdown]
# Negative inputs saturate at `-alpha` instead of being zeroed, so a unit
# that goes negative still passes gradient back.  At exactly zero the tanh
# branch applies, so the slope there is `alpha` rather than 1.

# %%
g = act.talu_backward(x, 1.0, np.ones_like(x))
print("d_input", g.d_input)
print("d_alpha", g.d_alpha)

# %% [markdown]
# Setting `alpha = 0` collapses TaLU to ReLU, bit for bit.

# %%
rng = np.random.default_rng(0)
sample = rng.normal(scale=5, size=100_000)
same = act.talu_forward(sample, 0.0).tobytes() == act.relu_forward(sample).tobytes()
print("alpha=0 identical to relu:", same)

# %% [markdown]
# The full roster on a grid, plus each kind's trainable parameter count.

# %%
grid = np.linspace(-3, 3, 7)
print(f"{'kind':<10}{'params':>7}  " + " ".join(f"{v:>7.1f}" for v in grid))
for kind in act.KINDS:
    spec = act.ActivationSpec(kind)
    values = act.forward(grid, spec)
    print(f"{spec.display_name:<10}{spec.param_count:>7}  " + " ".join(f"{v:>7.3f}" for v in values))

# %% [markdown]
# Larger `alpha` deepens the negative floor; the positive side never moves.

# %%
for alpha in (0.25, 1.0, 2.0):
    print(alpha, act.talu_forward(np.array([-5.0, -0.5, 0.5, 5.0]), alpha).round(4))
