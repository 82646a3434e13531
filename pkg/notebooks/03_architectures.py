# %% [markdown]
# # The two test networks
#
# A plain six-conv CNN and a seven-conv residual CNN.  In the residual one
# each conv's activation (and batch norm, if any) is folded into that
# conv's row, which is why Conv2D1 shows 896 + 1 = 897 parameters.

# %%
from talunet.models import REFERENCE_RESIDUAL_TOTAL, build_model, config_for

simple = build_model(config_for("cifar10", activation="talu"))
print(simple.summary())

# %%
residual = build_model(config_for("cifar10", architecture="residual", activation="talu"))
print(residual.summary(connections=True))

# %% [markdown]
# The per-layer rows add up to 4,252,114.  The commonly quoted footer for
# this layout is 73 higher, and no layer accounts for the difference.

# %%
total = residual.param_count()["total"]
print(f"rows sum to {total:,}; reference footer {REFERENCE_RESIDUAL_TOTAL:,}; gap {REFERENCE_RESIDUAL_TOTAL - total}")

# %% [markdown]
# Swapping activations only moves the scalar count (one per TaLU/PReLU
# layer); adding batch norm adds 4 numbers per channel, half of them
# non-trainable moving statistics.

# %%
for kind in ("talu", "relu", "prelu"):
    for bn in (False, True):
        counts = build_model(config_for("cifar10", activation=kind, use_batchnorm=bn)).param_count()
        print(f"{kind:<6} bn={bn!s:<5} {counts}")

# %% [markdown]
# MNIST input goes 28 -> 14 -> 7 -> 3 through the three poolings, so the
# flatten width is 3*3*128 = 1152.

# %%
mnist = build_model(config_for("mnist"))
print([row for row in mnist.summary_rows() if row[0] == "Flatten"])
