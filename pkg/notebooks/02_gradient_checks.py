# %% [markdown]
# # Checking the tape against finite differences
#
# Every op records a backward closure.  The check perturbs one input
# coordinate at a time by +-1e-5 in float64 and compares the slope with the
# tape's answer.

# %%
import numpy as np

from talunet import gradcheck
from talunet.activations import ActivationSpec, activate
from talunet.tensor import add, conv2d, flatten, matmul, maxpool2d

for result in gradcheck.run(["all"], seed=0):
    print(result.line())

# %% [markdown]
# The same helper works on any composition.  Here: conv, TaLU with its
# trainable scalar, pooling, a residual add, and a dense head.

# %%
rng = np.random.default_rng(1)
spec = ActivationSpec("talu")


def net(x, kernel, alpha, dense):
    h = activate(conv2d(x, kernel), spec, alpha)
    h = maxpool2d(h)
    h = add(h, h)
    return matmul(flatten(h), dense)


inputs = [rng.normal(size=(2, 6, 6, 2)), rng.normal(size=(3, 3, 2, 4)) * 0.5, np.asarray(0.8), rng.normal(size=(36, 3))]
err, points = gradcheck.check_function(net, inputs, rng, points=150)
print(f"composed graph: max relative error {err:.2e} over {points} coordinates")

# %% [markdown]
# The CLI runs the same suites:
#
#     talunet gradcheck all
#     talunet gradcheck talu --seed 3
#     talunet gradcheck gelu --tol 1e-12   # impossible tolerance, exits 4
