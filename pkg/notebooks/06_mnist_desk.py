# %% [markdown]
# # Desk-scale MNIST comparison
#
# Needs the four MNIST IDX files (see docs/data.md) under `data/mnist/` or
# `$TALUNET_DATA`.  The `mnist-desk` preset trains on 600 images per class
# for 5 epochs at batch 128 and evaluates on the full 10,000-image test set.
#
# On a single core each run takes several minutes, so this is a script to
# leave running rather than an interactive cell.

# %%
import statistics

from talunet import harness

base = harness.resolve(harness.load_config("mnist-desk"), {"deterministic": True, "out": "runs/mnist-desk"})
data = harness.load_data(base)
print(f"train {len(data[0])} images, test {len(data[1])} images")

# %% [markdown]
# TaLU against ReLU over three seeds, with batch norm at learning rate 0.01.

# %%
scores = {}
for kind in ("talu", "relu"):
    for seed in (0, 1, 2):
        cell = dict(base, activation=kind, seed=seed)
        split = data if seed == base["seed"] else harness.load_data(cell)
        result = harness.run_cell(cell, data=split, log=print)
        scores.setdefault(kind, []).append(result.final("test").accuracy)
for kind, accs in scores.items():
    print(f"{kind}: test accuracy per seed {accs}, median {statistics.median(accs):.2f}")

# %% [markdown]
# The learning-rate stress test: 0.1 without batch norm is expected to blow
# up (reported as "Exploding" at chance accuracy); with batch norm it trains.

# %%
results = harness.run_grid(dict(base, activations="talu", bn_grid="false,true", lrs="0.1", name="lr-stress"), log=print)
print(harness.render_markdown(harness.result_table(results)))
