# %% [markdown]
# # A small stand-in for the MNIST grid
#
# Real MNIST is a 50 MB download.  scikit-learn ships 1,797 handwritten
# digits at 8x8 resolution, which is enough to exercise the whole pipeline:
# write them as IDX files, point the harness at them, and run the
# activation x batch-norm x learning-rate grid.
#
# Run from the repository root:  python notebooks/04_digits_proxy_grid.py

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

from talunet import datasets
from talunet.cli import main

# %% [markdown]
# Upscale 8x8 -> 24x24 by pixel replication and pad to 28x28, so the
# network sees MNIST-shaped input (and the 28 -> 14 -> 7 -> 3 pooling path).

# %%
digits = load_digits()
images = np.kron(digits.images, np.ones((3, 3)))
images = np.pad(images, ((0, 0), (2, 2), (2, 2)))
images = np.round(images * (255 / 16)).astype(np.uint8)
labels = digits.target.astype(np.uint8)

order = np.random.default_rng(0).permutation(len(labels))
train_idx, test_idx = order[:1500], order[1500:]

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="digits-"))
data = root / "data" / "mnist"
data.mkdir(parents=True, exist_ok=True)
datasets.write_idx(data / "train-images-idx3-ubyte", images[train_idx])
datasets.write_idx(data / "train-labels-idx1-ubyte", labels[train_idx])
datasets.write_idx(data / "t10k-images-idx3-ubyte", images[test_idx])
datasets.write_idx(data / "t10k-labels-idx1-ubyte", labels[test_idx])
print("wrote", data, "train", len(train_idx), "test", len(test_idx))

# %% [markdown]
# The `mnist-desk` preset (batch 128, 5 epochs, float32) with the subset
# switched off, since the whole set is already small.  `strict_data=false`
# lets the loader accept split sizes other than 60000/10000.

# %%
code = main([
    "compare", "--config", "mnist-desk", "--subset", "0", "--set", "strict_data=false",
    "--data-dir", str(data), "--out", str(root / "runs"), "--deterministic",
    "--activations", "talu,relu", "--bn-grid", "false,true", "--lrs", "0.01,0.1", "--name", "digits-grid",
])
print("exit code", code)

# %% [markdown]
# `runs/digits-grid.md` holds the table; each cell's learning curves are in
# `runs/digits-grid/<cell>/metrics.csv` (see 05_plot_curves.py).
