# %% [markdown]
# # Learning curves from metrics.csv
#
# Every run directory holds `metrics.csv` with one train and one test row
# per epoch:
#
#     epoch,split,loss,accuracy,diverged
#
# Plotting is left to whatever tool you like; this script uses matplotlib.
# Pass the directories to compare, e.g.
#
#     python notebooks/05_plot_curves.py runs/digits-grid/*bn-lr0.01*

# %%
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

run_dirs = [Path(p) for p in sys.argv[1:]] or sorted(Path("runs").glob("**/metrics.csv"))
run_dirs = [p.parent if p.name == "metrics.csv" else p for p in run_dirs]
if not run_dirs:
    raise SystemExit("no run directories given and none found under runs/")

fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(11, 4))
for run in run_dirs:
    with open(run / "metrics.csv", newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["split"] == "test"]
    epochs = [int(r["epoch"]) for r in rows]
    ax_acc.plot(epochs, [float(r["accuracy"]) for r in rows], marker="o", label=run.name)
    # diverged epochs carry NaN loss and simply leave a gap
    ax_loss.plot(epochs, [float(r["loss"]) for r in rows], marker="o", label=run.name)

ax_acc.set(xlabel="epoch", ylabel="test accuracy (%)")
ax_loss.set(xlabel="epoch", ylabel="test loss")
ax_acc.legend(fontsize=7)
fig.tight_layout()
fig.savefig("curves.png", dpi=120)
print("wrote curves.png")
