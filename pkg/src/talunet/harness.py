"""Experiment runner behind the ``talunet`` command.

A run is described by a flat ``key = value`` config.  Values come from the
defaults, then an optional config file or named preset, then command-line
flags.  Each trained cell writes ``<out>/<run>/metrics.csv`` and
``<out>/<run>/config.resolved`` and appends one row to ``<out>/summary.csv``.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets
from .activations import KINDS, ActivationSpec
from .errors import UsageError
from .models import INPUT_SHAPES, ModelConfig, build_model
from .tensor import default_dtype, deterministic
from .training import RunRecord, TrainConfig, chance_accuracy, train, write_metrics

DEFAULTS = {
    "name": "",
    "arch": "simple",
    "dataset": "mnist",
    "activation": "talu",
    "bn": False,
    "lr": 0.01,
    "momentum": 0.9,
    "epochs": 25,
    "batch_size": 512,
    "seed": 0,
    "subset": 0,
    "test_subset": 0,
    "leaky_slope": 0.3,
    "alpha": 1.0,
    "divergence_cap": 1e4,
    "bn_epsilon": 1e-3,
    "bn_momentum": 0.99,
    "bn_warmup": True,
    "dtype": "float64",
    "deterministic": False,
    "data_dir": "data",
    "strict_data": True,
    "out": "runs",
    "fail_on_diverge": False,
    "activations": "",
    "bn_grid": "",
    "lrs": "",
    "jobs": 1,
}

PRESETS = {
    "mnist-desk": {
        "dataset": "mnist", "arch": "simple", "subset": 600, "epochs": 5,
        "batch_size": 128, "lr": 0.01, "bn": True, "dtype": "float32",
    },
    "cifar-desk": {
        "dataset": "cifar10", "arch": "simple", "subset": 500, "epochs": 10,
        "batch_size": 128, "lr": 0.01, "bn": True, "dtype": "float32",
    },
    # full-scale settings of the comparison tables
    "full": {"epochs": 25, "batch_size": 512, "subset": 0, "dtype": "float32"},
    "full-curves": {"epochs": 50, "batch_size": 512, "lr": 0.001, "subset": 0, "dtype": "float32"},
}

SUMMARY_FIELDS = (
    "run", "arch", "dataset", "activation", "bn", "lr", "epochs", "batch_size", "seed", "subset",
    "final_train_loss", "final_train_acc", "final_test_loss", "final_test_acc", "diverged", "wall_time_s",
)

def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def coerce(key: str, value):
    """Convert a string setting to the type of its default."""
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(DEFAULTS))}")
    default = DEFAULTS[key]
    if not isinstance(value, str):
        return value
    try:
        if isinstance(default, bool):
            return _parse_bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc
    return value.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    settings = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        settings[key] = coerce(key, value)
    return settings


def load_config(source: str | os.PathLike) -> dict:
    """Settings from a preset name or a ``key = value`` file."""
    if str(source) in PRESETS:
        return dict(PRESETS[str(source)])
    path = Path(source)
    if not path.exists():
        raise UsageError(f"config {source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    return parse_config_text(path.read_text(), str(path))


def resolve(*layers: dict) -> dict:
    """Merge setting layers over the defaults; later layers win."""
    cfg = dict(DEFAULTS)
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            cfg[key] = coerce(key, value)
    if cfg["arch"] not in ("simple", "residual"):
        raise UsageError(f"arch must be simple or residual, got {cfg['arch']!r}")
    if cfg["dataset"] not in INPUT_SHAPES:
        raise UsageError(f"dataset must be mnist or cifar10, got {cfg['dataset']!r}")
    if cfg["activation"] not in KINDS:
        raise UsageError(f"unknown activation {cfg['activation']!r}; choose from {', '.join(KINDS)}")
    if not 0.0 <= cfg["bn_momentum"] < 1.0:
        raise UsageError(f"bn_momentum must lie in [0, 1), got {cfg['bn_momentum']}")
    if not cfg["bn_epsilon"] > 0.0:
        raise UsageError(f"bn_epsilon must be positive, got {cfg['bn_epsilon']}")
    if cfg["dtype"] not in ("float32", "float64"):
        raise UsageError(f"dtype must be float32 or float64, got {cfg['dtype']!r}")
    return cfg


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def auto_name(cfg: dict) -> str:
    bn = "bn" if cfg["bn"] else "nobn"
    return f"{cfg['arch']}-{cfg['dataset']}-{cfg['activation']}-{bn}-lr{cfg['lr']:g}-s{cfg['seed']}"


def run_name(cfg: dict) -> str:
    return cfg["name"] or auto_name(cfg)


def model_config(cfg: dict) -> ModelConfig:
    spec = ActivationSpec(cfg["activation"], alpha=cfg["alpha"], slope=cfg["leaky_slope"])
    return ModelConfig(
        architecture=cfg["arch"],
        activation=spec,
        use_batchnorm=cfg["bn"],
        input_shape=INPUT_SHAPES[cfg["dataset"]],
        seed=cfg["seed"],
        bn_epsilon=cfg["bn_epsilon"],
        bn_momentum=cfg["bn_momentum"],
        bn_warmup=cfg["bn_warmup"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["lr"],
        momentum=cfg["momentum"],
        seed=cfg["seed"],
        divergence_loss_cap=cfg["divergence_cap"],
    )


def data_directory(cfg: dict) -> Path:
    root = Path(os.environ.get("TALUNET_DATA", cfg["data_dir"]))
    nested = root / cfg["dataset"]
    return nested if nested.is_dir() else root


def load_data(cfg: dict):
    """Load train/test splits and apply the class-balanced subsets."""
    directory = data_directory(cfg)
    if cfg["dataset"] == "mnist":
        train_set, test_set = datasets.load_mnist(directory, strict=cfg["strict_data"])
    else:
        train_set, test_set = datasets.load_cifar10(directory)
    if cfg["subset"]:
        train_set = datasets.subset(train_set, cfg["subset"], cfg["seed"])
    if cfg["test_subset"]:
        test_set = datasets.subset(test_set, cfg["test_subset"], cfg["seed"])
    return train_set, test_set


@dataclass
class CellResult:
    cfg: dict
    records: list[RunRecord] = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None

    @property
    def diverged(self) -> bool:
        return any(r.diverged for r in self.records)

    def final(self, split: str) -> RunRecord | None:
        rows = [r for r in self.records if r.split == split]
        return rows[-1] if rows else None


def run_cell(cfg: dict, data=None, log=None) -> CellResult:
    """Train one configuration and write its run directory and summary row."""
    if data is None:
        data = load_data(cfg)
    start = time.perf_counter()
    with default_dtype(np.float32 if cfg["dtype"] == "float32" else np.float64):
        if cfg["deterministic"]:
            with deterministic():
                records = _train(cfg, data, log)
        else:
            records = _train(cfg, data, log)
    result = CellResult(cfg, records, time.perf_counter() - start)
    write_run(result)
    return result


def _train(cfg, data, log):
    model = build_model(model_config(cfg))
    return train(model, data, train_config(cfg), log=log)


def write_run(result: CellResult) -> Path:
    cfg = result.cfg
    out = Path(cfg["out"])
    run_dir = out / run_name(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(run_dir / "metrics.csv", result.records)
    (run_dir / "config.resolved").write_text(format_config(cfg))
    append_summary(out / "summary.csv", result)
    return run_dir


def summary_row(result: CellResult) -> dict:
    cfg = result.cfg
    tr, te = result.final("train"), result.final("test")

    def num(value, digits):
        return "" if value is None or math.isnan(value) else f"{value:.{digits}f}"

    return {
        "run": run_name(cfg),
        "arch": cfg["arch"],
        "dataset": cfg["dataset"],
        "activation": cfg["activation"],
        "bn": "true" if cfg["bn"] else "false",
        "lr": f"{cfg['lr']:g}",
        "epochs": cfg["epochs"],
        "batch_size": cfg["batch_size"],
        "seed": cfg["seed"],
        "subset": cfg["subset"],
        "final_train_loss": num(tr and tr.loss, 6),
        "final_train_acc": num(tr and tr.accuracy, 2),
        "final_test_loss": num(te and te.loss, 6),
        "final_test_acc": num(te and te.accuracy, 2),
        "diverged": "true" if result.diverged else "false",
        "wall_time_s": f"{result.wall_time:.1f}",
    }


def append_summary(path: Path, result: CellResult) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow(summary_row(result))


def _split_list(text: str, convert):
    return [convert(part.strip()) for part in str(text).split(",") if part.strip()]


def grid_cells(cfg: dict) -> list[dict]:
    """Expand the ``activations`` x ``bn_grid`` x ``lrs`` grid into cell configs.

    Empty grid keys fall back to the single ``activation`` / ``bn`` / ``lr``.
    """
    acts = _split_list(cfg["activations"], str) or [cfg["activation"]]
    bns = _split_list(cfg["bn_grid"], _parse_bool) or [cfg["bn"]]
    lrs = _split_list(cfg["lrs"], float) or [cfg["lr"]]
    for a in acts:
        if a not in KINDS:
            raise UsageError(f"unknown activation {a!r}; choose from {', '.join(KINDS)}")
    cells = []
    for bn, a, lr in itertools.product(bns, acts, lrs):
        cell = dict(cfg, activation=a, bn=bn, lr=lr)
        # a named grid keeps its cells together under <out>/<name>/
        cell["name"] = f"{cfg['name']}/{auto_name(cell)}" if cfg["name"] else ""
        cells.append(cell)
    return cells


def _run_isolated(cfg):
    try:
        return run_cell(cfg)
    except Exception as exc:  # reported in the table, grid continues
        return CellResult(cfg, error=f"{type(exc).__name__}: {exc}")


def run_grid(cfg: dict, log=None) -> list[CellResult]:
    cells = grid_cells(cfg)
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            return list(pool.map(_run_isolated, cells))
    data = load_data(cells[0])
    results = []
    for cell in cells:
        if log:
            log(f"== {run_name(cell)}")
        try:
            results.append(run_cell(cell, data, log))
        except Exception as exc:  # annotate the row, keep going
            results.append(CellResult(cell, error=f"{type(exc).__name__}: {exc}"))
    return results


@dataclass
class TableRow:
    activation: str
    bn: bool
    lr: float
    train: str
    test: str
    test_value: float | None
    diverged: bool
    wall_time: float
    best: bool = False
    error: str | None = None


def result_table(results: list[CellResult]) -> list[TableRow]:
    """One row per cell; diverged cells read "Exploding" with chance accuracy.

    Within each (batch-norm group, learning rate) column, the highest
    non-diverged test accuracy is flagged ``best``.
    """
    rows = []
    for res in results:
        cfg = res.cfg
        tr, te = res.final("train"), res.final("test")
        if res.error:
            row = TableRow(cfg["activation"], cfg["bn"], cfg["lr"], "error", "error", None, False, res.wall_time, error=res.error)
        elif res.diverged:
            acc = te.accuracy if te else chance_accuracy([])
            row = TableRow(cfg["activation"], cfg["bn"], cfg["lr"], "Exploding", f"{acc:.2f}", acc, True, res.wall_time)
        else:
            row = TableRow(cfg["activation"], cfg["bn"], cfg["lr"], f"{tr.accuracy:.2f}", f"{te.accuracy:.2f}",
                           te.accuracy, False, res.wall_time)
        rows.append(row)
    for key in {(r.bn, r.lr) for r in rows}:
        column = [r for r in rows if (r.bn, r.lr) == key and not r.diverged and r.test_value is not None]
        if column:
            max(column, key=lambda r: r.test_value).best = True
    return rows


def _method(row: TableRow) -> str:
    name = ActivationSpec(row.activation).display_name
    return name + ("+BN" if row.bn else "")


def render_markdown(rows: list[TableRow]) -> str:
    """Methods down the side, a Training/Testing pair per learning rate."""
    lrs = sorted({r.lr for r in rows})
    methods = []
    for r in rows:
        if (r.activation, r.bn) not in methods:
            methods.append((r.activation, r.bn))
    methods.sort(key=lambda m: m[1])
    lookup = {(r.activation, r.bn, r.lr): r for r in rows}
    header = "| Method | " + " | ".join(f"{lr:g} Training | {lr:g} Testing" for lr in lrs) + " |"
    rule = "|---|" + "---|---|" * len(lrs)
    lines = [header, rule]
    for a, bn in methods:
        cells = []
        for lr in lrs:
            r = lookup.get((a, bn, lr))
            if r is None:
                cells += ["", ""]
                continue
            test = f"**{r.test}**" if r.best else r.test
            cells += [r.train, test]
        name = ActivationSpec(a).display_name + ("+BN" if bn else "")
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    notes = [f"- {_method(r)} lr={r.lr:g}: {r.error}" for r in rows if r.error]
    if notes:
        lines += ["", "Errors:"] + notes
    return "\n".join(lines) + "\n"


TABLE_FIELDS = ("method", "activation", "bn", "lr", "train", "test", "diverged", "best", "wall_time_s", "error")


def write_table(path_stem: Path, rows: list[TableRow]) -> tuple[Path, Path]:
    md, csv_path = path_stem.with_suffix(".md"), path_stem.with_suffix(".csv")
    md.write_text(render_markdown(rows))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({
                "method": _method(r), "activation": r.activation, "bn": "true" if r.bn else "false",
                "lr": f"{r.lr:g}", "train": r.train, "test": r.test,
                "diverged": "true" if r.diverged else "false", "best": "true" if r.best else "false",
                "wall_time_s": f"{r.wall_time:.1f}", "error": r.error or "",
            })
    return md, csv_path
