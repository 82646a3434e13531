"""``talunet`` command line: train, compare, gradcheck, summary.

Exit codes: 0 success, 1 usage error, 2 dataset error, 3 a run diverged
under ``--fail-on-diverge``, 4 a gradient check exceeded its tolerance.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import gradcheck, harness
from .activations import KINDS
from .errors import DataError, UsageError
from .models import build_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="preset name (mnist-desk, cifar-desk, full, full-curves) or key = value file")
    p.add_argument("--arch", choices=("simple", "residual"))
    p.add_argument("--dataset", choices=("mnist", "cifar10"))
    p.add_argument("--activation", choices=KINDS)
    p.add_argument("--lr", type=float)
    p.add_argument("--bn", action=argparse.BooleanOptionalAction, default=None, help="insert batch normalization")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--subset", type=int, help="training images per class (0 = full split)")
    p.add_argument("--out", help="output root (default runs)")
    p.add_argument("--data-dir", help="directory holding the dataset files")
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--deterministic", action="store_true", default=None, help="single-threaded BLAS")
    p.add_argument("--name", help="run directory name")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any other config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="talunet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one configuration")
    _run_options(p)
    p.add_argument("--fail-on-diverge", action="store_true", default=None)

    p = sub.add_parser("compare", help="run an activation x batch-norm x learning-rate grid")
    _run_options(p)
    p.add_argument("--activations", help="comma-separated kinds, or 'all'")
    p.add_argument("--bn-grid", help="comma-separated booleans, e.g. false,true")
    p.add_argument("--lrs", help="comma-separated learning rates")
    p.add_argument("--jobs", type=int, help="run cells in this many worker processes")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("component", nargs="?", default="all", help="activation kind, layer suite, or 'all'")
    p.add_argument("--tol", type=float, help="override every tolerance")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("summary", help="print layer / output shape / parameter table")
    _run_options(p)
    return parser


def _settings(args) -> dict:
    layers = []
    if getattr(args, "config", None):
        layers.append(harness.load_config(args.config))
    flags = {}
    for key in ("arch", "dataset", "activation", "lr", "bn", "epochs", "batch_size", "seed", "subset", "out",
                "data_dir", "dtype", "deterministic", "name", "fail_on_diverge", "activations", "bn_grid",
                "lrs", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = value
    if flags.get("activations") == "all":
        flags["activations"] = ",".join(KINDS)
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        flags[key.strip().replace("-", "_")] = value.strip()
    layers.append(flags)
    return harness.resolve(*layers)


def cmd_train(args) -> int:
    cfg = _settings(args)
    result = harness.run_cell(cfg, log=print)
    run_dir = Path(cfg["out"]) / harness.run_name(cfg)
    print(f"wrote {run_dir / 'metrics.csv'}")
    if result.diverged:
        print("run diverged (Exploding)")
        if cfg["fail_on_diverge"]:
            return EXIT_DIVERGED
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _settings(args)
    results = harness.run_grid(cfg, log=print)
    rows = harness.result_table(results)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg["name"] or f"compare-{cfg['arch']}-{cfg['dataset']}-s{cfg['seed']}"
    md, csv_path = harness.write_table(out / stem, rows)
    print(harness.render_markdown(rows), end="")
    print(f"wrote {md} and {csv_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    valid = gradcheck.components()
    if args.component != "all" and args.component not in valid:
        raise UsageError(f"unknown component {args.component!r}; choose from all, {', '.join(valid)}")
    results = gradcheck.run([args.component], seed=args.seed, tol=args.tol)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_GRADCHECK


def cmd_summary(args) -> int:
    cfg = _settings(args)
    model = build_model(harness.model_config(cfg))
    print(model.summary(connections=cfg["arch"] == "residual"))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "compare": cmd_compare, "gradcheck": cmd_gradcheck, "summary": cmd_summary}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"talunet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"talunet: dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
