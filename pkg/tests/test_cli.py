import csv

import pytest

from talunet import harness
from talunet.cli import main
from talunet.errors import UsageError


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def tiny(tmp_path, mnist_dir, *extra):
    return [
        "--dataset", "mnist", "--data-dir", str(mnist_dir), "--set", "strict_data=false", "--epochs", "2",
        "--batch-size", "16", "--out", str(tmp_path / "runs"), "--deterministic", *extra,
    ]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- summary --------------------------------------------------------------

def test_summary_simple_cifar(capsys):
    code, out, _ = run(capsys, "summary", "--arch", "simple", "--dataset", "cifar10", "--activation", "talu")
    assert code == 0
    assert "Total params: 550,577" in out


def test_summary_residual_first_conv(capsys):
    code, out, _ = run(capsys, "summary", "--arch", "residual", "--dataset", "cifar10")
    row = next(line for line in out.splitlines() if line.startswith("Conv2D1"))
    assert row.split()[5] == "897"
    assert "Connected to" in out


def test_summary_mnist_first_shape(capsys):
    _, out, _ = run(capsys, "summary", "--dataset", "mnist")
    first = next(line for line in out.splitlines() if line.startswith("Conv2D"))
    assert "(None, 28, 28, 32)" in first


# -- gradcheck ------------------------------------------------------------

def test_gradcheck_talu(capsys):
    code, out, _ = run(capsys, "gradcheck", "talu")
    assert code == 0
    assert float(out.split("max_rel_err=")[1].split()[0]) < 1e-6


def test_gradcheck_all_covers_everything(capsys):
    code, out, _ = run(capsys, "gradcheck", "all")
    assert code == 0
    names = [line.split()[0] for line in out.splitlines()]
    for required in ("talu", "relu", "leakyrelu", "prelu", "elu", "selu", "gelu", "swish", "softplus", "softsign",
                     "conv2d", "batchnorm", "dense", "loss", "maxpool"):
        assert required in names


def test_gradcheck_impossible_tolerance(capsys):
    code, out, _ = run(capsys, "gradcheck", "gelu", "--tol", "1e-12")
    assert code != 0 and "FAIL" in out


def test_gradcheck_unknown_name(capsys):
    code, _, err = run(capsys, "gradcheck", "frelu")
    assert code == 1 and "frelu" in err


# -- usage errors ---------------------------------------------------------

def test_bad_config_key_lists_valid_keys(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    code, _, err = run(capsys, "train", "--config", str(cfg))
    assert code == 1
    assert "learning_rate" in err and "batch_size" in err


def test_bad_flag_value(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--activation", "sigmoid"])
    assert exc.value.code == 1


def test_missing_data_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--data-dir", str(tmp_path / "nowhere"), "--out", str(tmp_path / "r"))
    assert code == 2 and "dataset error" in err


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nlr = 0.1\nbn = yes\nepochs = 3  # trailing\n")
    parsed = harness.load_config(cfg)
    assert parsed == {"lr": 0.1, "bn": True, "epochs": 3}
    with pytest.raises(UsageError):
        harness.parse_config_text("just words\n")


def test_presets():
    desk = harness.resolve(harness.load_config("mnist-desk"))
    assert (desk["subset"], desk["epochs"], desk["batch_size"], desk["lr"], desk["bn"]) == (600, 5, 128, 0.01, True)
    cifar = harness.resolve(harness.load_config("cifar-desk"))
    assert (cifar["subset"], cifar["epochs"], cifar["batch_size"]) == (500, 10, 128)
    full = harness.resolve(harness.load_config("full"))
    assert (full["epochs"], full["batch_size"], full["momentum"]) == (25, 512, 0.9)


def test_batchnorm_keys_reach_the_layers():
    cfg = harness.resolve({"bn": True, "bn_momentum": "0.9", "bn_epsilon": "1e-5", "bn_warmup": "off"})
    model = harness.build_model(harness.model_config(cfg))
    states = [layer.state for layer in model.leaf_layers() if hasattr(layer, "state")]
    assert len(states) == 7
    assert all((s.momentum, s.epsilon, s.warmup) == (0.9, 1e-5, False) for s in states)
    with pytest.raises(UsageError):
        harness.resolve({"bn_momentum": "1.0"})
    with pytest.raises(UsageError):
        harness.resolve({"bn_epsilon": "0"})


# -- train / compare ------------------------------------------------------

def test_train_writes_metrics_and_config(capsys, tmp_path, mnist_dir):
    code, _, _ = run(capsys, "train", "--arch", "simple", "--activation", "talu", "--lr", "0.01", "--bn",
                     "--name", "one", *tiny(tmp_path, mnist_dir))
    assert code == 0
    run_dir = tmp_path / "runs" / "one"
    rows = read_csv(run_dir / "metrics.csv")
    assert len(rows) == 4
    assert list(rows[0]) == ["epoch", "split", "loss", "accuracy", "diverged"]
    summary = read_csv(tmp_path / "runs" / "summary.csv")
    assert len(summary) == 1 and summary[0]["run"] == "one"
    resolved = harness.load_config(run_dir / "config.resolved")
    assert resolved["bn"] is True and resolved["epochs"] == 2 and resolved["strict_data"] is False


def test_resolved_config_reproduces_run(capsys, tmp_path, mnist_dir):
    run(capsys, "train", "--name", "a", *tiny(tmp_path, mnist_dir))
    first = (tmp_path / "runs" / "a" / "metrics.csv").read_bytes()
    cfg = tmp_path / "runs" / "a" / "config.resolved"
    code, _, _ = run(capsys, "train", "--config", str(cfg), "--name", "b")
    assert code == 0
    assert (tmp_path / "runs" / "b" / "metrics.csv").read_bytes() == first
    assert len(read_csv(tmp_path / "runs" / "summary.csv")) == 2


def test_fail_on_diverge(capsys, tmp_path, mnist_dir):
    args = ["train", "--lr", "1000", "--name", "boom", *tiny(tmp_path, mnist_dir)]
    code, out, _ = run(capsys, *args)
    assert code == 0 and "Exploding" in out
    code, _, _ = run(capsys, *args, "--fail-on-diverge")
    assert code == 3
    rows = read_csv(tmp_path / "runs" / "boom" / "metrics.csv")
    assert all(r["diverged"] == "true" and r["loss"] == "nan" for r in rows)


def test_compare_table(capsys, tmp_path, mnist_dir):
    code, out, _ = run(capsys, "compare", "--activations", "talu,relu", "--bn-grid", "false,true", "--lrs", "1000",
                       "--name", "grid", *tiny(tmp_path, mnist_dir))
    assert code == 0
    rows = read_csv(tmp_path / "runs" / "grid.csv")
    assert len(rows) == 4
    assert {(r["activation"], r["bn"]) for r in rows} == {("talu", "false"), ("relu", "false"), ("talu", "true"), ("relu", "true")}
    assert len(list((tmp_path / "runs" / "grid").glob("*/metrics.csv"))) == 4
    exploded = [r for r in rows if r["diverged"] == "true"]
    assert exploded and all(r["train"] == "Exploding" for r in exploded)
    assert "Exploding" in (tmp_path / "runs" / "grid.md").read_text()


def test_compare_one_cell_equals_train(capsys, tmp_path, mnist_dir):
    run(capsys, "train", "--name", "solo", *tiny(tmp_path, mnist_dir))
    run(capsys, "compare", "--name", "grid", *tiny(tmp_path, mnist_dir))
    runs = tmp_path / "runs"
    cells = list((runs / "grid").glob("*/metrics.csv"))
    assert len(cells) == 1
    assert cells[0].read_bytes() == (runs / "solo" / "metrics.csv").read_bytes()


def test_best_marker_per_column():
    def cell(act, bn, lr, acc, diverged=False):
        from talunet.training import RunRecord
        cfg = dict(harness.DEFAULTS, activation=act, bn=bn, lr=lr)
        recs = [RunRecord(1, "train", 0.1, acc, diverged), RunRecord(1, "test", 0.1, acc, diverged)]
        return harness.CellResult(cfg, recs)

    rows = harness.result_table([
        cell("talu", False, 0.01, 91.0), cell("relu", False, 0.01, 93.0),
        cell("talu", False, 0.1, 10.0, True), cell("relu", False, 0.1, 50.0),
    ])
    best = {(r.activation, r.lr) for r in rows if r.best}
    assert best == {("relu", 0.01), ("relu", 0.1)}
    md = harness.render_markdown(rows)
    assert "**93.00**" in md and "Exploding" in md


def test_grid_cell_count():
    cfg = harness.resolve({"activations": "talu,relu,elu", "bn_grid": "false,true", "lrs": "0.1,0.01"})
    assert len(harness.grid_cells(cfg)) == 12


def test_grid_errors_are_annotated(capsys, tmp_path, mnist_dir):
    # batch size 1 with batch norm trips the two-sample rule inside the cell
    code, out, _ = run(capsys, "compare", "--bn-grid", "true,false", "--name", "err",
                       *tiny(tmp_path, mnist_dir), "--batch-size", "1", "--epochs", "1")
    assert code == 0
    rows = read_csv(tmp_path / "runs" / "err.csv")
    assert rows[0]["error"].startswith("ContractError") and rows[1]["error"] == ""
