import json

import numpy as np
import pytest

from latentgraph.cli import main

SMALL = ["--set", "data.cycle.length=400", "--set", "model.nf=4", "--set", "model.id_dim=2",
         "--set", "model.context_len=6", "--set", "model.pred_len=1", "--set", "model.n_layers=1",
         "--set", "train.max_epochs=2", "--set", "data.cycle.n_series=4"]


def test_generate_cycle(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--out", str(out), "--set", "seed=42"]) == 0
    rows = (out / "panel.csv").read_text().splitlines()
    assert len(rows) == 10001 and len(rows[1].split(",")) == 10
    meta = json.loads((out / "meta.json").read_text())
    assert np.array(meta["adjacency"]).shape == (10, 10)
    assert (out / "config.json").exists()
    out2 = tmp_path / "g2"
    assert main(["generate", "--out", str(out2), "--set", "seed=42"]) == 0
    assert (out / "panel.csv").read_bytes() == (out2 / "panel.csv").read_bytes()


def test_generate_sinusoids(tmp_path):
    out = tmp_path / "s"
    assert main(["generate", "--out", str(out), "--set", "data.source=sinusoids",
                 "--set", "data.sinusoids.length=100"]) == 0
    assert json.loads((out / "meta.json").read_text())["clusters"] == [0] * 5 + [1] * 5


def test_default_run_dir_name(tmp_path):
    assert main(["generate", "--set", f"output.root={json.dumps(str(tmp_path))}",
                 "--set", "seed=5", "--set", "data.cycle.length=50"]) == 0
    (run,) = list(tmp_path.iterdir())
    assert run.name.startswith("run-") and run.name.endswith("-5")


def test_refuses_non_empty_without_force(tmp_path, capsys):
    out = tmp_path / "g"
    args = ["generate", "--out", str(out), "--set", "data.cycle.length=50"]
    assert main(args) == 0
    assert main(args) == 1
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_train_evaluate_infer(tmp_path, capsys):
    run = tmp_path / "t"
    assert main(["train", "--out", str(run)] + SMALL) == 0
    for name in ("checkpoint.npz", "trace.csv", "metrics.json", "config.json", "overrides.txt"):
        assert (run / name).exists(), name
    metrics = json.loads((run / "metrics.json").read_text())
    assert "mae" in metrics["metrics"]
    assert (run / "trace.csv").read_text().splitlines()[0] == "epoch,lr,train_mae,val_mae"

    ev = tmp_path / "e"
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.npz"), "--out", str(ev)] + SMALL) == 0
    assert json.loads((ev / "metrics.json").read_text())["metrics"]["mae"] == pytest.approx(metrics["metrics"]["mae"])

    ig = tmp_path / "i"
    capsys.readouterr()
    assert main(["infer-graph", "--checkpoint", str(run / "checkpoint.npz"), "--out", str(ig)] + SMALL) == 0
    A = np.loadtxt(ig / "adjacency.csv", delimiter=",")
    assert A.shape == (4, 4) and np.all((A >= 0) & (A <= 1))
    assert (ig / "adjacency.pgm").read_bytes().startswith(b"P5\n4 4\n255\n")
    assert len(capsys.readouterr().out.strip().splitlines()) == 4


def test_infer_graph_rejects_ne(tmp_path, capsys):
    run = tmp_path / "t"
    assert main(["train", "--out", str(run), "--set", "model.topology=ne"] + SMALL) == 0
    code = main(["infer-graph", "--checkpoint", str(run / "checkpoint.npz"), "--out", str(tmp_path / "i")] + SMALL)
    assert code == 1
    assert "adjacency" in capsys.readouterr().err


def test_dry_run_prints_parameter_count(tmp_path, capsys):
    assert main(["train", "--dry-run", "--out", str(tmp_path / "x")] + SMALL) == 0
    assert "parameters:" in capsys.readouterr().out
    assert not (tmp_path / "x").exists()


def test_config_errors_exit_1(tmp_path, capsys):
    assert main(["train", "--set", "train.lrr=1"]) == 1
    assert "lrr" in capsys.readouterr().err
    assert main(["nope"]) == 1
    assert main(["train", "--jobs", "0"]) == 1
    bad = tmp_path / "c.json"
    bad.write_text('{"model": {"nf": "x"}}')
    assert main(["train", "--config", str(bad)]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_exits_2(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path / "n"), "--set", "train.lr=1e300"] + SMALL)
    assert code == 2
    assert "epoch" in capsys.readouterr().err


def test_config_echo_verbatim(tmp_path):
    cfg = tmp_path / "in.json"
    text = '{ "seed": 1,\n  "data": {"cycle": {"length": 60}} }\n'
    cfg.write_text(text)
    out = tmp_path / "g"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "config.input.json").read_text() == text
    assert json.loads((out / "config.json").read_text())["data"]["cycle"]["length"] == 60


def test_benchmark_and_k_sweep(tmp_path):
    out = tmp_path / "b"
    assert main(["benchmark", "--out", str(out), "--set", "benchmark.n_values=[8,16]", "--set", "benchmark.nf=4",
                 "--set", "benchmark.repeats=1", "--set", "benchmark.batch_size=2"]) == 0
    rows = json.loads((out / "complexity.json").read_text())["rows"]
    assert len(rows) == 4
    assert [r["n_edges"] for r in rows] == [56, 240, 64, 128]
    assert (out / "complexity.csv").exists()
    ks = tmp_path / "k"
    assert main(["k-sweep", "--out", str(ks), "--set", "sweep.k_values=[0,1]", "--set", "sweep.repeats=1",
                 "--set", "train.max_epochs=1"] + SMALL) == 0
    assert [r["K"] for r in json.loads((ks / "ksweep.json").read_text())["rows"]] == [0, 1]
