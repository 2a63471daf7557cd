import numpy as np
import pytest

from latentgraph import tensor as T
from latentgraph.data import CycleGraphSpec, gen_cycle_graph, make_windows, prepare_splits
from latentgraph.exceptions import ConfigurationError, NoAdjacencyError, NumericalError
from latentgraph.model import ForecastModel, ModelDims, total_loss
from latentgraph.optim import AdamState, adam_step
from latentgraph.training import (TrainConfig, complexity_bench, dims_for_k, evaluate, extract_adjacency, k_sweep,
                                  lr_at_epoch, train)


def tiny_dims(topology="fc", n_nodes=3):
    return ModelDims(n_nodes=n_nodes, context_len=6, pred_len=1, nf=4, id_dim=2, n_layers=1,
                     topology=topology, n_aux=2)


@pytest.fixture(scope="module")
def cycle_splits():
    panel, _ = gen_cycle_graph(CycleGraphSpec(n_series=3, length=400, seed=0))
    return prepare_splits(panel, 6, 1)


class TestSchedule:
    def test_decay(self):
        cfg = TrainConfig(lr=1.0, decay_epochs=[2], decay_factor=10)
        assert [lr_at_epoch(cfg, e) for e in range(4)] == [1.0, 1.0, 0.1, 0.1]

    def test_multiple_decays(self):
        cfg = TrainConfig(lr=2e-3, decay_epochs=[20, 30, 40])
        assert lr_at_epoch(cfg, 35) == pytest.approx(2e-5)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(decay_factor=1.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)


class TestTrain:
    def test_zero_lr_changes_nothing(self, cycle_splits):
        splits, sc = cycle_splits
        model = ForecastModel(tiny_dims())
        before = model.state_dict()
        res = train(model, splits["train"], splits["val"], TrainConfig(lr=0.0, max_epochs=3), sc)
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(v, before[k])
        assert len({row["val_mae"] for row in res.trace}) == 1

    def test_trace_lr_follows_schedule(self, cycle_splits):
        splits, sc = cycle_splits
        res = train(ForecastModel(tiny_dims()), splits["train"], splits["val"],
                    TrainConfig(lr=1e-3, decay_epochs=[2], max_epochs=3, patience=10), sc)
        assert [r["lr"] for r in res.trace] == [1e-3, 1e-3, pytest.approx(1e-4)]
        assert res.trace_csv().splitlines()[0] == "epoch,lr,train_mae,val_mae"

    def test_best_is_restored(self, cycle_splits):
        splits, sc = cycle_splits
        model = ForecastModel(tiny_dims())
        res = train(model, splits["train"], splits["val"], TrainConfig(lr=5e-3, max_epochs=4), sc)
        assert res.best_val_mae == min([r["val_mae"] for r in res.trace] + [res.best_val_mae])
        assert evaluate(model, splits["val"], sc).mae == pytest.approx(res.best_val_mae, abs=1e-12)

    def test_early_stopping(self, cycle_splits):
        splits, sc = cycle_splits
        res = train(ForecastModel(tiny_dims()), splits["train"], splits["val"],
                    TrainConfig(lr=0.0, max_epochs=50, patience=3), sc)
        assert len(res.trace) == 3

    def test_reproducible(self, cycle_splits):
        splits, sc = cycle_splits
        cfg = TrainConfig(lr=5e-3, max_epochs=2, seed=7)
        a = train(ForecastModel(tiny_dims(), seed=1), splits["train"], splits["val"], cfg, sc)
        b = train(ForecastModel(tiny_dims(), seed=1), splits["train"], splits["val"], cfg, sc)
        assert a.best_val_mae == b.best_val_mae
        assert a.trace == b.trace

    def test_nan_aborts(self, cycle_splits):
        splits, sc = cycle_splits
        model = ForecastModel(tiny_dims())
        model.decoder.out.bias.data[:] = np.nan
        with pytest.raises(NumericalError, match="epoch 0, step 0"):
            train(model, splits["train"], splits["val"], TrainConfig(max_epochs=1), sc)

    def test_empty_split(self, cycle_splits):
        splits, sc = cycle_splits
        with pytest.raises(ConfigurationError):
            train(ForecastModel(tiny_dims()), splits["train"].subset([]), splits["val"], TrainConfig(), sc)

    def test_linear_toy_loss_decreases(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 600))
        x[:, 1:] = 0.5 * x[:, :-1] + 0.01 * rng.normal(size=(2, 599))
        windows = make_windows(x, 6, 1)["all"]
        model = ForecastModel(tiny_dims("ne", n_nodes=2), seed=0)
        state = AdamState(lr=2e-3)
        losses = []
        for step, batch in enumerate(windows.iter_batches(16)):
            if step == 50:
                break
            loss, _, _ = total_loss(model, batch.x, batch.y)
            losses.append(loss.item())
            T.backward(loss)
            adam_step(model.parameters(), state)
        assert np.mean(losses[-5:]) < np.mean(losses[:5])


class TestEvaluate:
    def test_perfect_model_metrics(self, cycle_splits, monkeypatch):
        import latentgraph.training as tr

        splits, sc = cycle_splits
        monkeypatch.setattr(tr, "predict_windows", lambda m, w, b=256: (w.batch().y, w.batch().y))
        rep = evaluate(None, splits["test"], sc)
        assert (rep.mae, rep.rmse, rep.rse) == (0.0, 0.0, 0.0)
        assert rep.corr == pytest.approx(1.0)

    def test_empty(self, cycle_splits):
        splits, sc = cycle_splits
        with pytest.raises(ConfigurationError):
            evaluate(ForecastModel(tiny_dims()), splits["test"].subset([]), sc)


class TestAdjacency:
    def test_single_window_equals_alpha(self, cycle_splits):
        splits, _ = cycle_splits
        model = ForecastModel(tiny_dims())
        snap = extract_adjacency(model, splits["test"], n_timesteps=1)
        _, snaps = model(splits["test"].subset([0]).batch().x)
        np.testing.assert_array_equal(snap.matrix, snaps[0]["alpha"].data[0])

    def test_identical_windows_average_is_exact(self, cycle_splits):
        splits, _ = cycle_splits
        model = ForecastModel(tiny_dims())
        same = splits["test"].subset([3] * 10)
        snap = extract_adjacency(model, same, n_timesteps=10)
        _, snaps = model(splits["test"].subset([3]).batch().x)
        np.testing.assert_allclose(snap.matrix, snaps[0]["alpha"].data[0], atol=1e-15)

    def test_ne_raises(self, cycle_splits):
        splits, _ = cycle_splits
        with pytest.raises(NoAdjacencyError):
            extract_adjacency(ForecastModel(tiny_dims("ne")), splits["test"])

    def test_entries_in_unit_interval(self, cycle_splits):
        splits, _ = cycle_splits
        snap = extract_adjacency(ForecastModel(tiny_dims("bp")), splits["test"])
        assert snap.matrix.shape == (3, 3)
        assert np.all(snap.up > 0) and np.all(snap.up < 1)


class TestSweepAndBench:
    def test_k_zero_is_ne(self):
        assert dims_for_k(tiny_dims(), 0).topology == "ne"
        assert dims_for_k(tiny_dims(), 3).n_aux == 3
        with pytest.raises(ConfigurationError):
            dims_for_k(tiny_dims(), -1)

    def test_k_sweep_rows(self, cycle_splits):
        splits, sc = cycle_splits
        cfg = TrainConfig(lr=2e-3, max_epochs=1, seed=5)
        rows = k_sweep(tiny_dims(), cfg, splits, [0, 2], repeats=2, scaler=sc)
        assert [r["K"] for r in rows] == [0, 2]
        assert all(len(r["val_mae"]) == 2 for r in rows)
        ne = ForecastModel(tiny_dims("ne"), seed=5)
        ref = train(ne, splits["train"], splits["val"], cfg, sc).best_val_mae
        assert rows[0]["val_mae"][0] == ref

    def test_complexity_rows(self):
        rep = complexity_bench(n_values=(8, 16), nf=4, batch_size=2, repeats=1, warmups=0, context_len=6, pred_len=1)
        assert len(rep.rows) == 4
        fc = [r.n_edges for r in rep.rows if r.topology == "fc"]
        bp = [r.n_edges for r in rep.rows if r.topology == "bp"]
        assert fc == [56, 240] and bp == [64, 128]
        assert all(r.time_min <= r.time_mean for r in rep.rows)
        assert rep.to_csv().count("\n") == 5
