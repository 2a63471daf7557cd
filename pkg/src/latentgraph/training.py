"""Training loop, evaluation, K sweeps and forward-time benchmarks."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics
from . import tensor as T
from ._alloc import tune_allocator
from .data import Standardizer, WindowSet
from .exceptions import ConfigurationError, NumericalError
from .graph import AdjacencySnapshot, Topology, snapshot_from_alphas
from .model import ForecastModel, ModelDims, total_loss
from .optim import AdamState, adam_step
from .rng import RngStream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 2e-3
    decay_epochs: list[int] = field(default_factory=list)
    decay_factor: float = 10.0
    max_epochs: int = 100
    batch_size: int = 16
    patience: int = 20
    seed: int = 0
    reg_lambda: float = 0.0
    weight_decay: float = 0.0
    mape_floor: float = metrics.MAPE_FLOOR
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        if self.decay_factor <= 1:
            raise ConfigurationError(f"decay_factor must be > 1, got {self.decay_factor}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if self.reg_lambda < 0:
            raise ConfigurationError("reg_lambda must be >= 0")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """``lr0 / factor ** #(decay epochs <= epoch)``; epochs count from 0."""
    n = sum(1 for d in cfg.decay_epochs if d <= epoch)
    return cfg.lr / cfg.decay_factor ** n


@dataclass
class TrainResult:
    model: ForecastModel
    trace: list[dict]
    best_epoch: int
    best_val_mae: float

    def trace_csv(self) -> str:
        lines = ["epoch,lr,train_mae,val_mae"]
        for row in self.trace:
            lines.append(f"{row['epoch']},{row['lr']:.10g},{row['train_mae']:.10g},{row['val_mae']:.10g}")
        return "\n".join(lines) + "\n"


def predict_windows(model: ForecastModel, windows: WindowSet, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Model output and targets for every window (standardized scale)."""
    preds, targets = [], []
    with T.no_grad():
        for batch in windows.iter_batches(batch_size):
            out, _ = model(batch.x)
            preds.append(out.data)
            targets.append(batch.y)
    return np.concatenate(preds), np.concatenate(targets)


def _destandardized(model, windows, scaler: Standardizer | None, batch_size: int):
    pred, true = predict_windows(model, windows, batch_size)
    if scaler is not None:
        pred = scaler.inverse_transform(pred, series_axis=1)
        true = scaler.inverse_transform(true, series_axis=1)
    return pred, true


def validation_mae(model, windows: WindowSet, scaler: Standardizer | None = None, batch_size: int = 256) -> float:
    pred, true = _destandardized(model, windows, scaler, batch_size)
    return metrics.mae(pred, true)


def train(model: ForecastModel, train_windows: WindowSet, val_windows: WindowSet, cfg: TrainConfig,
          scaler: Standardizer | None = None) -> TrainResult:
    """Minibatch Adam on MAE (+ edge regularizer) with step decay and early stopping.

    The parameters with the best destandardized validation MAE are restored
    on return.  A NaN/inf loss aborts with :class:`NumericalError`.
    """
    if len(train_windows) == 0:
        raise ConfigurationError("training split has no windows")
    if len(val_windows) == 0:
        raise ConfigurationError("validation split has no windows")
    tune_allocator()
    params = model.parameters()
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle = RngStream(cfg.seed, ("train", "shuffle"))
    best_val = validation_mae(model, val_windows, scaler, cfg.eval_batch_size)
    best_state = model.state_dict()
    best_epoch = -1
    stale = 0
    trace = []
    for epoch in range(cfg.max_epochs):
        state.lr = lr_at_epoch(cfg, epoch)
        order = shuffle.permutation(len(train_windows))
        total, count = 0.0, 0
        for step, batch in enumerate(train_windows.iter_batches(cfg.batch_size, order)):
            loss, pred, _ = total_loss(model, batch.x, batch.y, cfg.reg_lambda)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            T.backward(loss)
            adam_step(params, state)
            total += float(np.mean(np.abs(pred.data - batch.y))) * len(batch)
            count += len(batch)
        val = validation_mae(model, val_windows, scaler, cfg.eval_batch_size)
        if not np.isfinite(val):
            raise NumericalError(f"non-finite validation MAE at epoch {epoch}")
        trace.append({"epoch": epoch, "lr": state.lr, "train_mae": total / count, "val_mae": val})
        log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, state.lr, total / count, val)
        if val < best_val:
            best_val, best_epoch, stale = val, epoch, 0
            best_state = model.state_dict()
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, trace, best_epoch, best_val)


def evaluate(model: ForecastModel, windows: WindowSet, scaler: Standardizer | None = None,
             mape_floor: float = metrics.MAPE_FLOOR, batch_size: int = 256) -> metrics.MetricsReport:
    """Metrics on destandardized forecasts over every window of a split."""
    if len(windows) == 0:
        raise ConfigurationError("evaluation split has no windows")
    pred, true = _destandardized(model, windows, scaler, batch_size)
    return metrics.report(pred, true, mape_floor)


def extract_adjacency(model: ForecastModel, windows: WindowSet, n_timesteps: int = 10) -> AdjacencySnapshot:
    """First-layer gates averaged over ``n_timesteps`` evenly spaced windows."""
    subset = windows.evenly_spaced(n_timesteps)
    with T.no_grad():
        _, snaps = model(subset.batch().x)
    return snapshot_from_alphas(model.dims.topology, [snaps[0]] if snaps else [], len(subset))


# ------------------------------------------------------------------- sweeps
def dims_for_k(dims: ModelDims, k: int) -> ModelDims:
    """K = 0 means no edges; K >= 1 is the bipartite graph with K aux nodes."""
    if k < 0:
        raise ConfigurationError(f"K must be >= 0, got {k}")
    if k == 0:
        return replace(dims, topology="ne")
    return replace(dims, topology="bp", n_aux=k)


def _fit_once(dims: ModelDims, cfg: TrainConfig, splits: dict, scaler) -> float:
    model = ForecastModel(dims, seed=cfg.seed)
    result = train(model, splits["train"], splits["val"], cfg, scaler)
    return result.best_val_mae


def k_sweep(dims: ModelDims, cfg: TrainConfig, splits: dict, k_values, repeats: int = 4,
            scaler: Standardizer | None = None, jobs: int = 1) -> list[dict]:
    """Best validation MAE for each K over ``repeats`` seeds (seed + r)."""
    tasks = [(k, r) for k in k_values for r in range(repeats)]
    args = [(dims_for_k(dims, k), replace(cfg, seed=cfg.seed + r), splits, scaler) for k, r in tasks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            maes = list(pool.map(_fit_once, *zip(*args)))
    else:
        maes = [_fit_once(*a) for a in args]
    rows = []
    for k in k_values:
        vals = [m for (kk, _), m in zip(tasks, maes) if kk == k]
        rows.append({"K": int(k), "val_mae": vals, "mean": float(np.mean(vals)), "std": float(np.std(vals))})
    return rows


# -------------------------------------------------------------- complexity
@dataclass
class ComplexityRow:
    topology: str
    n_nodes: int
    n_aux: int
    n_edges: int
    n_params: int
    time_min: float
    time_mean: float


@dataclass
class ComplexityReport:
    batch_size: int
    nf: int
    repeats: int
    rows: list[ComplexityRow] = field(default_factory=list)

    TIMING_FIELDS = ("time_min", "time_mean")

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "nf": self.nf, "repeats": self.repeats,
                "rows": [asdict(r) for r in self.rows]}

    def to_csv(self) -> str:
        cols = list(ComplexityRow.__dataclass_fields__)
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(str(getattr(r, c)) for c in cols))
        return "\n".join(lines) + "\n"

    def ratios(self, topology: str) -> list[float]:
        """Forward-time ratio between consecutive N values."""
        rows = sorted((r for r in self.rows if r.topology == topology), key=lambda r: r.n_nodes)
        return [b.time_min / a.time_min for a, b in zip(rows, rows[1:])]


def time_forward(model: ForecastModel, x: np.ndarray, repeats: int = 3, warmups: int = 2) -> tuple[float, float]:
    """(min, mean) wall-clock seconds of ``model(x)`` without gradient recording."""
    times = []
    with T.no_grad():
        for i in range(warmups + repeats):
            t0 = time.perf_counter()
            model(x)
            elapsed = time.perf_counter() - t0
            if i >= warmups:
                times.append(elapsed)
    return min(times), float(np.mean(times))


def complexity_bench(topologies=("fc", "bp"), n_values=(64, 128, 256, 512), nf: int = 64, batch_size: int = 16,
                     repeats: int = 3, n_aux: int = 4, context_len: int = 12, pred_len: int = 12,
                     n_layers: int = 2, id_dim: int = 16, seed: int = 0, warmups: int = 2) -> ComplexityReport:
    """Forward time of randomly initialised models as the number of series grows."""
    tune_allocator()
    rep = ComplexityReport(batch_size=batch_size, nf=nf, repeats=repeats)
    data_rng = RngStream(seed, ("bench", "inputs"))
    for topo in topologies:
        for n in sorted(n_values):
            dims = ModelDims(n_nodes=n, context_len=context_len, pred_len=pred_len, nf=nf, id_dim=id_dim,
                             n_layers=n_layers, topology=topo, n_aux=n_aux)
            model = ForecastModel(dims, seed=seed)
            x = data_rng.substream(f"N{n}").normal(size=(batch_size, n, context_len))
            t_min, t_mean = time_forward(model, x, repeats=repeats, warmups=warmups)
            k = n_aux if topo == "bp" else 0
            rep.rows.append(ComplexityRow(topo, n, k, Topology(topo, n_aux=k).n_edges(n),
                                          model.n_parameters(), t_min, t_mean))
    return rep
