"""Panels, synthetic generators, splits, standardization and windowing."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DataFormatError, MissingValueError, ZeroVarianceError
from .rng import RngStream


@dataclass
class TimeSeriesPanel:
    """N aligned series of length L; ``values`` is [N, L]."""

    values: np.ndarray
    names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataFormatError(f"panel values must be 2-D [N, L], got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise MissingValueError("panel contains NaN or infinite values")
        if not self.names:
            self.names = [f"s{i}" for i in range(self.n_series)]
        if len(self.names) != self.n_series:
            raise DataFormatError(f"{len(self.names)} names for {self.n_series} series")

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        """Rows are timesteps, columns are series, with a header row of names."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.names)
            for row in self.values.T:
                writer.writerow([repr(float(v)) for v in row])


# ----------------------------------------------------------------- generators
@dataclass
class CycleGraphSpec:
    n_series: int = 10
    length: int = 10000
    lag: int = 5
    beta: float = 0.9
    sigma: float = 0.5
    seed: int = 0
    burn_in: int = 500
    init_value: float | None = None

    def __post_init__(self):
        if self.n_series < 2:
            raise ConfigurationError("cycle graph needs at least 2 series")
        if self.length <= self.lag or self.lag < 1:
            raise ConfigurationError(f"need length > lag >= 1, got length={self.length}, lag={self.lag}")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be >= 0")


def gen_cycle_graph(spec: CycleGraphSpec) -> tuple[TimeSeriesPanel, np.ndarray]:
    """``x[i, t] = beta * x[i-1 mod N, t-lag] + sigma * eps``.

    The first ``lag`` steps come from the stationary law N(0, sigma^2/(1-beta^2))
    (or the constant ``init_value``); the first ``burn_in`` steps are dropped.
    The ground-truth adjacency is receiver-by-sender: ``A[i, i-1 mod N] = 1``.
    """
    rng = RngStream(spec.seed, ("cycle_graph",))
    N, lag = spec.n_series, spec.lag
    total = spec.burn_in + spec.length
    x = np.empty((N, total))
    if spec.init_value is None:
        stationary_sd = spec.sigma / np.sqrt(1.0 - spec.beta ** 2) if abs(spec.beta) < 1 else spec.sigma
        x[:, :lag] = rng.substream("init").normal(0.0, stationary_sd, size=(N, lag))
    else:
        x[:, :lag] = spec.init_value
    noise = rng.substream("noise").normal(0.0, 1.0, size=(N, total))
    for t in range(lag, total, lag):
        stop = min(t + lag, total)
        width = stop - t
        x[:, t:stop] = spec.beta * np.roll(x[:, t - lag:t - lag + width], 1, axis=0) + spec.sigma * noise[:, t:stop]
    adjacency = np.roll(np.eye(N), -1, axis=1)
    panel = TimeSeriesPanel(x[:, spec.burn_in:], meta={"generator": "cycle_graph"})
    return panel, adjacency


@dataclass
class SinusoidSpec:
    clusters: list[int] = field(default_factory=lambda: [5, 5])
    length: int = 10000
    n_components: int = 3
    freq_max: float = 0.2
    noise_std: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.clusters or any(c < 1 for c in self.clusters):
            raise ConfigurationError(f"cluster sizes must be positive, got {self.clusters}")
        if self.n_components < 1:
            raise ConfigurationError("need at least one sinusoid component")

    @property
    def n_series(self) -> int:
        return int(sum(self.clusters))


def gen_sinusoids(spec: SinusoidSpec) -> tuple[TimeSeriesPanel, np.ndarray]:
    """Cluster-shared mixtures of sinusoids plus independent Gaussian noise.

    Each cluster draws M amplitudes from U(0, 1), normalised to sum to one,
    and M frequencies from U(0, freq_max); every member of the cluster uses
    the same mixture.  Returns the panel and the cluster id of each series.
    """
    rng = RngStream(spec.seed, ("sinusoids",))
    t = np.arange(spec.length, dtype=np.float64)
    signals, labels, amplitudes, freqs = [], [], [], []
    for c, size in enumerate(spec.clusters):
        crng = rng.substream(f"cluster{c}")
        amp = crng.uniform(0.0, 1.0, size=spec.n_components)
        amp = amp / amp.sum()
        w = crng.uniform(0.0, spec.freq_max, size=spec.n_components)
        base = (amp[:, None] * np.sin(2.0 * np.pi * w[:, None] * t[None, :])).sum(axis=0)
        signals.extend([base] * size)
        labels.extend([c] * size)
        amplitudes.append(amp.tolist())
        freqs.append(w.tolist())
    clean = np.stack(signals)
    noise = rng.substream("noise").normal(0.0, 1.0, size=clean.shape)
    values = clean + spec.noise_std * noise
    meta = {"generator": "sinusoids", "amplitudes": amplitudes, "frequencies": freqs}
    return TimeSeriesPanel(values, meta=meta), np.asarray(labels, dtype=int)


# ----------------------------------------------------------------------- csv
def _parse_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv_panel(path, delimiter: str = ",") -> TimeSeriesPanel:
    """Read a rectangular CSV with rows = timesteps and columns = series.

    A first row whose cells are all non-numeric is taken as the names.
    Missing cells and NaN/inf values are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter)]
    lines = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    names: list[str] = []
    first_no, first = lines[0]
    if all(_parse_float(c.strip()) is None for c in first):
        names = [c.strip() for c in first]
        lines = lines[1:]
    if not lines:
        raise DataFormatError(f"{path}: no data rows")
    width = len(names) if names else len(lines[0][1])
    data = np.empty((len(lines), width))
    for k, (line_no, row) in enumerate(lines):
        if len(row) != width:
            raise DataFormatError(f"{path}: row {line_no} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise MissingValueError(f"{path}: row {line_no}, column {j + 1} is empty")
            value = _parse_float(cell)
            if value is None:
                raise DataFormatError(f"{path}: row {line_no}, column {j + 1}: {cell!r} is not a number")
            if not np.isfinite(value):
                raise MissingValueError(f"{path}: row {line_no}, column {j + 1} is {cell!r}")
            data[k, j] = value
    return TimeSeriesPanel(data.T, names=names, meta={"source": str(path)})


# -------------------------------------------------------------------- splits
@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be positive and sum to 1, got {fr}")

    def bounds(self, length: int) -> dict[str, tuple[int, int]]:
        """Contiguous [start, stop) ranges, ordered train < val < test."""
        n_train = int(round(length * self.train))
        n_val = int(round(length * self.val))
        return {
            "train": (0, n_train),
            "val": (n_train, n_train + n_val),
            "test": (n_train + n_val, length),
        }


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-series z-scoring fitted on training data.

    Follows the scikit-learn layout: ``X`` is [n_timesteps, n_series].
    ``series_axis`` lets the same statistics act on [N, L] panels or
    [B, N, P] forecasts.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DataFormatError(f"expected [n_timesteps, n_series], got shape {X.shape}")
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        flat = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(mean)))
        if flat.size:
            raise ZeroVarianceError(f"series {flat.tolist()} are constant on the training split")
        self.mean_ = mean
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def _stats(self, ndim: int, series_axis: int):
        check_is_fitted(self, ("mean_", "scale_"))
        shape = [1] * ndim
        shape[series_axis] = -1
        return self.mean_.reshape(shape), self.scale_.reshape(shape)

    def transform(self, X, series_axis: int = -1):
        X = np.asarray(X, dtype=np.float64)
        mean, scale = self._stats(X.ndim, series_axis)
        return (X - mean) / scale

    def inverse_transform(self, X, series_axis: int = -1):
        X = np.asarray(X, dtype=np.float64)
        mean, scale = self._stats(X.ndim, series_axis)
        return X * scale + mean


def standardize(panel: TimeSeriesPanel, fitted: Standardizer) -> TimeSeriesPanel:
    return TimeSeriesPanel(fitted.transform(panel.values, series_axis=0), list(panel.names), dict(panel.meta))


def destandardize(preds: np.ndarray, fitted: Standardizer, series_axis: int = 1) -> np.ndarray:
    return fitted.inverse_transform(preds, series_axis=series_axis)


# ------------------------------------------------------------------- windows
@dataclass
class WindowBatch:
    x: np.ndarray  # [B, N, context_len]
    y: np.ndarray  # [B, N, pred_len]
    starts: np.ndarray

    def __len__(self) -> int:
        return len(self.starts)


class WindowSet:
    """Lazily sliced (context, target) windows over one split of a panel.

    Only the start offsets are stored; batches are gathered on demand.
    """

    def __init__(self, values: np.ndarray, starts: np.ndarray, context_len: int, pred_len: int):
        self.values = values
        self.starts = np.asarray(starts, dtype=np.intp)
        self.context_len = context_len
        self.pred_len = pred_len

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    def subset(self, positions) -> "WindowSet":
        return WindowSet(self.values, self.starts[np.asarray(positions, dtype=np.intp)],
                         self.context_len, self.pred_len)

    def batch(self, positions=None) -> WindowBatch:
        starts = self.starts if positions is None else self.starts[np.asarray(positions, dtype=np.intp)]
        span = self.context_len + self.pred_len
        idx = starts[:, None] + np.arange(span)[None, :]
        block = self.values[:, idx]                      # [N, B, span]
        block = np.transpose(block, (1, 0, 2))           # [B, N, span]
        return WindowBatch(block[:, :, :self.context_len].copy(), block[:, :, self.context_len:].copy(), starts)

    def iter_batches(self, batch_size: int, order=None) -> Iterator[WindowBatch]:
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for lo in range(0, len(order), batch_size):
            yield self.batch(order[lo:lo + batch_size])

    def evenly_spaced(self, count: int) -> "WindowSet":
        """``count`` windows spread uniformly over the set (for graph snapshots)."""
        if count < 1:
            raise ConfigurationError("count must be >= 1")
        count = min(count, len(self))
        return self.subset(np.unique(np.linspace(0, len(self) - 1, count).round().astype(int)))


def window_starts(lo: int, hi: int, context_len: int, pred_len: int, stride: int = 1) -> np.ndarray:
    span = context_len + pred_len
    if hi - lo < span:
        raise ConfigurationError(
            f"split of length {hi - lo} is shorter than context + prediction = {span}")
    return np.arange(lo, hi - span + 1, stride)


def make_windows(panel: TimeSeriesPanel | np.ndarray, context_len: int, pred_len: int, stride: int = 1,
                 split: SplitSpec | None = None) -> dict[str, WindowSet]:
    """Windows at every ``stride`` offset inside each split; none crosses a boundary.

    Without ``split`` the whole panel is one split named ``"all"``.
    """
    values = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=np.float64)
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    L = values.shape[1]
    ranges = {"all": (0, L)} if split is None else split.bounds(L)
    return {name: WindowSet(values, window_starts(lo, hi, context_len, pred_len, stride), context_len, pred_len)
            for name, (lo, hi) in ranges.items()}


def prepare_splits(panel: TimeSeriesPanel, context_len: int, pred_len: int, split: SplitSpec | None = None,
                   stride: int = 1, standardize_data: bool = True):
    """Fit the standardizer on the training range and window every split."""
    split = split or SplitSpec()
    bounds = split.bounds(panel.length)
    lo, hi = bounds["train"]
    scaler = Standardizer().fit(panel.values[:, lo:hi].T)
    if not standardize_data:
        scaler.mean_ = np.zeros(panel.n_series)
        scaler.scale_ = np.ones(panel.n_series)
    scaled = standardize(panel, scaler)
    return make_windows(scaled, context_len, pred_len, stride=stride, split=split), scaler


def concat_batches(batches: Sequence[WindowBatch]) -> WindowBatch:
    return WindowBatch(np.concatenate([b.x for b in batches]), np.concatenate([b.y for b in batches]),
                       np.concatenate([b.starts for b in batches]))
