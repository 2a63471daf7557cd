"""scikit-learn style wrapper around model construction, training and inference."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import metrics
from .data import Standardizer, make_windows
from .exceptions import ConfigurationError, ShapeError
from .model import ForecastModel, ModelDims
from .training import TrainConfig, extract_adjacency, train


def check_panel(X, name: str = "X") -> np.ndarray:
    """Validate a [n_timesteps, n_series] array: 2-D, finite, float64."""
    return check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=2,
                       input_name=name)


def check_windows(X, n_series: int, context_len: int) -> np.ndarray:
    """Validate a [B, N, context_len] batch of context windows."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False, input_name="X")
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (n_series, context_len):
        raise ShapeError(f"expected windows shaped [B, {n_series}, {context_len}], got {X.shape}")
    return X


class LatentGraphForecaster(RegressorMixin, BaseEstimator):
    """Multivariate forecaster with a learned latent graph between series.

    ``fit`` takes a panel shaped [n_timesteps, n_series] (the scikit-learn
    samples-by-features layout), standardizes it per series, slices it into
    stride-1 windows and trains with early stopping on a trailing validation
    block.  ``predict`` maps raw-scale context windows [B, N, context_len]
    to raw-scale forecasts [B, N, pred_len].

    Parameters
    ----------
    topology : {"fc", "bp", "ne", "linear_gcl"}
        Aggregation graph between series.
    val_fraction : float
        Trailing fraction of ``X`` held out for early stopping when
        ``X_val`` is not given.
    """

    def __init__(self, topology="fc", nf=64, n_layers=2, n_aux=4, id_dim=16, encoder="mlp",
                 context_len=12, pred_len=12, lr=2e-3, decay_epochs=(), decay_factor=10.0,
                 max_epochs=100, batch_size=16, patience=20, reg_lambda=0.0, weight_decay=0.0,
                 val_fraction=0.25, random_state=0):
        self.topology = topology
        self.nf = nf
        self.n_layers = n_layers
        self.n_aux = n_aux
        self.id_dim = id_dim
        self.encoder = encoder
        self.context_len = context_len
        self.pred_len = pred_len
        self.lr = lr
        self.decay_epochs = decay_epochs
        self.decay_factor = decay_factor
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.patience = patience
        self.reg_lambda = reg_lambda
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _dims(self, n_series: int) -> ModelDims:
        return ModelDims(n_nodes=n_series, context_len=self.context_len, pred_len=self.pred_len, nf=self.nf,
                         id_dim=self.id_dim, n_layers=self.n_layers, topology=self.topology,
                         n_aux=self.n_aux, encoder=self.encoder)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, decay_epochs=list(self.decay_epochs), decay_factor=self.decay_factor,
                           max_epochs=self.max_epochs, batch_size=self.batch_size, patience=self.patience,
                           seed=self.random_state, reg_lambda=self.reg_lambda, weight_decay=self.weight_decay)

    def fit(self, X, y=None, X_val=None):
        """Train on a panel ``X`` [n_timesteps, n_series]; ``y`` is ignored."""
        X = check_panel(X)
        if X_val is None:
            if not 0 < self.val_fraction < 1:
                raise ConfigurationError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
            cut = int(round(X.shape[0] * (1 - self.val_fraction)))
            X, X_val = X[:cut], X[cut:]
        else:
            X_val = check_panel(X_val, "X_val")
            if X_val.shape[1] != X.shape[1]:
                raise ShapeError(f"X_val has {X_val.shape[1]} series, X has {X.shape[1]}")
        dims = self._dims(X.shape[1])
        cfg = self._train_config()
        self.scaler_ = Standardizer().fit(X)
        train_w = make_windows(self.scaler_.transform(X).T, self.context_len, self.pred_len)["all"]
        val_w = make_windows(self.scaler_.transform(X_val).T, self.context_len, self.pred_len)["all"]
        self.model_ = ForecastModel(dims, seed=self.random_state)
        result = train(self.model_, train_w, val_w, cfg, self.scaler_)
        self.trace_ = result.trace
        self.best_val_mae_ = result.best_val_mae
        self.n_features_in_ = X.shape[1]
        self._last_val_windows = val_w
        return self

    def predict(self, X):
        """Forecast raw-scale [B, N, pred_len] from raw-scale windows [B, N, context_len]."""
        check_is_fitted(self, "model_")
        X = check_windows(X, self.n_features_in_, self.context_len)
        z = self.scaler_.transform(X, series_axis=1)
        return self.scaler_.inverse_transform(self.model_.predict(z), series_axis=1)

    def forecast(self, X):
        """Next ``pred_len`` steps after the end of a panel [n_timesteps, n_series]."""
        X = check_panel(X)
        if X.shape[0] < self.context_len:
            raise ShapeError(f"need at least {self.context_len} timesteps, got {X.shape[0]}")
        return self.predict(X[-self.context_len:].T[None])[0].T

    def score(self, X, y, sample_weight=None):
        """Negative MAE of ``predict(X)`` against ``y`` (higher is better)."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        return -metrics.mae(pred, y)

    def infer_adjacency(self, X=None, n_timesteps: int = 10):
        """Averaged first-layer gates, on ``X`` or the validation block seen by ``fit``."""
        check_is_fitted(self, "model_")
        if X is None:
            windows = self._last_val_windows
        else:
            X = check_panel(X)
            windows = make_windows(self.scaler_.transform(X).T, self.context_len, self.pred_len)["all"]
        return extract_adjacency(self.model_, windows, n_timesteps)

