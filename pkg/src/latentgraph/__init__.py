"""Latent-graph multivariate time-series forecasting on a numpy autodiff engine."""
from .estimator import LatentGraphForecaster
from .model import ForecastModel, ModelDims
from .training import TrainConfig, evaluate, extract_adjacency, k_sweep, train

__version__ = "0.1.0"

__all__ = ["ForecastModel", "LatentGraphForecaster", "ModelDims", "TrainConfig", "evaluate",
           "extract_adjacency", "k_sweep", "train", "__version__"]
