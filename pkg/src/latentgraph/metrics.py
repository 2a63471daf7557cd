"""Forecast error metrics: MAE, RMSE, MAPE, RSE and CORR."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ShapeError, ZeroVarianceError

MAPE_FLOOR = 1e-3


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("cannot compute metrics on empty arrays")
    return pred, target


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def rmse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def mape(pred, target, floor: float = MAPE_FLOOR) -> float:
    """Mean of ``|e / x|`` over targets with ``|x| > floor``, as a fraction."""
    pred, target = _pair(pred, target)
    keep = np.abs(target) > floor
    if not keep.any():
        raise ValueError(f"MAPE undefined: no target exceeds the floor {floor}")
    return float(np.mean(np.abs((pred[keep] - target[keep]) / target[keep])))


def mae_rmse_mape(pred, target, floor: float = MAPE_FLOOR) -> tuple[float, float, float]:
    return mae(pred, target), rmse(pred, target), mape(pred, target, floor)


def rse(pred, target) -> float:
    """Root relative squared error; the reference is the global target mean."""
    pred, target = _pair(pred, target)
    num = np.sqrt(np.sum((target - pred) ** 2))
    den = np.sqrt(np.sum((target - target.mean()) ** 2))
    if den == 0:
        raise ZeroVarianceError("RSE undefined for a constant target")
    return float(num / den)


def corr(pred, target) -> float:
    """Mean over series (rows) of the Pearson correlation along time."""
    pred, target = _pair(pred, target)
    if pred.ndim != 2:
        raise ShapeError(f"CORR expects [N, T] arrays, got {pred.shape}")
    dp = pred - pred.mean(axis=1, keepdims=True)
    dt = target - target.mean(axis=1, keepdims=True)
    sp = np.sqrt(np.sum(dp ** 2, axis=1))
    st = np.sqrt(np.sum(dt ** 2, axis=1))
    bad = np.flatnonzero((sp == 0) | (st == 0))
    if bad.size:
        raise ZeroVarianceError(f"CORR undefined: series {bad.tolist()} have zero variance")
    return float(np.mean(np.sum(dp * dt, axis=1) / (sp * st)))


def rse_corr(pred, target) -> tuple[float, float]:
    return rse(pred, target), corr(pred, target)


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float | None
    rse: float
    corr: float | None
    horizon_mae: list[float] = field(default_factory=list)
    horizon_rmse: list[float] = field(default_factory=list)
    horizon_mape: list[float | None] = field(default_factory=list)
    n_windows: int = 0
    n_series: int = 0
    pred_len: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _maybe(fn, *args):
    try:
        return fn(*args)
    except (ValueError, ZeroVarianceError):
        return None


def report(pred, target, floor: float = MAPE_FLOOR) -> MetricsReport:
    """Metrics for forecasts shaped [windows, N, pred_len].

    Per-horizon-step MAE/RMSE/MAPE plus whole-horizon aggregates.  RSE and
    CORR treat each series' (window, step) values as its time axis.  MAPE
    and CORR are reported as ``None`` when undefined.
    """
    pred, target = _pair(pred, target)
    if pred.ndim != 3:
        raise ShapeError(f"expected [windows, N, pred_len], got {pred.shape}")
    W, N, P = pred.shape
    series_pred = np.transpose(pred, (1, 0, 2)).reshape(N, W * P)
    series_true = np.transpose(target, (1, 0, 2)).reshape(N, W * P)
    return MetricsReport(
        mae=mae(pred, target),
        rmse=rmse(pred, target),
        mape=_maybe(mape, pred, target, floor),
        rse=rse(pred, target),
        corr=_maybe(corr, series_pred, series_true),
        horizon_mae=[mae(pred[..., h], target[..., h]) for h in range(P)],
        horizon_rmse=[rmse(pred[..., h], target[..., h]) for h in range(P)],
        horizon_mape=[_maybe(mape, pred[..., h], target[..., h], floor) for h in range(P)],
        n_windows=W,
        n_series=N,
        pred_len=P,
    )
