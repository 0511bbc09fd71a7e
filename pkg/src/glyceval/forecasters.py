"""Baseline point forecasters plus oracle test doubles.

All forecasters share a small interface: ``predict(request)`` maps a
``ForecastRequest`` to an array of L glucose predictions. The ARX model is
a direct multi-horizon ridge regression (one linear head per lead) over
lagged channel values, optionally conditioned on the planned future
basal/bolus sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .timeseries import ForecastSample, SequenceRecord

DEFAULT_CHANNELS = ("cgm", "basal", "bolus")
DEFAULT_LAGS = 12          # one hour of history at the 5-minute grid
DEFAULT_RIDGE_WEIGHT = 1.0
RIDGE_GRID = (0.1, 1.0, 10.0)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForecastRequest:
    """History (and optionally the planned future actions) for one origin."""

    history: Dict[str, np.ndarray]
    horizon_len: int
    planned_actions: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        lengths = {len(v) for v in self.history.values()}
        if len(lengths) != 1:
            raise ValueError("history channels must share one length")
        if self.planned_actions is not None:
            for name, arr in self.planned_actions.items():
                if len(arr) != self.horizon_len:
                    raise ValueError(f"planned action {name!r} length != horizon")


class ZohForecaster:
    """Zero-order hold: repeat the last observed glucose value."""

    def predict(self, request: ForecastRequest) -> np.ndarray:
        return zoh_predict(request)


def zoh_predict(request: ForecastRequest) -> np.ndarray:
    history = np.asarray(request.history["cgm"], dtype=float)
    if history.size == 0:
        raise ValueError("empty history")
    return np.full(request.horizon_len, history[-1])


@dataclass
class ArxParams:
    """Direct multi-horizon ridge ARX parameters.

    ``weights`` has one column per lead, acting on standardized features:
    p lags per channel, then (when action-conditional) the planned basal
    and bolus sequences over the horizon.
    """

    lag_order: int
    horizon_len: int
    channels: Tuple[str, ...]
    action_conditional: bool
    ridge_weight: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    weights: np.ndarray  # (n_features, horizon_len)

    @property
    def n_features(self) -> int:
        n = self.lag_order * len(self.channels)
        if self.action_conditional:
            n += 2 * self.horizon_len
        return n


def _request_features(params_like, history: Dict[str, np.ndarray],
                      planned: Optional[Dict[str, np.ndarray]]) -> np.ndarray:
    p = params_like.lag_order
    parts = []
    for channel in params_like.channels:
        if channel not in history:
            raise ValueError(f"request missing channel {channel!r}")
        arr = np.asarray(history[channel], dtype=float)
        if arr.size < p:
            raise ValueError(f"history shorter than lag order for {channel!r}")
        parts.append(arr[-p:])
    if params_like.action_conditional:
        if planned is None:
            raise ValueError("action-conditional model requires planned actions")
        for name in ("basal", "bolus"):
            parts.append(np.asarray(planned[name], dtype=float))
    return np.concatenate(parts)


def _sample_request(sample: ForecastSample, action_conditional: bool) -> ForecastRequest:
    rec = sample.record
    hist = sample.history_slice()
    history = {
        "cgm": rec.cgm[hist],
        "basal": rec.basal[hist],
        "bolus": rec.bolus[hist],
    }
    planned = None
    if action_conditional:
        fut = sample.target_slice()
        planned = {"basal": rec.basal[fut], "bolus": rec.bolus[fut]}
    return ForecastRequest(history=history, horizon_len=sample.horizon_len,
                           planned_actions=planned)


def fit_arx(samples: Sequence[ForecastSample], lag_order: int = DEFAULT_LAGS,
            ridge_weight: float = DEFAULT_RIDGE_WEIGHT,
            action_conditional: bool = False,
            channels: Tuple[str, ...] = DEFAULT_CHANNELS) -> ArxParams:
    """Fit one ridge head per lead via normal equations on standardized data."""
    if not samples:
        raise ValueError("no training samples")
    horizon_len = samples[0].horizon_len

    class _Spec:
        pass

    spec = _Spec()
    spec.lag_order = lag_order
    spec.channels = channels
    spec.action_conditional = action_conditional

    rows, targets = [], []
    for sample in samples:
        req = _sample_request(sample, action_conditional)
        rows.append(_request_features(spec, req.history, req.planned_actions))
        targets.append(sample.target)
    x = np.asarray(rows)
    y = np.asarray(targets)
    n_features = x.shape[1]
    min_samples = lag_order * len(channels) + horizon_len + 1
    if x.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} training samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training features")

    feature_mean = x.mean(axis=0)
    feature_std = x.std(axis=0)
    feature_std[feature_std < 1e-12] = 1.0
    target_mean = y.mean(axis=0)
    target_std = y.std(axis=0)
    target_std[target_std < 1e-12] = 1.0
    xs = (x - feature_mean) / feature_std
    ys = (y - target_mean) / target_std

    gram = xs.T @ xs + ridge_weight * np.eye(n_features)
    if ridge_weight == 0.0 and np.linalg.matrix_rank(xs.T @ xs) < n_features:
        raise ValueError("singular normal matrix; use a nonzero ridge weight")
    weights = np.linalg.solve(gram, xs.T @ ys)
    return ArxParams(
        lag_order=lag_order, horizon_len=horizon_len, channels=tuple(channels),
        action_conditional=action_conditional, ridge_weight=ridge_weight,
        feature_mean=feature_mean, feature_std=feature_std,
        target_mean=target_mean, target_std=target_std, weights=weights)


def arx_predict(params: ArxParams, request: ForecastRequest) -> np.ndarray:
    """Predictions for leads 1..L; de-standardizes the per-lead linear heads."""
    if request.horizon_len != params.horizon_len:
        raise ValueError("request horizon does not match fitted horizon")
    features = _request_features(params, request.history, request.planned_actions)
    xs = (features - params.feature_mean) / params.feature_std
    return xs @ params.weights * params.target_std + params.target_mean


@dataclass
class ArxForecaster:
    params: ArxParams

    def predict(self, request: ForecastRequest) -> np.ndarray:
        return arx_predict(self.params, request)


def select_ridge_weight(train_samples, valid_samples, lag_order: int = DEFAULT_LAGS,
                        action_conditional: bool = False,
                        grid: Sequence[float] = RIDGE_GRID,
                        selection_lead: int = 6) -> float:
    """Pick the ridge weight minimizing validation RMSE at the 30-minute lead."""
    best, best_err = None, np.inf
    for lam in grid:
        params = fit_arx(train_samples, lag_order, lam, action_conditional)
        errs = []
        for sample in valid_samples:
            req = _sample_request(sample, action_conditional)
            pred = arx_predict(params, req)
            errs.append((pred[selection_lead - 1] - sample.target[selection_lead - 1]) ** 2)
        err = float(np.mean(errs))
        if err < best_err:
            best, best_err = lam, err
    return best


def samples_to_requests(samples: Sequence[ForecastSample],
                        action_conditional: bool = False) -> List[ForecastRequest]:
    return [_sample_request(s, action_conditional) for s in samples]


def predict_over_record(model, record: SequenceRecord, history_len: int,
                        horizon_len: int,
                        action_conditional: Optional[bool] = None):
    """Forecasts at every valid origin of a record.

    Returns (origin_indices, predictions) with predictions shaped
    (n_origins, horizon_len); the alarm generator consumes this directly.
    When ``action_conditional`` is None it is inferred from the model.
    """
    if hasattr(model, "predict_over"):
        return model.predict_over(record, history_len, horizon_len)
    if action_conditional is None:
        action_conditional = getattr(getattr(model, "params", None),
                                     "action_conditional", False)
    n = record.n_steps
    origins, preds = [], []
    for origin in range(history_len - 1, n - horizon_len):
        hist = slice(origin - history_len + 1, origin + 1)
        fut = slice(origin + 1, origin + 1 + horizon_len)
        planned = None
        if action_conditional:
            planned = {"basal": record.basal[fut], "bolus": record.bolus[fut]}
        req = ForecastRequest(
            history={"cgm": record.cgm[hist], "basal": record.basal[hist],
                     "bolus": record.bolus[hist]},
            horizon_len=horizon_len, planned_actions=planned)
        origins.append(origin)
        preds.append(model.predict(req))
    return np.asarray(origins, dtype=int), np.asarray(preds)


def oracle_predict(sample: ForecastSample) -> np.ndarray:
    """Perfect-foresight test double; simulator-generated samples only."""
    if sample.record.source != "simulator":
        raise ValueError("oracle forecaster is only defined on simulator data")
    return sample.target.copy()


def negated_oracle_predict(true_future: np.ndarray, factual_future: np.ndarray) -> np.ndarray:
    """True future with the intervention effect mirrored around the factual arm."""
    true_future = np.asarray(true_future, dtype=float)
    factual_future = np.asarray(factual_future, dtype=float)
    return 2.0 * factual_future - true_future


class OracleForecaster:
    """Perfect-foresight test double for the gating evaluation: emits each
    record's actual future at every origin. Simulator data only."""

    def predict_over(self, record: SequenceRecord, history_len: int, horizon_len: int):
        if record.source != "simulator":
            raise ValueError("oracle forecaster is only defined on simulator data")
        n = record.n_steps
        origins = np.arange(history_len - 1, n - horizon_len, dtype=int)
        preds = np.stack([
            record.cgm[o + 1:o + 1 + horizon_len] for o in origins
        ])
        return origins, preds


def save_params(params: ArxParams, path):
    """Versioned flat-file serialization with explicit field names."""
    payload = {
        "format_version": FORMAT_VERSION,
        "model": "arx",
        "lag_order": params.lag_order,
        "horizon_len": params.horizon_len,
        "channels": list(params.channels),
        "action_conditional": params.action_conditional,
        "ridge_weight": params.ridge_weight,
        "feature_mean": params.feature_mean.tolist(),
        "feature_std": params.feature_std.tolist(),
        "target_mean": params.target_mean.tolist(),
        "target_std": params.target_std.tolist(),
        "weights": params.weights.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_params(path) -> ArxParams:
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {payload.get('format_version')}")
    if payload.get("model") != "arx":
        raise ValueError(f"unexpected model kind {payload.get('model')!r}")
    return ArxParams(
        lag_order=payload["lag_order"], horizon_len=payload["horizon_len"],
        channels=tuple(payload["channels"]),
        action_conditional=payload["action_conditional"],
        ridge_weight=payload["ridge_weight"],
        feature_mean=np.array(payload["feature_mean"]),
        feature_std=np.array(payload["feature_std"]),
        target_mean=np.array(payload["target_mean"]),
        target_std=np.array(payload["target_std"]),
        weights=np.array(payload["weights"]))
