"""Feed-forward temperature forecaster trained with resilient backpropagation.

Features per date: label-encoded year, month, day, the temperature one and
two years earlier (same calendar date), and the fitted harmonic curve
value.  Features are min-max normalized; the target uses a shifted log so
sub-zero Celsius values stay loggable.
"""

from __future__ import annotations

import copy
import datetime as dt
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .climate import DailySeries
from .errors import DataError, NumericalError
from .harmonic import HarmonicFit, predict_harmonic
from .nn import Dense, Network, Rprop, RpropConfig

__all__ = [
    "FeatureRow",
    "MlpModel",
    "build_features",
    "normalize",
    "train_mlp",
    "predict_mlp",
    "forecast_mse",
    "nn_band_halfwidths",
    "rows_in_years",
]

FEATURE_NAMES = ("year", "month", "day", "lag1y", "lag2y", "harmonic")


@dataclass(frozen=True)
class FeatureRow:
    date: dt.date
    year: int        # label-encoded: years since the first training year
    month: int
    day: int
    lag1y: float
    lag2y: float
    harmonic: float
    target: float

    def features(self) -> np.ndarray:
        return np.array([self.year, self.month, self.day,
                         self.lag1y, self.lag2y, self.harmonic], dtype=float)


def build_features(series: DailySeries, fit: HarmonicFit) -> list[FeatureRow]:
    """One row per date whose one- and two-year-lagged dates are observed.

    Feb 29 rows are dropped so "same date one year ago" is always defined.
    """
    if not series.dates:
        raise DataError("empty series")
    span_years = series.dates[-1].year - series.dates[0].year + 1
    if span_years < 3:
        raise DataError(f"insufficient span: {span_years} years, need >= 3")
    lookup = dict(zip(series.dates, series.values))
    base_year = series.dates[0].year
    harm = predict_harmonic(fit, list(series.dates))
    rows: list[FeatureRow] = []
    for date, value, h in zip(series.dates, series.values, harm):
        if date.month == 2 and date.day == 29:
            continue
        d1 = date.replace(year=date.year - 1)
        d2 = date.replace(year=date.year - 2)
        if d1 not in lookup or d2 not in lookup:
            continue
        rows.append(FeatureRow(
            date=date,
            year=date.year - base_year,
            month=date.month,
            day=date.day,
            lag1y=float(lookup[d1]),
            lag2y=float(lookup[d2]),
            harmonic=float(h),
            target=float(value),
        ))
    return rows


@dataclass(frozen=True)
class NormParams:
    feature_min: np.ndarray
    feature_max: np.ndarray
    kept: tuple[int, ...]        # indices of non-constant feature columns
    target_shift: float          # z = log(y + shift), shift = 1 - min(y)
    degenerate_target: bool = False

    def transform_features(self, X: np.ndarray, warn_extrapolation: bool = False) -> np.ndarray:
        X = np.asarray(X, dtype=float)[:, list(self.kept)]
        lo = self.feature_min
        hi = self.feature_max
        if warn_extrapolation and (np.any(X < lo) or np.any(X > hi)):
            warnings.warn("features outside training min/max; extrapolating", stacklevel=2)
        return (X - lo) / (hi - lo)

    def transform_target(self, y: np.ndarray) -> np.ndarray:
        return np.log(np.asarray(y, dtype=float) + self.target_shift)

    def inverse_target(self, z: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(z, dtype=float)) - self.target_shift


def normalize(rows: list[FeatureRow]) -> tuple[np.ndarray, np.ndarray, NormParams]:
    """Min-max features and shifted-log target; returns (X, z, params)."""
    if not rows:
        raise DataError("no feature rows")
    X = np.stack([r.features() for r in rows])
    y = np.array([r.target for r in rows])
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    kept = tuple(int(i) for i in np.flatnonzero(hi > lo))
    if len(kept) < X.shape[1]:
        dropped = [FEATURE_NAMES[i] for i in range(X.shape[1]) if i not in kept]
        warnings.warn(f"dropping constant feature columns: {dropped}", stacklevel=2)
    if not kept:
        raise DataError("all feature columns constant")
    shift = 1.0 - float(y.min())
    degenerate = bool(y.max() == y.min())
    if degenerate:
        warnings.warn("target has a single distinct value; transform is degenerate", stacklevel=2)
    params = NormParams(lo[list(kept)], hi[list(kept)], kept, shift, degenerate)
    return params.transform_features(X), params.transform_target(y), params


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    network: Network
    norm: NormParams
    seed: int

    def predict_normalized(self, Xn: np.ndarray) -> np.ndarray:
        return self.network.forward(Xn, training=False)[:, 0]

    def to_json(self) -> str:
        weights = [p.tolist() for p in self.network.params()]
        return json.dumps(
            {
                "layer_sizes": list(self.layer_sizes),
                "weights": weights,
                "feature_min": self.norm.feature_min.tolist(),
                "feature_max": self.norm.feature_max.tolist(),
                "kept": list(self.norm.kept),
                "target_shift": self.norm.target_shift,
                "seed": self.seed,
            }
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        d = json.loads(text)
        sizes = tuple(d["layer_sizes"])
        model = _build_mlp(sizes, seed=d["seed"])
        for p, saved in zip(model.params(), d["weights"]):
            p[...] = np.array(saved)
        norm = NormParams(
            np.array(d["feature_min"]), np.array(d["feature_max"]),
            tuple(d["kept"]), d["target_shift"],
        )
        return cls(sizes, model, norm, d["seed"])


def _build_mlp(layer_sizes: tuple[int, ...], seed: int) -> Network:
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(layer_sizes) - 1):
        last = i == len(layer_sizes) - 2
        layers.append(Dense(
            layer_sizes[i], layer_sizes[i + 1],
            activation="identity" if last else "sigmoid",
            rng=rng, init="uniform",
        ))
    return Network(layers)


def train_mlp(
    rows: list[FeatureRow],
    config: RpropConfig,
    val_fraction: float = 0.1,
    hidden: tuple[int, ...] = (7, 5, 3),
) -> tuple[MlpModel, dict[str, list[float]]]:
    """Full-batch Rprop training on MSE; returns the weights with the best
    validation MSE seen across epochs (early selection, not early stopping).

    The split is chronological: the trailing ``val_fraction`` of rows is
    the validation set.  Deterministic given ``config.seed``.
    """
    if len(rows) < 100:
        raise DataError(f"need >= 100 rows, got {len(rows)}")
    Xn, z, norm = normalize(rows)
    n_val = max(1, int(round(val_fraction * len(rows))))
    X_tr, z_tr = Xn[:-n_val], z[:-n_val]
    X_val, z_val = Xn[-n_val:], z[-n_val:]

    sizes = (len(norm.kept), *hidden, 1)
    net = _build_mlp(sizes, config.seed)
    opt = Rprop(net.params(), config)
    rng = np.random.default_rng(config.seed + 1)

    def val_mse() -> float:
        pred = net.forward(X_val, training=False)[:, 0]
        return float(np.mean((pred - z_val) ** 2))

    history: dict[str, list[float]] = {"train": [], "val": []}
    best_val = val_mse()
    best_weights = [p.copy() for p in net.params()]
    for epoch in range(config.max_epochs):
        loss = net.mse_and_grad(X_tr, z_tr[:, None], rng=rng)
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at epoch {epoch}")
        opt.step(net.grads())
        assert opt.step_bounds_ok(), "Rprop step outside [delta_min, delta_max]"
        v = val_mse()
        history["train"].append(loss)
        history["val"].append(v)
        if v < best_val:
            best_val = v
            best_weights = [p.copy() for p in net.params()]
    for p, w in zip(net.params(), best_weights):
        p[...] = w
    return MlpModel(sizes, net, norm, config.seed), history


def predict_mlp(model: MlpModel, rows: list[FeatureRow]) -> np.ndarray:
    """Forward pass on feature rows, inverse-transformed back to Celsius."""
    if not rows:
        raise DataError("no rows to predict")
    X = np.stack([r.features() for r in rows])
    Xn = model.norm.transform_features(X, warn_extrapolation=True)
    z = model.predict_normalized(Xn)
    return model.norm.inverse_target(z)


def forecast_mse(predicted: np.ndarray, actual: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise DataError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    return float(np.mean((predicted - actual) ** 2))


def nn_band_halfwidths(
    model: MlpModel,
    val_rows: list[FeatureRow],
    levels: tuple[float, ...] = (0.75, 0.95),
) -> dict[float, float]:
    """Symmetric band half-widths from validation residual quantiles."""
    pred = predict_mlp(model, val_rows)
    resid = np.abs(pred - np.array([r.target for r in val_rows]))
    return {lvl: float(np.quantile(resid, lvl)) for lvl in levels}


def rows_in_years(rows: list[FeatureRow], years: set[int]) -> list[FeatureRow]:
    return [r for r in rows if r.date.year in years]
