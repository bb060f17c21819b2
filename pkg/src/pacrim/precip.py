"""Compound Poisson-Gamma daily precipitation model.

Wet-day amounts are Gamma(shape alpha, rate beta); the number of wet days
in a month is Poisson(lambda) truncated at the month length.  Parameters
are estimated two ways: classical MLE with Fisher-information standard
errors, and a small convolutional network trained on generated Gamma
samples arranged as 30x30 images.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import digamma, polygamma

from .climate import DailySeries, RAINY_THRESHOLD_MM, Season, Variable, seasonal_split
from .errors import DataError, NumericalError
from .nn import BatchNorm, Conv2D, Dense, Dropout, Flatten, Network, Pool2D, Rprop, RpropConfig

__all__ = [
    "GammaFit",
    "SeasonalFits",
    "EstimatorDataset",
    "EstimatorModel",
    "SimulationResult",
    "fit_gamma_mle",
    "wet_day_samples",
    "seasonal_fits",
    "generate_estimator_dataset",
    "train_param_estimator",
    "estimate_params_nn",
    "simulate_precip_month",
    "PARAM_RANGE",
    "IMAGE_SIDE",
]

PARAM_RANGE = (0.01, 5.0)   # training range for both Gamma parameters
IMAGE_SIDE = 30             # estimator input is a 30x30 sample image
_Z95 = 1.959963984540054


class FitMethod(str, Enum):
    MLE = "mle"
    NEURAL = "neural"


@dataclass(frozen=True)
class GammaFit:
    alpha: float
    beta: float                 # rate, 1/mm
    se_alpha: float
    se_beta: float
    ci_alpha: tuple[float, float]
    ci_beta: tuple[float, float]
    n_obs: int
    method: FitMethod
    low_confidence: bool = False

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta,
            "se_alpha": self.se_alpha, "se_beta": self.se_beta,
            "ci_alpha": list(self.ci_alpha), "ci_beta": list(self.ci_beta),
            "n_obs": self.n_obs, "method": self.method.value,
        }


def fit_gamma_mle(samples: np.ndarray, max_iter: int = 100) -> GammaFit:
    """Gamma MLE by safeguarded Newton on the profile shape equation.

    Solves log(alpha) - digamma(alpha) = log(mean) - mean(log); then
    beta = alpha / mean.  SEs from the inverse Fisher information.
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 30:
        raise DataError(f"need >= 30 wet-day samples, got {n}")
    if np.any(x <= 0):
        raise DataError("all samples must be positive (wet days only)")
    mean = float(x.mean())
    s = np.log(mean) - float(np.mean(np.log(x)))
    if s <= 0:
        raise NumericalError("degenerate sample: zero log-moment spread")

    # Minka-style starting point, then Newton with bisection safeguards
    alpha = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    lo, hi = 1e-8, 1e8
    for _ in range(max_iter):
        g = np.log(alpha) - digamma(alpha) - s
        if g > 0:
            lo = alpha
        else:
            hi = alpha
        gprime = 1.0 / alpha - polygamma(1, alpha)
        step = g / gprime
        new = alpha - step
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if abs(new - alpha) < 1e-12 * alpha:
            alpha = new
            break
        alpha = new
    else:
        raise NumericalError("Gamma shape equation did not converge")

    beta = alpha / mean
    trig = float(polygamma(1, alpha))
    det = alpha * trig - 1.0
    if det <= 0:
        raise NumericalError("singular Fisher information")
    se_alpha = float(np.sqrt(alpha / (n * det)))
    se_beta = float(np.sqrt(beta**2 * trig / (n * det)))
    return GammaFit(
        alpha=float(alpha), beta=float(beta),
        se_alpha=se_alpha, se_beta=se_beta,
        ci_alpha=(alpha - _Z95 * se_alpha, alpha + _Z95 * se_alpha),
        ci_beta=(beta - _Z95 * se_beta, beta + _Z95 * se_beta),
        n_obs=n, method=FitMethod.MLE,
    )


def wet_day_samples(series: DailySeries, threshold: float = RAINY_THRESHOLD_MM) -> np.ndarray:
    if series.variable is not Variable.PRECIPITATION:
        raise DataError("expected a precipitation series")
    return series.values[series.values >= threshold]


@dataclass(frozen=True)
class SeasonalFits:
    fits: dict[Season, GammaFit]
    failures: dict[Season, str]


def seasonal_fits(series: DailySeries, threshold: float = RAINY_THRESHOLD_MM) -> SeasonalFits:
    """Gamma MLE on wet-day subsamples per season plus the full year."""
    fits: dict[Season, GammaFit] = {}
    failures: dict[Season, str] = {}
    for season in Season:
        sub = seasonal_split(series, season)
        try:
            fits[season] = fit_gamma_mle(wet_day_samples(sub, threshold))
        except (DataError, NumericalError) as exc:
            failures[season] = str(exc)
    return SeasonalFits(fits, failures)


# ---------------------------------------------------------------------------
# neural estimator

@dataclass(frozen=True)
class EstimatorDataset:
    images: np.ndarray    # (k, 30, 30) raw mm draws
    targets: np.ndarray   # (k, 2) = (alpha, beta)


def generate_estimator_dataset(
    grid: np.ndarray,
    m: int = IMAGE_SIDE * IMAGE_SIDE,
    seed: int = 0,
) -> EstimatorDataset:
    """For each (alpha, beta) pair, m iid Gamma draws reshaped row-major 30x30."""
    grid = np.asarray(grid, dtype=float).reshape(-1, 2)
    lo, hi = PARAM_RANGE
    if len(grid) and (grid.min() < lo or grid.max() > hi):
        raise DataError(f"grid outside parameter range {PARAM_RANGE}")
    if m != IMAGE_SIDE * IMAGE_SIDE:
        raise DataError(f"m must be {IMAGE_SIDE * IMAGE_SIDE} (30x30 image)")
    rng = np.random.default_rng(seed)
    images = np.empty((len(grid), IMAGE_SIDE, IMAGE_SIDE))
    for i, (alpha, beta) in enumerate(grid):
        images[i] = rng.gamma(alpha, 1.0 / beta, m).reshape(IMAGE_SIDE, IMAGE_SIDE)
    return EstimatorDataset(images, grid.copy())


def _build_estimator_network(seed: int, pool_mode: str = "avg") -> Network:
    rng = np.random.default_rng(seed)
    side = IMAGE_SIDE
    after = ((side - 2) // 2 - 2) // 2          # two conv(3x3)+pool(2) blocks
    return Network([
        Conv2D(1, 32, 3, activation="relu", rng=rng),
        BatchNorm(32, conv=True),
        Pool2D(2, mode=pool_mode),
        Conv2D(32, 32, 3, activation="relu", rng=rng),
        BatchNorm(32, conv=True),
        Pool2D(2, mode=pool_mode),
        Flatten(),
        Dense(after * after * 32, 32, activation="relu", rng=rng, init="he"),
        BatchNorm(32),
        Dropout(0.6),
        Dense(32, 32, activation="relu", rng=rng, init="he"),
        BatchNorm(32),
        Dropout(0.6),
        Dense(32, 2, activation="identity", rng=rng, init="he"),
    ])


def _to_float32(net: Network) -> None:
    attrs = ("W", "b", "dW", "db", "gamma", "beta", "dgamma", "dbeta",
             "run_mean", "run_var")
    for layer in net.layers:
        for name in attrs:
            if hasattr(layer, name):
                setattr(layer, name, getattr(layer, name).astype(np.float32))


@dataclass
class EstimatorModel:
    network: Network
    seed: int
    pool_mode: str = "avg"
    # raw mm values span several orders of magnitude across the parameter
    # grid; a fixed log1p pixel transform keeps the input bounded
    input_transform: str = "log1p"
    # targets are regressed on a unit scale and mapped back at predict time
    target_scale: float = PARAM_RANGE[1]

    def _prep(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32)
        if x.ndim == 3:
            x = x[:, None, :, :]
        if self.input_transform == "log1p":
            x = np.log1p(x)
        return x

    def predict(self, images: np.ndarray) -> np.ndarray:
        """(k, 30, 30) images -> (k, 2) parameter estimates."""
        out = self.network.forward(self._prep(images), training=False)
        return np.asarray(out, dtype=float) * self.target_scale

    def save(self, path: str | Path) -> None:
        payload = {
            "seed": self.seed,
            "pool_mode": self.pool_mode,
            "input_transform": self.input_transform,
            "target_scale": self.target_scale,
            "weights": [p.tolist() for p in self.network.params()],
            "bn_stats": [
                [layer.run_mean.tolist(), layer.run_var.tolist()]
                for layer in self.network.layers if isinstance(layer, BatchNorm)
            ],
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path: str | Path) -> "EstimatorModel":
        d = json.loads(Path(path).read_text())
        model = cls(_build_estimator_network(d["seed"], d["pool_mode"]),
                    d["seed"], d["pool_mode"], d["input_transform"],
                    d.get("target_scale", 1.0))
        _to_float32(model.network)
        for p, saved in zip(model.network.params(), d["weights"]):
            p[...] = np.array(saved, dtype=p.dtype)
        bns = [l for l in model.network.layers if isinstance(l, BatchNorm)]
        for layer, (mean, var) in zip(bns, d["bn_stats"]):
            layer.run_mean = np.array(mean, dtype=np.float32)
            layer.run_var = np.array(var, dtype=np.float32)
        return model


def _recalibrate_bn(net: Network, x: np.ndarray, chunk_size: int) -> None:
    """Recompute batch-norm running stats with dropout off.

    Inverted dropout preserves activation means but inflates variances, so
    statistics accumulated during training overestimate the inference-time
    spread of any layer downstream of a dropout.  A final pass with dropout
    disabled replaces the EMA with the exact mean of the chunk statistics.
    """
    drops = [l for l in net.layers if isinstance(l, Dropout)]
    rates = [l.rate for l in drops]
    bns = [l for l in net.layers if isinstance(l, BatchNorm)]
    moms = [l.momentum for l in bns]
    for l in drops:
        l.rate = 0.0
    try:
        for j, i in enumerate(range(0, len(x), chunk_size), start=1):
            for l in bns:
                # cumulative mean: run <- ((j-1) run + batch) / j
                l.momentum = 1.0 - 1.0 / j
            net.forward(x[i : i + chunk_size], training=True)
    finally:
        for l, rate in zip(drops, rates):
            l.rate = rate
        for l, mom in zip(bns, moms):
            l.momentum = mom


def train_param_estimator(
    dataset: EstimatorDataset,
    epochs: int = 40,
    val_fraction: float = 0.2,
    config: RpropConfig | None = None,
    chunk_size: int = 256,
    pool_mode: str = "avg",
    select_best: bool = True,
) -> tuple[EstimatorModel, dict[str, list[float]]]:
    """Train the conv estimator on generated images with full-batch Rprop.

    Gradients are accumulated over fixed-order chunks (batch-norm sees one
    chunk at a time), so the update is still a single full-batch Rprop
    step per epoch and the run is deterministic per seed.
    """
    k = len(dataset.images)
    if k < 500:
        raise DataError(f"need >= 500 examples, got {k}")
    config = config or RpropConfig(max_epochs=epochs)
    model = EstimatorModel(_build_estimator_network(config.seed, pool_mode),
                           config.seed, pool_mode)
    net = model.network
    _to_float32(net)

    x = model._prep(dataset.images)
    y = np.asarray(dataset.targets, dtype=np.float32) / np.float32(model.target_scale)
    n_val = max(1, int(round(val_fraction * k)))
    # deterministic shuffle so the validation slice spans the grid
    order = np.random.default_rng(config.seed + 7).permutation(k)
    x, y = x[order], y[order]
    x_tr, y_tr = x[:-n_val], y[:-n_val]
    x_val, y_val = x[-n_val:], y[-n_val:]
    n_tr = len(x_tr)

    opt = Rprop(net.params(), config)
    rng = np.random.default_rng(config.seed + 11)

    def eval_mse(xs: np.ndarray, ys: np.ndarray) -> float:
        total = 0.0
        for i in range(0, len(xs), chunk_size):
            pred = net.forward(xs[i : i + chunk_size], training=False)
            total += float(np.sum((pred - ys[i : i + chunk_size]) ** 2))
        return total / ys.size

    history: dict[str, list[float]] = {"train": [], "val": []}
    bns = [l for l in net.layers if isinstance(l, BatchNorm)]
    best_val = np.inf
    best_weights = None
    best_stats = None
    for epoch in range(epochs):
        net.zero_grads()
        total_loss = 0.0
        for i in range(0, n_tr, chunk_size):
            xc, yc = x_tr[i : i + chunk_size], y_tr[i : i + chunk_size]
            pred = net.forward(xc, training=True, rng=rng)
            loss = net.backward_mse(pred, yc, scale=len(xc) / n_tr)
            total_loss += loss * len(xc) / n_tr
        if not np.isfinite(total_loss):
            raise NumericalError(f"estimator training diverged at epoch {epoch}")
        opt.step(net.grads())
        v = eval_mse(x_val, y_val)
        history["train"].append(total_loss)
        history["val"].append(v)
        if select_best and v < best_val:
            best_val = v
            # the snapshot must pair the weights with the batch-norm
            # running statistics of the same epoch
            best_weights = [p.copy() for p in net.params()]
            best_stats = [(l.run_mean.copy(), l.run_var.copy()) for l in bns]
    if select_best and best_weights is not None:
        for p, w in zip(net.params(), best_weights):
            p[...] = w
        for l, (mean, var) in zip(bns, best_stats):
            l.run_mean, l.run_var = mean, var
    _recalibrate_bn(net, x_tr, chunk_size)
    return model, history


def estimate_params_nn(
    model: EstimatorModel,
    samples: np.ndarray,
    n_bootstrap: int = 200,
    seed: int = 0,
) -> GammaFit:
    """Estimate (alpha, beta) from wet-day samples with the trained network.

    SEs come from a nonparametric bootstrap over resampled images; there is
    no likelihood to differentiate for this estimator.
    """
    x = np.asarray(samples, dtype=float)
    m = IMAGE_SIDE * IMAGE_SIDE
    rng = np.random.default_rng(seed)
    low_confidence = False
    if len(x) < m:
        warnings.warn(f"only {len(x)} samples; resampling with replacement to {m}",
                      stacklevel=2)
        image = rng.choice(x, m, replace=True)
        low_confidence = True
    else:
        image = x[:m]
    if np.all(image == image.flat[0]):
        low_confidence = True
        warnings.warn("constant image is out of distribution for the estimator",
                      stacklevel=2)
    point = model.predict(image.reshape(1, IMAGE_SIDE, IMAGE_SIDE))[0]

    boots = np.empty((n_bootstrap, 2))
    batch = 50
    for start in range(0, n_bootstrap, batch):
        cnt = min(batch, n_bootstrap - start)
        imgs = rng.choice(x, (cnt, m), replace=True).reshape(cnt, IMAGE_SIDE, IMAGE_SIDE)
        boots[start : start + cnt] = model.predict(imgs)
    se = boots.std(axis=0, ddof=1)
    alpha, beta = float(point[0]), float(point[1])
    lo, hi = PARAM_RANGE
    if not (lo <= alpha <= hi and lo <= beta <= hi):
        low_confidence = True
    return GammaFit(
        alpha=alpha, beta=beta,
        se_alpha=float(se[0]), se_beta=float(se[1]),
        ci_alpha=(alpha - _Z95 * se[0], alpha + _Z95 * se[0]),
        ci_beta=(beta - _Z95 * se[1], beta + _Z95 * se[1]),
        n_obs=len(x), method=FitMethod.NEURAL,
        low_confidence=low_confidence,
    )


# ---------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class SimulationResult:
    paths: np.ndarray            # (n_sim, n_days) daily precipitation, mm
    mean_path: np.ndarray
    pr_index_estimate: float

    def monthly_totals(self) -> np.ndarray:
        return self.paths.sum(axis=1)


def simulate_precip_month(
    lam: float,
    alpha: float,
    beta: float,
    n_days: int = 31,
    n_sim: int = 1000,
    seed: int = 0,
) -> SimulationResult:
    """Simulate daily December-style precipitation paths.

    Per path: N ~ Poisson(lam) capped at n_days (it cannot rain on more
    days than exist), N wet days chosen uniformly without replacement,
    iid Gamma(alpha, rate beta) amounts on wet days, zero elsewhere.
    """
    if lam <= 0:
        raise DataError(f"rainy-day rate must be positive, got {lam}")
    if alpha <= 0 or beta <= 0:
        raise DataError("Gamma parameters must be positive")
    if n_sim < 1 or n_days < 1:
        raise DataError("n_sim and n_days must be >= 1")
    rng = np.random.default_rng(seed)
    paths = np.zeros((n_sim, n_days))
    counts = np.minimum(rng.poisson(lam, n_sim), n_days)
    for i, n_wet in enumerate(counts):
        if n_wet == 0:
            continue
        days = rng.choice(n_days, n_wet, replace=False)
        paths[i, days] = rng.gamma(alpha, 1.0 / beta, n_wet)
    mean_path = paths.mean(axis=0)
    return SimulationResult(
        paths=paths,
        mean_path=mean_path,
        pr_index_estimate=float(paths.sum(axis=1).mean() / n_days),
    )
