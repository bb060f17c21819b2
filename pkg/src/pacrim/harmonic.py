"""Seasonal mean temperature curve by ordinary least squares.

Model: T_t = b0 + b1*t + b2*sin(2*pi*t/period) + b3*cos(2*pi*t/period),
with t in days since the first observation and period 365.25 days to
absorb leap years.  Solved by QR; normal equations are avoided for
conditioning.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .climate import DailySeries
from .errors import DataError, NumericalError

__all__ = ["HarmonicFit", "fit_harmonic", "predict_harmonic"]

DEFAULT_PERIOD_DAYS = 365.25
_MAX_CONDITION = 1e3  # on the column-normalized design


@dataclass(frozen=True)
class HarmonicFit:
    beta: np.ndarray        # (intercept, trend/day, sin amplitude, cos amplitude)
    se: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    period: float
    origin_date: dt.date
    residuals: np.ndarray
    sigma2: float           # residual variance, n - 4 denominator

    def predict_at_days(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        w = 2.0 * np.pi / self.period
        b0, b1, b2, b3 = self.beta
        return b0 + b1 * t + b2 * np.sin(w * t) + b3 * np.cos(w * t)

    def to_json(self) -> str:
        return json.dumps(
            {
                "beta": self.beta.tolist(),
                "se": self.se.tolist(),
                "period": self.period,
                "origin_date": self.origin_date.isoformat(),
                "sigma2": self.sigma2,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "HarmonicFit":
        d = json.loads(text)
        beta = np.array(d["beta"])
        se = np.array(d["se"])
        with np.errstate(divide="ignore", invalid="ignore"):
            t_stat = np.where(se > 0, beta / se, np.nan)
        p = 2.0 * norm.sf(np.abs(t_stat))
        return cls(
            beta=beta,
            se=se,
            t_stat=t_stat,
            p_value=p,
            period=float(d["period"]),
            origin_date=dt.date.fromisoformat(d["origin_date"]),
            residuals=np.empty(0),
            sigma2=float(d["sigma2"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def _design(t: np.ndarray, period: float) -> np.ndarray:
    w = 2.0 * np.pi / period
    return np.column_stack([np.ones_like(t), t, np.sin(w * t), np.cos(w * t)])


def fit_harmonic(series: DailySeries, period: float = DEFAULT_PERIOD_DAYS) -> HarmonicFit:
    """OLS fit of the trend-plus-annual-harmonic curve with coefficient stats.

    p-values are two-sided from the normal approximation; with decades of
    daily data the t/normal distinction is immaterial.
    """
    n = len(series)
    if n < 10:
        raise DataError(f"need at least 10 observations, got {n}")
    origin = series.dates[0]
    t = np.array([(d - origin).days for d in series.dates], dtype=float)
    X = _design(t, period)
    y = series.values

    # A series much shorter than one period makes sin(wt) ~ wt, collinear
    # with the trend column.  Column-normalize before taking the condition
    # number so the check measures collinearity, not column scale.
    Xn = X / np.linalg.norm(X, axis=0)
    cond = np.linalg.cond(Xn)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise NumericalError(f"rank-deficient harmonic design (condition {cond:.3g})")
    Q, R = np.linalg.qr(X)
    beta = np.linalg.solve(R, Q.T @ y)
    fitted = X @ beta
    resid = y - fitted
    dof = n - X.shape[1]
    sigma2 = float(resid @ resid) / dof

    Rinv = np.linalg.inv(R)
    cov = sigma2 * (Rinv @ Rinv.T)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    p_value = 2.0 * norm.sf(np.abs(t_stat))

    return HarmonicFit(
        beta=beta,
        se=se,
        t_stat=t_stat,
        p_value=p_value,
        period=period,
        origin_date=origin,
        residuals=resid,
        sigma2=sigma2,
    )


def predict_harmonic(fit: HarmonicFit, dates: list[dt.date]) -> np.ndarray:
    """Evaluate the fitted curve at the given dates."""
    if not dates:
        raise DataError("no dates to predict at")
    t = np.array([(d - fit.origin_date).days for d in dates], dtype=float)
    return fit.predict_at_days(t)
