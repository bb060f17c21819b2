"""Residual diagnostics: ACF/PACF, ADF unit-root test, KS normality test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov

from .errors import DataError, NumericalError

__all__ = ["diagnostics", "adf_test", "ks_normal_test", "acf", "pacf"]


def acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations, lags 0..max_lag, biased (n) denominator."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise NumericalError("zero-variance series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(xc[k:] @ xc[:-k]) / denom
    return out


def pacf(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Partial autocorrelations via Durbin-Levinson, lags 0..max_lag."""
    rho = acf(x, max_lag)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    a = np.zeros(0)
    for k in range(1, max_lag + 1):
        num = rho[k] - float(a @ rho[k - 1 : 0 : -1]) if k > 1 else rho[1]
        den = 1.0 - float(a @ rho[1:k]) if k > 1 else 1.0
        rk = num / den
        new = np.empty(k)
        new[: k - 1] = a - rk * a[::-1]
        new[k - 1] = rk
        a = new
        out[k] = rk
    return out


def diagnostics(x: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray, float]:
    """(acf, pacf, significance bound).  Bound is the white-noise +-1.96/sqrt(n)."""
    x = np.asarray(x, dtype=float)
    if max_lag >= len(x) / 4:
        raise DataError(f"max_lag {max_lag} too large for n={len(x)}")
    return acf(x, max_lag), pacf(x, max_lag), 1.96 / np.sqrt(len(x))


# MacKinnon (2010) response-surface constants for the constant-only ADF
# regression: crit = b0 + b1/n + b2/n^2 + b3/n^3.
_ADF_CRIT_CONST = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.05: (-2.86154, -2.8903, -4.234, -40.04),
    0.10: (-2.56677, -1.5384, -2.809, 0.0),
}


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    lags: int
    critical_values: dict[float, float]
    reject_unit_root_at_5pct: bool


def adf_test(x: np.ndarray, max_lag: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with intercept.

    Lag order is picked by AIC up to floor(12 * (n/100)^(1/4)); the 5%
    decision uses the embedded MacKinnon constants.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 50:
        raise DataError(f"need at least 50 observations, got {n}")
    if np.std(x) == 0.0:
        raise NumericalError("zero variance")
    if max_lag is None:
        max_lag = int(np.floor(12.0 * (n / 100.0) ** 0.25))
    dx = np.diff(x)

    best = None  # (aic, k, tstat)
    nobs = len(dx) - max_lag  # common sample across candidate lag orders
    for k in range(max_lag + 1):
        cols = [np.ones(nobs), x[max_lag : max_lag + nobs]]
        for i in range(1, k + 1):
            cols.append(dx[max_lag - i : max_lag - i + nobs])
        X = np.column_stack(cols)
        y = dx[max_lag : max_lag + nobs]
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        ssr = float(resid @ resid)
        n_params = X.shape[1]
        aic = nobs * np.log(ssr / nobs) + 2.0 * n_params
        if best is None or aic < best[0]:
            s2 = ssr / (nobs - n_params)
            XtX_inv = np.linalg.inv(X.T @ X)
            se_rho = np.sqrt(s2 * XtX_inv[1, 1])
            tstat = float(beta[1] / se_rho)
            best = (aic, k, tstat)
    assert best is not None
    _, k_best, stat = best
    crit = {
        lvl: b[0] + b[1] / n + b[2] / n**2 + b[3] / n**3
        for lvl, b in _ADF_CRIT_CONST.items()
    }
    return AdfResult(
        statistic=stat,
        lags=k_best,
        critical_values=crit,
        reject_unit_root_at_5pct=stat < crit[0.05],
    )


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    # parameters were estimated from the sample (Lilliefors caveat): the
    # asymptotic p-value is biased conservative
    params_estimated: bool = True


def ks_normal_test(x: np.ndarray) -> KsResult:
    """One-sample KS statistic against Normal(mean, sd) fitted to the data."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 20:
        raise DataError(f"need at least 20 observations, got {n}")
    mu = x.mean()
    sd = x.std(ddof=1)
    if sd == 0.0:
        raise NumericalError("zero variance")
    from scipy.stats import norm

    cdf = norm.cdf(np.sort(x), loc=mu, scale=sd)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf)
    d_minus = np.max(cdf - (i - 1) / n)
    d = float(max(d_plus, d_minus))
    p = float(kolmogorov(np.sqrt(n) * d))
    return KsResult(statistic=d, p_value=p)
