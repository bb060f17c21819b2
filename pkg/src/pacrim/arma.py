"""Exact-likelihood ARMA(p, q) estimation, order selection, forecasting.

The Gaussian likelihood is computed exactly through the state-space
prediction-error (innovations) recursion with the stationary initial
covariance, so short series are handled without conditioning hacks.
Optimization is derivative-free simplex over an unconstrained
reparameterization: partial autocorrelations mapped through tanh, which
keeps every iterate causal and invertible.  Conditional sum-of-squares
style estimates (Hannan-Rissanen) are used only to initialize.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import DataError, NumericalError
from .harmonic import HarmonicFit

__all__ = [
    "ArmaModel",
    "Forecast",
    "fit_arma",
    "select_order",
    "forecast_arma",
    "simulate_arma",
    "psi_weights",
    "ar_roots_outside",
]

_BOUNDARY_PACF = 0.9999


# ---------------------------------------------------------------------------
# likelihood kernel

@njit(cache=True)
def _kalman_parts(y, phi, theta):
    """Prediction-error decomposition with unit innovation variance.

    Returns (sum log F_t, sum v_t^2 / F_t); the caller concentrates the
    innovation variance out.  Returns (nan, nan) if the filter degenerates.
    """
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q + 1)
    n = y.shape[0]

    T = np.zeros((r, r))
    for i in range(p):
        T[i, 0] = phi[i]
    for i in range(r - 1):
        T[i, i + 1] = 1.0
    R = np.zeros(r)
    R[0] = 1.0
    for j in range(q):
        R[j + 1] = theta[j]
    RR = np.outer(R, R)

    # stationary initial covariance: vec(P) = (I - T (x) T)^{-1} vec(RR')
    r2 = r * r
    A = np.zeros((r2, r2))
    b = np.zeros(r2)
    for i in range(r):
        for j in range(r):
            row = i * r + j
            b[row] = RR[i, j]
            for k in range(r):
                for l in range(r):
                    A[row, k * r + l] = -T[i, k] * T[j, l]
            A[row, row] += 1.0
    vecP = np.linalg.solve(A, b)
    P = vecP.reshape(r, r)

    # T is companion: (T x)_i = c_i x_0 + x_{i+1}, with x_r taken as 0.
    # All recursions below exploit that structure on preallocated buffers.
    a = np.zeros(r)
    anew = np.empty(r)
    K = np.zeros(r)
    c = np.zeros(r)
    for i in range(p):
        c[i] = phi[i]
    M = np.empty((r, r))
    Pn = np.empty((r, r))
    sumlogF = 0.0
    ssq = 0.0
    steady = False
    F = 1.0
    logF = 0.0
    t = 0
    while t < n and not steady:
        F = P[0, 0]
        if not (F > 1e-12) or not np.isfinite(F):
            return np.nan, np.nan
        logF = np.log(F)
        for i in range(r - 1):
            K[i] = (c[i] * P[0, 0] + P[i + 1, 0]) / F
        K[r - 1] = c[r - 1] * P[0, 0] / F
        # Pnew = T P T' + RR - K K' F, via M = T P
        for i in range(r):
            for j in range(r):
                m = c[i] * P[0, j]
                if i + 1 < r:
                    m += P[i + 1, j]
                M[i, j] = m
        for i in range(r):
            for j in range(r):
                u = c[j] * M[i, 0] + RR[i, j] - K[i] * K[j] * F
                if j + 1 < r:
                    u += M[i, j + 1]
                Pn[i, j] = u
        diff = 0.0
        for i in range(r):
            for j in range(i, r):
                s = 0.5 * (Pn[i, j] + Pn[j, i])
                d = abs(s - P[i, j])
                if d > diff:
                    diff = d
                P[i, j] = s
                P[j, i] = s
        # steady state reached: freeze the gain and innovation variance
        if diff < 1e-13 * (1.0 + F):
            steady = True
        v = y[t] - a[0]
        sumlogF += logF
        ssq += v * v / F
        for i in range(r - 1):
            anew[i] = c[i] * a[0] + a[i + 1] + K[i] * v
        anew[r - 1] = c[r - 1] * a[0] + K[r - 1] * v
        for i in range(r):
            a[i] = anew[i]
        t += 1
    if t < n:
        sumlogF += (n - t) * logF
        for s_ in range(t, n):
            v = y[s_] - a[0]
            ssq += v * v / F
            for i in range(r - 1):
                anew[i] = c[i] * a[0] + a[i + 1] + K[i] * v
            anew[r - 1] = c[r - 1] * a[0] + K[r - 1] * v
            for i in range(r):
                a[i] = anew[i]
    return sumlogF, ssq


@njit(cache=True)
def _final_state(y, phi, theta):
    """One-step-ahead predicted state after the last observation."""
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q + 1)
    n = y.shape[0]
    T = np.zeros((r, r))
    for i in range(p):
        T[i, 0] = phi[i]
    for i in range(r - 1):
        T[i, i + 1] = 1.0
    R = np.zeros(r)
    R[0] = 1.0
    for j in range(q):
        R[j + 1] = theta[j]
    RR = np.outer(R, R)
    r2 = r * r
    A = np.zeros((r2, r2))
    b = np.zeros(r2)
    for i in range(r):
        for j in range(r):
            row = i * r + j
            b[row] = RR[i, j]
            for k in range(r):
                for l in range(r):
                    A[row, k * r + l] = -T[i, k] * T[j, l]
            A[row, row] += 1.0
    P = np.linalg.solve(A, b).reshape(r, r)
    a = np.zeros(r)
    for t in range(n):
        F = P[0, 0]
        v = y[t] - a[0]
        K = (T @ np.ascontiguousarray(P[:, 0])) / F
        a = T @ a + K * v
        P = T @ P @ T.T + RR - np.outer(K, K) * F
        P = 0.5 * (P + P.T)
    return a


def exact_loglik(y: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> tuple[float, float]:
    """Exact Gaussian log-likelihood with the variance concentrated out.

    Returns (loglik, sigma2_hat).
    """
    y = np.ascontiguousarray(y, dtype=float)
    n = len(y)
    sumlogF, ssq = _kalman_parts(y, np.asarray(phi, float), np.asarray(theta, float))
    if not np.isfinite(sumlogF):
        return -np.inf, np.nan
    sigma2 = ssq / n
    if sigma2 <= 0:
        return -np.inf, np.nan
    ll = -0.5 * n * np.log(2.0 * np.pi) - 0.5 * sumlogF - 0.5 * n * np.log(sigma2) - 0.5 * n
    return float(ll), float(sigma2)


# ---------------------------------------------------------------------------
# stationarity-preserving parameterization

def pacf_to_coef(pacf: np.ndarray) -> np.ndarray:
    """Map partial autocorrelations in (-1,1) to AR-style coefficients.

    The returned a satisfy: 1 - a1 z - ... - ak z^k has all roots outside
    the unit circle (Durbin-Levinson / Monahan recursion).
    """
    a = np.zeros(0)
    for rk in pacf:
        k = len(a)
        new = np.empty(k + 1)
        new[:k] = a - rk * a[::-1]
        new[k] = rk
        a = new
    return a


def coef_to_pacf(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pacf_to_coef`; input must be stationary."""
    a = np.asarray(a, dtype=float).copy()
    out = []
    for k in range(len(a), 0, -1):
        rk = a[k - 1]
        if abs(rk) >= 1.0:
            raise NumericalError("coefficients on or outside stationarity boundary")
        out.append(rk)
        if k > 1:
            prev = (a[: k - 1] + rk * a[: k - 1][::-1]) / (1.0 - rk * rk)
            a = prev
    return np.array(out[::-1])


def _unpack(z: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    rp = np.tanh(z[:p])
    rq = np.tanh(z[p:])
    phi = pacf_to_coef(rp)
    # MA polynomial is 1 + theta1 z + ...; invertibility mirrors the AR map
    theta = -pacf_to_coef(rq)
    return phi, theta


def _pack(phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    rp = coef_to_pacf(np.asarray(phi))
    rq = coef_to_pacf(-np.asarray(theta))
    r = np.concatenate([rp, rq])
    r = np.clip(r, -0.98, 0.98)
    return np.arctanh(r)


def ar_roots_outside(coefs: np.ndarray, kind: str = "ar") -> bool:
    """True when the (AR or MA) polynomial has all roots outside the unit circle."""
    coefs = np.asarray(coefs, dtype=float)
    if len(coefs) == 0:
        return True
    if kind == "ar":
        poly = np.concatenate([[1.0], -coefs])
    else:
        poly = np.concatenate([[1.0], coefs])
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0)) if len(roots) else True


# ---------------------------------------------------------------------------
# model container

@dataclass(frozen=True)
class ArmaModel:
    p: int
    q: int
    phi: np.ndarray
    theta: np.ndarray
    sigma2: float
    loglik: float
    aic: float
    bic: float
    coef_se: np.ndarray
    offset: float                      # mean removed before fitting
    n_obs: int
    boundary: bool = False             # parameters pinned near stationarity edge
    train: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "p": self.p,
                "q": self.q,
                "phi": self.phi.tolist(),
                "theta": self.theta.tolist(),
                "sigma2": self.sigma2,
                "loglik": self.loglik,
                "aic": self.aic,
                "bic": self.bic,
                "coef_se": self.coef_se.tolist(),
                "offset": self.offset,
                "n_obs": self.n_obs,
                "boundary": self.boundary,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ArmaModel":
        d = json.loads(text)
        return cls(
            p=d["p"], q=d["q"],
            phi=np.array(d["phi"]), theta=np.array(d["theta"]),
            sigma2=d["sigma2"], loglik=d["loglik"], aic=d["aic"], bic=d["bic"],
            coef_se=np.array(d["coef_se"]), offset=d["offset"],
            n_obs=d["n_obs"], boundary=d.get("boundary", False),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


@dataclass(frozen=True)
class Forecast:
    horizon: int
    mean_path: np.ndarray
    bands: dict[float, tuple[np.ndarray, np.ndarray]]
    step_variance: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "horizon": self.horizon,
                "mean_path": self.mean_path.tolist(),
                "bands": {
                    str(lvl): [lo.tolist(), hi.tolist()]
                    for lvl, (lo, hi) in self.bands.items()
                },
                "step_variance": self.step_variance.tolist(),
            },
            indent=2,
        )


# ---------------------------------------------------------------------------
# estimation

def _hannan_rissanen(x: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Rough initial (phi, theta) via long-AR residual regression."""
    n = len(x)
    m = min(max(20, 2 * (p + q)), n // 4)
    # long AR by least squares
    Xl = np.column_stack([x[m - i - 1 : n - i - 1] for i in range(m)])
    a_long, *_ = np.linalg.lstsq(Xl, x[m:], rcond=None)
    e = np.zeros(n)
    e[m:] = x[m:] - Xl @ a_long
    k = max(p, q)
    cols = [x[m + k - i - 1 : n - i - 1] for i in range(p)]
    cols += [e[m + k - j - 1 : n - j - 1] for j in range(q)]
    if cols:
        Xr = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(Xr, x[m + k :], rcond=None)
    else:
        coef = np.zeros(0)
    return coef[:p], coef[p:]


def fit_arma(
    residuals: np.ndarray,
    p: int,
    q: int,
    max_iter: int = 2000,
    compute_se: bool = True,
    xatol: float = 1e-6,
    fatol: float = 1e-8,
    extra_starts: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> ArmaModel:
    """Maximum-likelihood ARMA(p, q) fit on a (centered) residual series.

    The series mean is removed internally and recorded as ``offset``; the
    harmonic layer owns the deterministic mean in the two-stage pipeline.
    Coefficient standard errors come from the inverse numerical Hessian of
    the profile log-likelihood at the optimum.
    """
    x = np.asarray(residuals, dtype=float)
    n = len(x)
    k_params = p + q + 1
    if n <= 10 * k_params:
        raise DataError(f"series too short for ARMA({p},{q}): n={n}")
    offset = float(x.mean())
    x = x - offset

    if p == 0 and q == 0:
        sigma2 = float(np.mean(x**2))
        if sigma2 <= 0:
            raise NumericalError("zero-variance series")
        ll = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1.0)
        return ArmaModel(
            p=0, q=0, phi=np.zeros(0), theta=np.zeros(0), sigma2=sigma2,
            loglik=ll, aic=-2 * ll + 2.0, bic=-2 * ll + np.log(n),
            coef_se=np.zeros(0), offset=offset, n_obs=n, train=x,
        )

    def nll(z: np.ndarray) -> float:
        phi, theta = _unpack(z, p, q)
        ll, _ = exact_loglik(x, phi, theta)
        return -ll if np.isfinite(ll) else 1e12

    # informed starts: caller-provided warm starts, then Hannan-Rissanen;
    # the zero start is only a fallback when neither is available
    starts = []
    for phi0, theta0 in extra_starts or []:
        try:
            starts.append(_pack(np.asarray(phi0), np.asarray(theta0)))
        except (NumericalError, np.linalg.LinAlgError):
            pass
    try:
        phi0, theta0 = _hannan_rissanen(x, p, q)
        starts.append(_pack(phi0, theta0))
    except (NumericalError, np.linalg.LinAlgError):
        pass
    if not starts:
        starts.append(np.zeros(p + q))

    best = None
    for z0 in starts:
        res = minimize(
            nll, z0, method="Nelder-Mead",
            options={"maxiter": max_iter * (p + q), "xatol": xatol, "fatol": fatol},
        )
        if best is None or res.fun < best.fun:
            best = res
    assert best is not None
    if not np.isfinite(best.fun) or best.fun >= 1e12:
        raise NumericalError(f"ARMA({p},{q}) likelihood maximization failed to converge")

    z_opt = best.x
    phi, theta = _unpack(z_opt, p, q)
    ll, sigma2 = exact_loglik(x, phi, theta)

    pacfs = np.tanh(z_opt)
    boundary = bool(np.any(np.abs(pacfs) > _BOUNDARY_PACF))
    if boundary:
        warnings.warn(
            f"ARMA({p},{q}) estimate pinned near the stationarity/invertibility "
            "boundary; standard errors are unreliable",
            stacklevel=2,
        )

    se = _profile_se(x, phi, theta) if compute_se else np.full(p + q, np.nan)
    aic = -2.0 * ll + 2.0 * k_params
    bic = -2.0 * ll + np.log(n) * k_params
    return ArmaModel(
        p=p, q=q, phi=phi, theta=theta, sigma2=sigma2, loglik=ll,
        aic=aic, bic=bic, coef_se=se, offset=offset, n_obs=n,
        boundary=boundary, train=x,
    )


def _profile_se(x: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """SEs from the central-difference Hessian of the profile likelihood."""
    p, q = len(phi), len(theta)
    coef = np.concatenate([phi, theta])
    k = p + q

    def f(c: np.ndarray) -> float:
        ll, _ = exact_loglik(x, c[:p], c[p:])
        return -ll

    h = 1e-4 * np.maximum(1.0, np.abs(coef))
    H = np.zeros((k, k))
    f0 = f(coef)
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k); ei[i] = h[i]
            ej = np.zeros(k); ej[j] = h[j]
            if i == j:
                H[i, i] = (f(coef + ei) - 2 * f0 + f(coef - ei)) / h[i] ** 2
            else:
                H[i, j] = H[j, i] = (
                    f(coef + ei + ej) - f(coef + ei - ej)
                    - f(coef - ei + ej) + f(coef - ei - ej)
                ) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(H)
        diag = np.diag(cov)
        if np.any(diag <= 0):
            raise np.linalg.LinAlgError
        return np.sqrt(diag)
    except np.linalg.LinAlgError:
        return np.full(k, np.nan)


def select_order(
    residuals: np.ndarray,
    p_max: int = 5,
    q_max: int = 5,
) -> tuple[int, int, dict[tuple[int, int], dict[str, float]]]:
    """Fit every (p, q) on the grid; return the AIC-minimizing pair.

    Ties break toward smaller p+q, then smaller p.  Failed cells carry
    ``{"failed": True}`` and are excluded from the argmin.  Cells whose
    estimate pins at the stationarity/invertibility boundary are recorded
    with ``"boundary": True`` and likewise excluded: over-parameterized
    cells can reach spuriously high likelihood through near-cancelling
    AR/MA factors on the boundary, where the AIC penalty is meaningless.
    """
    if p_max > 5 or q_max > 5:
        raise DataError("grid bounded at order five")
    table: dict[tuple[int, int], dict[str, float]] = {}
    admissible: list[tuple[float, int, int]] = []
    solutions: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    cells = sorted(
        ((p, q) for p in range(p_max + 1) for q in range(q_max + 1)),
        key=lambda c: (c[0] + c[1], c[0]),
    )
    for p, q in cells:
        # warm-start each cell from its immediate sub-models (zero-padded);
        # a nested cell then always reaches at least the sub-model fit and
        # cannot wander to a spurious distant optimum on a flat ridge
        warm = []
        for pp, qq in ((p - 1, q), (p, q - 1)):
            if (pp, qq) in solutions:
                phi0, theta0 = solutions[(pp, qq)]
                warm.append((
                    np.concatenate([phi0, np.zeros(p - pp)]),
                    np.concatenate([theta0, np.zeros(q - qq)]),
                ))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                # looser simplex tolerances: AIC comparisons only need
                # the log-likelihood to a fraction of a unit
                model = fit_arma(residuals, p, q, max_iter=200,
                                 compute_se=False, xatol=3e-3, fatol=1e-2,
                                 extra_starts=warm)
            solutions[(p, q)] = (model.phi, model.theta)
            cell = {"aic": model.aic, "bic": model.bic, "loglik": model.loglik}
            if model.boundary:
                cell["boundary"] = True
            else:
                admissible.append((model.aic, p, q))
            table[(p, q)] = cell
        except (DataError, NumericalError):
            table[(p, q)] = {"failed": True}
    if not admissible:
        raise NumericalError("no admissible model in the order grid")
    admissible.sort(key=lambda t: (t[0], t[1] + t[2], t[1]))
    _, p_best, q_best = admissible[0]
    return p_best, q_best, table


# ---------------------------------------------------------------------------
# forecasting and simulation

def psi_weights(phi: np.ndarray, theta: np.ndarray, h: int) -> np.ndarray:
    """First h MA(inf) weights psi_0..psi_{h-1} of the ARMA transfer function."""
    psi = np.zeros(h)
    psi[0] = 1.0
    p, q = len(phi), len(theta)
    for j in range(1, h):
        val = theta[j - 1] if j <= q else 0.0
        for i in range(1, min(j, p) + 1):
            val += phi[i - 1] * psi[j - i]
        psi[j] = val
    return psi


def forecast_arma(
    model: ArmaModel,
    harmonic: HarmonicFit | None,
    h: int,
    levels: tuple[float, ...] = (0.75, 0.95),
    dates=None,
) -> Forecast:
    """Multi-step forecast: harmonic curve plus ARMA conditional mean.

    Band half-width at step k is z_{(1+level)/2} * sqrt(MSE_k), with MSE_k
    from the psi-weight expansion.  ``dates`` (length h) locate the
    harmonic component; omit it for the pure ARMA part around the offset.
    """
    if h < 1:
        raise DataError("horizon must be >= 1")
    for lvl in levels:
        if not 0.0 < lvl < 1.0:
            raise DataError(f"confidence level out of (0,1): {lvl}")
    if model.train is not None and (model.p or model.q):
        a = _final_state(
            np.ascontiguousarray(model.train),
            np.ascontiguousarray(model.phi),
            np.ascontiguousarray(model.theta),
        )
        r = len(a)
        T = np.zeros((r, r))
        for i in range(model.p):
            T[i, 0] = model.phi[i]
        for i in range(r - 1):
            T[i, i + 1] = 1.0
        arma_mean = np.zeros(h)
        for k in range(h):
            arma_mean[k] = a[0]
            a = T @ a
    else:
        arma_mean = np.zeros(h)

    mean_path = arma_mean + model.offset
    if harmonic is not None:
        if dates is None:
            raise DataError("dates are required to evaluate the harmonic component")
        if len(dates) != h:
            raise DataError(f"need {h} dates, got {len(dates)}")
        from .harmonic import predict_harmonic

        mean_path = mean_path + predict_harmonic(harmonic, list(dates))

    psi = psi_weights(model.phi, model.theta, h)
    mse = model.sigma2 * np.cumsum(psi**2)
    bands = {}
    for lvl in levels:
        z = norm.ppf(0.5 * (1.0 + lvl))
        half = z * np.sqrt(mse)
        bands[lvl] = (mean_path - half, mean_path + half)
    return Forecast(horizon=h, mean_path=mean_path, bands=bands, step_variance=mse)


def simulate_arma(
    phi: np.ndarray,
    theta: np.ndarray,
    sigma2: float,
    n: int,
    rng: np.random.Generator,
    burn: int = 500,
) -> np.ndarray:
    """Simulate a zero-mean Gaussian ARMA path (after burn-in)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    p, q = len(phi), len(theta)
    total = n + burn
    eps = rng.normal(0.0, np.sqrt(sigma2), total)
    x = np.zeros(total)
    for t in range(total):
        val = eps[t]
        for j in range(1, min(t, q) + 1):
            val += theta[j - 1] * eps[t - j]
        for i in range(1, min(t, p) + 1):
            val += phi[i - 1] * x[t - i]
        x[t] = val
    return x[burn:]
