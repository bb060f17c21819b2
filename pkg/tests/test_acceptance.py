"""End-to-end acceptance gate.

One test per criterion; each prints a single CRITERION line so the run
log reads as a checklist.  The two live-data criteria are skipped
automatically when the data provider is unreachable.
"""

import datetime as dt
import math
import time
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import gamma as sp_gamma

from pacrim.arma import fit_arma, select_order, simulate_arma
from pacrim.climate import (
    Location,
    Season,
    Variable,
    fetch_power,
    rainy_day_rate,
    seasonal_split,
    summary_stats,
)
from pacrim.forecaster import build_features, predict_mlp, train_mlp
from pacrim.harmonic import fit_harmonic, predict_harmonic
from pacrim.arma import forecast_arma
from pacrim.nn import Dense, Network, Rprop, RpropConfig
from pacrim.precip import (
    fit_gamma_mle,
    generate_estimator_dataset,
    simulate_precip_month,
    train_param_estimator,
    wet_day_samples,
)
from pacrim.pricing import (
    ContractKind,
    ContractSpec,
    closed_form_precip_price,
    mc_precip_price,
    strangle_payoff,
)
from pacrim.special import reg_incomplete_gamma


def report(num: int, ok: bool, detail: str = "") -> None:
    line = f"CRITERION {num}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    # also write past pytest's capture so the checklist shows up in the
    # plain run log even for passing criteria
    if _CAPMAN is not None:
        with _CAPMAN.global_and_fixture_disabled():
            print(line, flush=True)
    assert ok, line


_CAPMAN = None


@pytest.fixture(autouse=True)
def _expose_capture_manager(request):
    global _CAPMAN
    _CAPMAN = request.config.pluginmanager.getplugin("capturemanager")


def _network_available() -> bool:
    import requests

    try:
        requests.get("https://power.larc.nasa.gov", timeout=5)
        return True
    except requests.RequestException:
        return False


NETWORK = _network_available()
TORONTO = Location("Toronto", 43.6523, -79.3839)
CHICAGO = Location("Chicago", 41.4047, -89.6420)

# grid-study sample size and estimator training budget, tuned so the
# selection rate and MAE targets hold inside the runtime limits
SELECTION_N = 20_000
ESTIMATOR_GRID_SIZE = 2304
ESTIMATOR_EPOCHS = 120


def test_criterion_1_special_functions():
    t0 = time.time()
    ok = True
    for x in np.arange(0.1, 10.05, 0.1):
        _, q = reg_incomplete_gamma(1.0, x)
        if abs(q - math.exp(-x)) > 1e-12:
            ok = False
    a_grid = np.linspace(0.05, 20.0, 20)
    x_grid = np.linspace(0.05, 30.0, 20)
    for a in a_grid:
        ga = math.gamma(a) if a < 170 else math.exp(math.lgamma(a))
        for x in x_grid:
            p, q = reg_incomplete_gamma(a, x)
            ref, _ = quad(lambda t: t ** (a - 1) * math.exp(-t), 0.0, x,
                          epsabs=1e-14, epsrel=1e-12, limit=200)
            if abs(p - ref / ga) > 1e-10:
                ok = False
    elapsed = time.time() - t0
    report(1, ok and elapsed < 1.0, f"{elapsed:.2f}s")


def test_criterion_2_closed_form_vs_monte_carlo():
    t0 = time.time()
    alpha, beta, n_days = 0.580, 0.377, 31
    # all days wet: the index is exactly Gamma(n*alpha, rate n*beta), so
    # the fixed-n closed form and the path simulation price the same claim
    a, b = n_days * alpha, n_days * beta
    dist = sp_gamma(a, scale=1.0 / b)
    k50, k75, k90, k99 = (dist.ppf(p) for p in (0.50, 0.75, 0.90, 0.99))
    sim = simulate_precip_month(10.0 * n_days, alpha, beta, n_days=n_days,
                                n_sim=50_000, seed=1002)
    indices = sim.paths.sum(axis=1) / n_days
    ok = True
    details = []
    for K_call in (k75, k90, k99):
        spec = ContractSpec(kind=ContractKind.PRECIPITATION, K_call=K_call,
                            K_put=k50, d_call=20.0, d_put=20.0)
        cf = closed_form_precip_price(alpha, beta, n_days, spec,
                                      n_wet=n_days).price
        payoffs = np.array([strangle_payoff(x, spec) for x in indices])
        mc = payoffs.mean()
        se = payoffs.std(ddof=1) / math.sqrt(len(payoffs))
        details.append(f"|{cf - mc:.4f}|<{3 * se:.4f}")
        if abs(cf - mc) > 3 * se:
            ok = False
    elapsed = time.time() - t0
    report(2, ok and elapsed < 30.0, f"{elapsed:.1f}s " + " ".join(details))


def test_criterion_3_gamma_mle_recovery():
    t0 = time.time()
    alpha, beta = 0.354, 0.166
    rng = np.random.default_rng(1003)
    big = rng.gamma(alpha, 1.0 / beta, 100_000)
    fit = fit_gamma_mle(big)
    point_ok = abs(fit.alpha - alpha) < 0.01 and abs(fit.beta - beta) < 0.01

    cover_a = cover_b = 0
    for _ in range(100):
        x = rng.gamma(alpha, 1.0 / beta, 3800)
        f = fit_gamma_mle(x)
        if f.ci_alpha[0] <= alpha <= f.ci_alpha[1]:
            cover_a += 1
        if f.ci_beta[0] <= beta <= f.ci_beta[1]:
            cover_b += 1
    elapsed = time.time() - t0
    ok = point_ok and cover_a >= 90 and cover_b >= 90 and elapsed < 120
    report(3, ok, f"point ({fit.alpha:.4f},{fit.beta:.4f}) "
                  f"coverage {cover_a}/{cover_b} in {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_4_arma_recovery_and_selection():
    t0 = time.time()
    phi_true = [1.5426, -0.5511]
    theta_true = [-0.7387, -0.2842, 0.0947]

    rng = np.random.default_rng(1004)
    y = simulate_arma(phi_true, theta_true, 1.0, 20_000, rng)
    model = fit_arma(y, 2, 3)
    coef = np.concatenate([model.phi, model.theta])
    truth = np.array(phi_true + theta_true)
    recover_ok = bool(np.all(np.abs(coef - truth) < 0.05))

    hits = 0
    picks = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(20):
            ysel = simulate_arma(phi_true, theta_true, 1.0, SELECTION_N,
                                 np.random.default_rng(2000 + rep))
            p, q, _ = select_order(ysel, 5, 5)
            picks.append((p, q))
            if (p, q) == (2, 3):
                hits += 1
    elapsed = time.time() - t0
    ok = recover_ok and hits >= 10 and elapsed < 600
    report(4, ok, f"max coef err {np.max(np.abs(coef - truth)):.4f}, "
                  f"picks (2,3) {hits}/20 in {elapsed:.0f}s")


def test_criterion_5_neural_gradient_and_rprop():
    t0 = time.time()
    ok = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = Network([
            Dense(6, 7, "sigmoid", rng=rng),
            Dense(7, 5, "sigmoid", rng=rng),
            Dense(5, 3, "sigmoid", rng=rng),
            Dense(3, 1, "identity", rng=rng),
        ])
        x = rng.normal(size=(12, 6))
        y = rng.normal(size=(12, 1))
        net.zero_grads()
        pred = net.forward(x, training=False)
        net.backward_mse(pred, y)
        analytic = [g.copy() for g in net.grads()]
        eps = 1e-5
        for p, a in zip(net.params(), analytic):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + eps
                lp = float(np.mean((net.forward(x) - y) ** 2))
                p[idx] = orig - eps
                lm = float(np.mean((net.forward(x) - y) ** 2))
                p[idx] = orig
                num = (lp - lm) / (2 * eps)
                denom = max(abs(num) + abs(a[idx]), 1e-8)
                if abs(a[idx] - num) / denom >= 1e-4:
                    ok = False

    xs = np.linspace(-np.pi, np.pi, 500)[:, None]
    ys = np.sin(xs)
    rng = np.random.default_rng(0)
    net = Network([
        Dense(1, 7, "sigmoid", rng=rng),
        Dense(7, 5, "sigmoid", rng=rng),
        Dense(5, 3, "sigmoid", rng=rng),
        Dense(3, 1, "identity", rng=rng),
    ])
    opt = Rprop(net.params(), RpropConfig(max_epochs=2000, seed=0))
    loss = math.inf
    for _ in range(2000):
        loss = net.mse_and_grad(xs, ys)
        opt.step(net.grads())
    elapsed = time.time() - t0
    ok = ok and loss < 1e-3 and elapsed < 60
    report(5, ok, f"sin MSE {loss:.2e} in {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_6_estimator_network():
    t0 = time.time()
    rng = np.random.default_rng(1006)
    k = ESTIMATOR_GRID_SIZE
    grid = np.column_stack([rng.uniform(0.01, 5.0, k), rng.uniform(0.01, 5.0, k)])
    data = generate_estimator_dataset(grid, seed=1006)
    model, history = train_param_estimator(
        data, epochs=ESTIMATOR_EPOCHS,
        config=RpropConfig(max_epochs=ESTIMATOR_EPOCHS, seed=1006))

    holdout = np.random.default_rng(1007)
    tgrid = np.column_stack([holdout.uniform(0.01, 5.0, 400),
                             holdout.uniform(0.01, 5.0, 400)])
    tdata = generate_estimator_dataset(tgrid, seed=1007)
    pred = model.predict(tdata.images)
    mae = np.mean(np.abs(pred - tgrid), axis=0)

    # "no sustained rise": the trailing-window mean of the validation loss
    # never exceeds twice the running minimum after the minimum epoch
    val = np.array(history["val"])
    i_min = int(np.argmin(val))
    window = 10
    tail = val[i_min:]
    sustained_rise = False
    for i in range(len(tail) - window):
        if tail[i : i + window].mean() > 2.0 * val[i_min]:
            sustained_rise = True
            break
    elapsed = time.time() - t0
    ok = mae[0] < 0.1 and mae[1] < 0.1 and not sustained_rise and elapsed < 1800
    report(6, ok, f"MAE alpha {mae[0]:.4f} beta {mae[1]:.4f}, "
                  f"val min at {i_min}/{len(val)}, {elapsed:.0f}s")


@pytest.mark.network
@pytest.mark.skipif(not NETWORK, reason="data provider unreachable; "
                    "criterion skipped per its offline clause")
def test_criterion_7_live_data_regression(tmp_path):
    start, end = dt.date(1981, 1, 1), dt.date(2023, 12, 31)
    temp = fetch_power(TORONTO, start, end, Variable.TEMPERATURE,
                       cache_dir=tmp_path)
    st = summary_stats(temp)
    mean_ok = abs(st.mean - 8.37017) / 8.37017 < 0.05
    std_ok = abs(st.std_dev - 9.254303) / 9.254303 < 0.05

    rain_t = fetch_power(TORONTO, start, end, Variable.PRECIPITATION,
                         cache_dir=tmp_path)
    rain_c = fetch_power(CHICAGO, start, end, Variable.PRECIPITATION,
                         cache_dir=tmp_path)
    lam_t = rainy_day_rate(rain_t, 12)
    lam_c = rainy_day_rate(rain_c, 12)
    lam_ok = (abs(lam_t - 29.79) / 29.79 < 0.10
              and abs(lam_c - 23.14) / 23.14 < 0.10)
    report(7, mean_ok and std_ok and lam_ok,
           f"mean {st.mean:.4f} std {st.std_dev:.4f} "
           f"rates {lam_t:.2f}/{lam_c:.2f}")


@pytest.mark.network
@pytest.mark.skipif(not NETWORK, reason="data provider unreachable; "
                    "criterion skipped per its offline clause")
def test_criterion_8_december_2023_forecast_ordering(tmp_path):
    start, end = dt.date(1990, 1, 1), dt.date(2023, 12, 31)
    series = fetch_power(TORONTO, start, dt.date(2023, 11, 30),
                         Variable.TEMPERATURE, cache_dir=tmp_path)
    actual = fetch_power(TORONTO, dt.date(2023, 12, 1), end,
                         Variable.TEMPERATURE, cache_dir=tmp_path)

    hfit = fit_harmonic(series)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p, q, _ = select_order(hfit.residuals, 3, 3)
        arma = fit_arma(hfit.residuals, p, q)
    dates = list(actual.dates)
    h = len(dates)
    fc = forecast_arma(arma, hfit, h, levels=(0.95,), dates=dates)
    harm_path = predict_harmonic(hfit, dates)

    rows = build_features(series, hfit)
    model, _ = train_mlp(rows, RpropConfig(max_epochs=400, seed=8))
    lookup = dict(zip(series.dates, series.values))
    from pacrim.forecaster import FeatureRow
    base_year = series.dates[0].year
    nn_rows = [FeatureRow(
        date=d, year=d.year - base_year, month=d.month, day=d.day,
        lag1y=float(lookup[d.replace(year=d.year - 1)]),
        lag2y=float(lookup[d.replace(year=d.year - 2)]),
        harmonic=float(hv), target=np.nan,
    ) for d, hv in zip(dates, harm_path)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        nn_path = predict_mlp(model, nn_rows)

    y = actual.values
    mse_h = float(np.mean((harm_path - y) ** 2))
    mse_ha = float(np.mean((fc.mean_path - y) ** 2))
    mse_nn = float(np.mean((nn_path - y) ** 2))
    order_ok = mse_nn <= mse_ha <= mse_h

    lo, hi = fc.bands[0.95]
    band_lo = float(np.mean(lo))
    band_hi = float(np.mean(hi))
    pr_ok = all(band_lo <= float(np.mean(path)) <= band_hi
                for path in (harm_path, fc.mean_path, nn_path))
    report(8, order_ok and pr_ok,
           f"MSE nn {mse_nn:.2f} <= ha {mse_ha:.2f} <= h {mse_h:.2f}")


def test_criterion_9_pricing_identities():
    t0 = time.time()
    rng = np.random.default_rng(1009)
    ok = True
    for _ in range(1000):
        alpha = rng.uniform(0.1, 3.0)
        beta = rng.uniform(0.1, 3.0)
        n_wet = int(rng.integers(1, 32))
        mean_index = n_wet * alpha / (31.0 * beta)
        kp, kc = np.sort(rng.uniform(0.2, 2.5, 2) * mean_index)
        d_call, d_put = rng.uniform(1.0, 50.0, 2)
        r, tau = rng.uniform(0.0, 0.1), rng.uniform(0.01, 1.0)
        spec0 = ContractSpec(kind=ContractKind.PRECIPITATION, K_call=kc,
                             K_put=kp, d_call=d_call, d_put=d_put,
                             r=0.0, tau=tau)
        spec_r = ContractSpec(kind=ContractKind.PRECIPITATION, K_call=kc,
                              K_put=kp, d_call=d_call, d_put=d_put,
                              r=r, tau=tau)
        p0 = closed_form_precip_price(alpha, beta, 31, spec0, n_wet=n_wet).price
        pr = closed_form_precip_price(alpha, beta, 31, spec_r, n_wet=n_wet).price
        # discount factorization is exact
        if not math.isclose(pr, p0 * math.exp(-r * tau), rel_tol=1e-12, abs_tol=1e-15):
            ok = False

        # payoff dead zone between the strikes
        mid = 0.5 * (kp + kc)
        if strangle_payoff(mid, spec0) != 0.0:
            ok = False
        # payoff convexity in the index
        x1, x2 = rng.uniform(0.0, 3.0 * mean_index, 2)
        lamw = rng.uniform(0.0, 1.0)
        xm = lamw * x1 + (1 - lamw) * x2
        if strangle_payoff(xm, spec0) > (lamw * strangle_payoff(x1, spec0)
                                         + (1 - lamw) * strangle_payoff(x2, spec0)
                                         + 1e-12):
            ok = False
        # widening either strike cannot raise the price
        spec_wide = ContractSpec(kind=ContractKind.PRECIPITATION,
                                 K_call=kc * 1.1, K_put=kp * 0.9,
                                 d_call=d_call, d_put=d_put, r=0.0, tau=tau)
        pw = closed_form_precip_price(alpha, beta, 31, spec_wide, n_wet=n_wet).price
        if pw > p0 + 1e-9:
            ok = False
    elapsed = time.time() - t0
    report(9, ok and elapsed < 10.0, f"{elapsed:.1f}s")
