import datetime as dt

import numpy as np
import pytest

from pacrim.climate import DailySeries, Location, Variable

TEST_LOC = Location("Testville", 43.0, -79.0)


def daily_dates(start: dt.date, n: int) -> list[dt.date]:
    return [start + dt.timedelta(days=i) for i in range(n)]


def make_series(values, start=dt.date(2000, 1, 1), variable=Variable.TEMPERATURE,
                location=TEST_LOC) -> DailySeries:
    values = np.asarray(values, dtype=float)
    return DailySeries(location, variable, tuple(daily_dates(start, len(values))), values)


def synthetic_temperature(n_days=4000, start=dt.date(1990, 1, 1), noise=0.0, seed=0,
                          beta=(5.0, 0.0, 3.0, 1.0), period=365.25) -> DailySeries:
    """Harmonic curve plus optional iid noise."""
    t = np.arange(n_days, dtype=float)
    w = 2 * np.pi / period
    b0, b1, b2, b3 = beta
    y = b0 + b1 * t + b2 * np.sin(w * t) + b3 * np.cos(w * t)
    if noise:
        y = y + np.random.default_rng(seed).normal(0, noise, n_days)
    return make_series(y, start=start)


def synthetic_precipitation(years=range(2000, 2010), lam_per_month=12.0,
                            alpha=0.5, beta=0.3, seed=0) -> DailySeries:
    """Wet/dry daily precipitation with Gamma wet-day amounts, all seasons."""
    rng = np.random.default_rng(seed)
    start = dt.date(min(years), 1, 1)
    end = dt.date(max(years), 12, 31)
    n = (end - start).days + 1
    p_wet = min(lam_per_month / 30.0, 1.0)
    wet = rng.random(n) < p_wet
    values = np.where(wet, rng.gamma(alpha, 1.0 / beta, n) + 0.01, 0.0)
    return make_series(values, start=start, variable=Variable.PRECIPITATION)


@pytest.fixture
def tmp_csv(tmp_path):
    def write(rows, name="series.csv", header=True):
        path = tmp_path / name
        lines = (["date,value"] if header else []) + [f"{d},{v}" for d, v in rows]
        path.write_text("\n".join(lines) + "\n")
        return path
    return write
