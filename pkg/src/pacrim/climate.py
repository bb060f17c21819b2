"""Daily climate series: acquisition, caching, validation, summaries.

Data come either from local CSV files (``date,value`` with ISO dates) or
from the NASA POWER daily point API (T2M for temperature, PRECTOTCORR for
precipitation).  Fetched data are cached as CSV so repeated runs are
reproducible and offline-friendly.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Variable",
    "Season",
    "Location",
    "DailySeries",
    "StatsSummary",
    "load_csv",
    "write_csv",
    "fetch_power",
    "summary_stats",
    "seasonal_split",
    "rainy_day_rate",
    "ensure_coverage",
    "TORONTO",
    "CHICAGO",
]

MISSING_SENTINEL = -999.0
RAINY_THRESHOLD_MM = 0.01  # POWER's smallest recorded wet-day amount

POWER_URL = "https://power.larc.nasa.gov/api/temporal/daily/point"


class Variable(str, Enum):
    TEMPERATURE = "temperature_C"
    PRECIPITATION = "precipitation_mm"

    @property
    def power_parameter(self) -> str:
        return "T2M" if self is Variable.TEMPERATURE else "PRECTOTCORR"


class Season(str, Enum):
    WINTER = "winter"
    SPRING = "spring"
    SUMMER = "summer"
    FALL = "fall"
    FULL_YEAR = "full_year"

    @property
    def months(self) -> tuple[int, ...]:
        return _SEASON_MONTHS[self]


_SEASON_MONTHS = {
    Season.WINTER: (12, 1, 2),
    Season.SPRING: (3, 4, 5),
    Season.SUMMER: (6, 7, 8),
    Season.FALL: (9, 10, 11),
    Season.FULL_YEAR: tuple(range(1, 13)),
}


@dataclass(frozen=True)
class Location:
    name: str
    latitude: float
    longitude: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


TORONTO = Location("Toronto", 43.6523, -79.3839)
CHICAGO = Location("Chicago", 41.4047, -89.6420)


@dataclass(frozen=True)
class DailySeries:
    """Dated sequence of one climate variable at one location.

    Dates are strictly increasing; gaps are allowed and can be inspected
    via :meth:`gap_count`.  ``dropped_count`` records sentinel rows removed
    at load time.
    """

    location: Location
    variable: Variable
    dates: tuple[dt.date, ...]
    values: np.ndarray
    dropped_count: int = 0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(values):
            raise DataError("dates and values lengths differ")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur <= prev:
                kind = "duplicate date" if cur == prev else "non-monotone dates"
                raise DataError(f"{kind}: {cur.isoformat()}")
        if self.variable is Variable.PRECIPITATION and len(values) and values.min() < 0:
            raise DataError("negative precipitation value")
        values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.dates)

    def gap_count(self) -> int:
        """Number of calendar days missing between first and last date."""
        if len(self.dates) < 2:
            return 0
        span = (self.dates[-1] - self.dates[0]).days + 1
        return span - len(self.dates)

    def subset(self, keep: np.ndarray) -> "DailySeries":
        idx = np.flatnonzero(np.asarray(keep))
        return DailySeries(
            self.location,
            self.variable,
            tuple(self.dates[i] for i in idx),
            self.values[idx],
        )

    def month_mask(self, months: tuple[int, ...]) -> np.ndarray:
        mset = set(months)
        return np.array([d.month in mset for d in self.dates])


@dataclass(frozen=True)
class StatsSummary:
    min: float
    max: float
    mean: float
    std_dev: float
    skewness: float
    excess_kurtosis: float
    degenerate: bool = False


def load_csv(
    path: str | Path,
    variable: Variable,
    location: Location | None = None,
) -> DailySeries:
    """Read a ``date,value`` CSV into a validated series.

    Rows whose value equals the -999 missing sentinel are dropped and
    counted in ``dropped_count``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    dates: list[dt.date] = []
    values: list[float] = []
    dropped = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "date"):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected 'date,value', got {row!r}")
            try:
                date = dt.date.fromisoformat(row[0].strip())
                value = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparseable row: {exc}") from exc
            if value == MISSING_SENTINEL or math.isnan(value):
                dropped += 1
                continue
            dates.append(date)
            values.append(value)
    loc = location or Location(path.stem, 0.0, 0.0)
    series = DailySeries(loc, variable, tuple(dates), np.array(values))
    object.__setattr__(series, "dropped_count", dropped)
    return series


def write_csv(series: DailySeries, path: str | Path) -> Path:
    """Write a series to the canonical ``date,value`` CSV schema."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "value"])
        for date, value in zip(series.dates, series.values):
            writer.writerow([date.isoformat(), repr(float(value))])
    return path


def _cache_path(cache_dir: Path, location: Location, variable: Variable,
                start: dt.date, end: dt.date) -> Path:
    name = location.name.lower().replace(" ", "_")
    return cache_dir / f"{name}_{variable.power_parameter}_{start.isoformat()}_{end.isoformat()}.csv"


def fetch_power(
    location: Location,
    start: dt.date,
    end: dt.date,
    variable: Variable,
    cache_dir: str | Path = "power_cache",
    offline: bool = False,
    retries: int = 3,
    timeout: float = 60.0,
) -> DailySeries:
    """Fetch a daily series from NASA POWER, caching the result as CSV.

    A second call with the same arguments is served from the cache.  With
    ``offline=True`` a cache miss is an error instead of a network call.
    """
    if end < start:
        raise DataError(f"invalid range: {start} .. {end}")
    cache_dir = Path(cache_dir)
    cache_file = _cache_path(cache_dir, location, variable, start, end)
    if cache_file.is_file():
        return load_csv(cache_file, variable, location)
    if offline:
        raise DataError(f"offline and no cached file {cache_file}")

    import requests  # deferred: offline paths never need it

    params = {
        "start": start.strftime("%Y%m%d"),
        "end": end.strftime("%Y%m%d"),
        "latitude": location.latitude,
        "longitude": location.longitude,
        "community": "RE",
        "parameters": variable.power_parameter,
        "format": "JSON",
    }
    last_exc: Exception | None = None
    for attempt in range(retries):
        try:
            resp = requests.get(POWER_URL, params=params, timeout=timeout)
            resp.raise_for_status()
            payload = resp.json()
            break
        except Exception as exc:  # noqa: BLE001 - retried, then wrapped
            last_exc = exc
            time.sleep(2.0 ** attempt)
    else:
        raise DataError(f"POWER request failed after {retries} attempts: {last_exc}")

    try:
        raw = payload["properties"]["parameter"][variable.power_parameter]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed POWER payload: missing {exc}") from exc

    dates: list[dt.date] = []
    values: list[float] = []
    for key in sorted(raw):
        dates.append(dt.datetime.strptime(key, "%Y%m%d").date())
        values.append(float(raw[key]))
    series = DailySeries(location, variable, tuple(dates), np.array(values))

    cache_dir.mkdir(parents=True, exist_ok=True)
    write_csv(series, cache_file)
    return load_csv(cache_file, variable, location)  # sentinel filtering on the way in


def summary_stats(series: DailySeries) -> StatsSummary:
    """Sample summary: std with n-1, skewness and EXCESS kurtosis.

    A constant series has zero variance; its skewness/kurtosis are
    reported as NaN with ``degenerate=True`` rather than silently zero.
    """
    x = series.values
    n = len(x)
    if n < 2:
        raise DataError(f"need at least 2 observations, got {n}")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    if std == 0.0:
        return StatsSummary(mean, mean, mean, 0.0, float("nan"), float("nan"), degenerate=True)
    z = (x - mean) / x.std(ddof=0)  # population std for standardized moments
    skew = float(np.mean(z**3))
    ex_kurt = float(np.mean(z**4) - 3.0)
    return StatsSummary(float(x.min()), float(x.max()), mean, std, skew, ex_kurt)


def seasonal_split(series: DailySeries, season: Season) -> DailySeries:
    """Subseries whose dates fall in the season's months; full_year is identity."""
    if season is Season.FULL_YEAR:
        return series
    return series.subset(series.month_mask(season.months))


def rainy_day_rate(
    series: DailySeries,
    month: int,
    threshold: float = RAINY_THRESHOLD_MM,
) -> float:
    """Average across years of the number of wet days in the given month.

    This is the Poisson rate estimate for the compound precipitation model.
    """
    if series.variable is not Variable.PRECIPITATION:
        raise DataError("rainy_day_rate requires a precipitation series")
    if not 1 <= month <= 12:
        raise DataError(f"month out of range: {month}")
    counts: dict[int, int] = {}
    for date, value in zip(series.dates, series.values):
        if date.month == month:
            counts.setdefault(date.year, 0)
            if value >= threshold:
                counts[date.year] += 1
    if not counts:
        raise DataError(f"no data for month {month}")
    return float(np.mean(list(counts.values())))


def ensure_coverage(
    series: DailySeries,
    start: dt.date,
    end: dt.date,
    max_missing: float = 0.01,
) -> None:
    """Refuse model fitting when too much of the requested window is missing."""
    span = (end - start).days + 1
    if span <= 0:
        raise DataError(f"invalid range: {start} .. {end}")
    present = sum(1 for d in series.dates if start <= d <= end)
    missing_frac = 1.0 - present / span
    if missing_frac > max_missing:
        raise DataError(
            f"{missing_frac:.1%} of {start}..{end} missing (limit {max_missing:.1%})"
        )
