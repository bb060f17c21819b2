"""Command-line pipeline: ingest -> fit -> forecast -> price -> report.

A single YAML config drives every stage.  All randomness flows from one
master seed through named substreams, so inserting a stage never perturbs
the draws of another.  Every artifact lands in the output directory and
is listed in ``manifest.json`` with its content digest; a failed stage
leaves partial artifacts behind and marks the manifest as failed.

Exit codes: 0 ok, 2 bad config, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .arma import ArmaModel, fit_arma, forecast_arma, select_order
from .climate import (
    DailySeries,
    Location,
    Season,
    Variable,
    fetch_power,
    load_csv,
    rainy_day_rate,
    summary_stats,
    seasonal_split,
    write_csv,
)
from .errors import ConfigError, DataError, NumericalError, PacrimError
from .forecaster import (
    build_features,
    nn_band_halfwidths,
    predict_mlp,
    train_mlp,
)
from .harmonic import HarmonicFit, fit_harmonic, predict_harmonic
from .nn import RpropConfig
from .pricing import (
    ContractKind,
    ContractSpec,
    closed_form_precip_price,
    hba_price,
    mc_precip_price,
    pacific_rim_index,
    strangle_payoff,
)
from .precip import fit_gamma_mle, simulate_precip_month, wet_day_samples

__all__ = ["RunConfig", "load_config", "run_pipeline", "emit_comparison", "main"]

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# configuration

_SCHEMA = {
    "location": {"name": str, "latitude": float, "longitude": float},
    "variable": str,
    "start": dt.date,
    "end": dt.date,
    "data": {"csv": str},
    "arma": {"p": int, "q": int, "p_max": int, "q_max": int},
    "nn": {"hidden": list, "epochs": int, "val_fraction": float},
    "precip": {"season": str, "month": int},
    "forecast": {"horizon": int, "start": dt.date, "levels": list},
    "simulate": {"n_sim": int, "n_days": int},
    "contract": {
        "kind": str, "K_call": float, "K_put": float,
        "d_call": float, "d_put": float, "r": float, "tau": float,
        "n_days": int,
    },
    "seed": int,
    "out": str,
    "offline": bool,
}


def _check_schema(node, schema, path: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        for key, value in node.items():
            if key not in schema:
                raise ConfigError(f"unknown config field: {path + key}")
            _check_schema(value, schema[key], f"{path}{key}.")
        return
    p = path.rstrip(".")
    if schema is dt.date:
        if not isinstance(node, dt.date):
            raise ConfigError(f"{p}: expected a date (YYYY-MM-DD)")
    elif schema is float:
        if not isinstance(node, (int, float)) or isinstance(node, bool):
            raise ConfigError(f"{p}: expected a number")
    elif not isinstance(node, schema) or isinstance(node, bool) is not (schema is bool):
        raise ConfigError(f"{p}: expected {schema.__name__}")


@dataclass(frozen=True)
class RunConfig:
    location: Location
    variable: Variable
    start: dt.date
    end: dt.date
    seed: int
    out: Path
    csv: Path | None = None
    offline: bool = False
    arma: dict = field(default_factory=dict)
    nn: dict = field(default_factory=dict)
    precip: dict = field(default_factory=dict)
    forecast: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    contract: ContractSpec | None = None


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse and schema-check the YAML config; overrides win over the file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw.update(overrides or {})
    _check_schema(raw, _SCHEMA, "")

    for key in ("location", "variable", "start", "end", "seed", "out"):
        if key not in raw:
            raise ConfigError(f"missing required config field: {key}")
    loc = raw["location"]
    try:
        location = Location(loc["name"], float(loc["latitude"]), float(loc["longitude"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"location: {exc}") from exc
    try:
        variable = Variable(raw["variable"])
    except ValueError as exc:
        raise ConfigError(
            f"variable: {raw['variable']!r} is not one of "
            f"{[v.value for v in Variable]}") from exc
    if raw["end"] < raw["start"]:
        raise ConfigError("end: must be on or after start")

    contract = None
    if "contract" in raw:
        c = raw["contract"]
        try:
            contract = ContractSpec(
                kind=ContractKind(c.get("kind", "precipitation")),
                K_call=float(c["K_call"]), K_put=float(c["K_put"]),
                d_call=float(c.get("d_call", 20.0)), d_put=float(c.get("d_put", 20.0)),
                r=float(c.get("r", 0.0)), tau=float(c.get("tau", 31.0 / 365.0)),
                n_days=int(c.get("n_days", 31)),
            )
        except (KeyError, ValueError, DataError) as exc:
            raise ConfigError(f"contract: {exc}") from exc

    return RunConfig(
        location=location, variable=variable,
        start=raw["start"], end=raw["end"],
        seed=int(raw["seed"]), out=Path(raw["out"]),
        csv=Path(raw["data"]["csv"]) if "data" in raw else None,
        offline=bool(raw.get("offline", False)),
        arma=raw.get("arma", {}), nn=raw.get("nn", {}),
        precip=raw.get("precip", {}), forecast=raw.get("forecast", {}),
        simulate=raw.get("simulate", {}), contract=contract,
    )


def substream_seed(master: int, name: str) -> int:
    """Stable per-stage seed derived from the master seed and stage name."""
    blob = f"{master}/{name}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


# ---------------------------------------------------------------------------
# artifact plumbing

class Workspace:
    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[dict[str, str]] = []

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        digest = hashlib.sha256(text.encode()).hexdigest()
        self.artifacts = [a for a in self.artifacts if a["name"] != name]
        self.artifacts.append({"name": name, "path": str(path), "sha256": digest})
        return path

    def finish(self, config_digest: str, seed: int,
               failed_stage: str | None = None) -> Path:
        manifest = {
            "status": "failed" if failed_stage else "ok",
            "config_digest": config_digest,
            "seed": seed,
            "artifacts": sorted(self.artifacts, key=lambda a: a["name"]),
        }
        if failed_stage:
            manifest["failed_stage"] = failed_stage
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path


def _config_digest(config: RunConfig) -> str:
    blob = json.dumps({
        "location": [config.location.name, config.location.latitude,
                     config.location.longitude],
        "variable": config.variable.value,
        "start": str(config.start), "end": str(config.end),
        "seed": config.seed,
        "arma": config.arma, "nn": config.nn, "precip": config.precip,
        "forecast": config.forecast, "simulate": config.simulate,
        "contract": config.contract.to_dict() if config.contract else None,
    }, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# stages

def _load_series(config: RunConfig, ws: Workspace) -> DailySeries:
    if config.csv is not None:
        series = load_csv(config.csv, config.variable, config.location)
    else:
        series = fetch_power(config.location, config.start, config.end,
                             config.variable, offline=config.offline)
    mask = np.array([config.start <= d <= config.end for d in series.dates])
    series = series.subset(mask)
    if len(series) == 0:
        raise DataError("no observations inside the configured date range")
    write_csv(series, ws.out / "data.csv")
    ws.write("data.csv", (ws.out / "data.csv").read_text())
    return series


def stage_stats(config: RunConfig, ws: Workspace, series: DailySeries) -> None:
    st = summary_stats(series)
    ws.write("stats.json", json.dumps({
        "n": len(series), "mean": st.mean, "std_dev": st.std_dev,
        "min": st.min, "max": st.max,
        "skewness": st.skewness, "excess_kurtosis": st.excess_kurtosis,
    }, indent=2, allow_nan=True))


def stage_harmonic(config: RunConfig, ws: Workspace, series: DailySeries) -> HarmonicFit:
    fit = fit_harmonic(series)
    ws.write("harmonic.json", fit.to_json())
    return fit


def stage_arma(config: RunConfig, ws: Workspace, fit: HarmonicFit) -> ArmaModel:
    opts = config.arma
    if "p" in opts and "q" in opts:
        p, q = int(opts["p"]), int(opts["q"])
        table = None
    else:
        p, q, table = select_order(fit.residuals,
                                   int(opts.get("p_max", 5)),
                                   int(opts.get("q_max", 5)))
    model = fit_arma(fit.residuals, p, q)
    ws.write("arma.json", model.to_json())
    if table is not None:
        ws.write("order_table.json", json.dumps(
            {f"{pp},{qq}": cell for (pp, qq), cell in sorted(table.items())},
            indent=2))
    return model


def stage_nn(config: RunConfig, ws: Workspace, series: DailySeries,
             fit: HarmonicFit):
    opts = config.nn
    rows = build_features(series, fit)
    cfg = RpropConfig(max_epochs=int(opts.get("epochs", 500)),
                      seed=substream_seed(config.seed, "train-nn"))
    model, history = train_mlp(
        rows, cfg,
        val_fraction=float(opts.get("val_fraction", 0.1)),
        hidden=tuple(opts.get("hidden", (7, 5, 3))),
    )
    ws.write("nn_model.json", model.to_json())
    lines = ["epoch,train_mse,val_mse"]
    lines += [f"{i},{tr!r},{va!r}" for i, (tr, va) in
              enumerate(zip(history["train"], history["val"]))]
    ws.write("nn_history.csv", "\n".join(lines) + "\n")
    return model, rows


def _forecast_dates(config: RunConfig) -> list[dt.date]:
    fc = config.forecast
    h = int(fc.get("horizon", 31))
    start = fc.get("start", config.end + dt.timedelta(days=1))
    return [start + dt.timedelta(days=i) for i in range(h)]


def stage_forecasts(config: RunConfig, ws: Workspace, series: DailySeries,
                    hfit: HarmonicFit, arma: ArmaModel, nn_model, rows) -> dict:
    dates = _forecast_dates(config)
    h = len(dates)
    levels = tuple(float(x) for x in config.forecast.get("levels", (0.75, 0.95)))

    harm_path = predict_harmonic(hfit, dates)
    ws.write("forecast_harmonic.json", json.dumps(
        {"dates": [str(d) for d in dates], "mean_path": harm_path.tolist()},
        indent=2))

    fc = forecast_arma(arma, hfit, h, levels=levels, dates=dates)
    ws.write("forecast_arma.json", fc.to_json())

    out = {"harmonic": harm_path, "harmonic_arma": fc.mean_path, "dates": dates,
           "arma_bands": fc.bands}
    if nn_model is not None:
        lookup = dict(zip(series.dates, series.values))
        harm = predict_harmonic(hfit, dates)
        base_year = series.dates[0].year
        from .forecaster import FeatureRow
        nn_rows = []
        for date, hval in zip(dates, harm):
            if date.month == 2 and date.day == 29:
                continue
            d1 = date.replace(year=date.year - 1)
            d2 = date.replace(year=date.year - 2)
            if d1 not in lookup or d2 not in lookup:
                raise DataError(f"forecast date {date} lacks lagged observations")
            nn_rows.append(FeatureRow(
                date=date, year=date.year - base_year, month=date.month,
                day=date.day, lag1y=float(lookup[d1]), lag2y=float(lookup[d2]),
                harmonic=float(hval), target=np.nan,
            ))
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            nn_path = predict_mlp(nn_model, nn_rows)
        ws.write("forecast_nn.json", json.dumps(
            {"dates": [str(r.date) for r in nn_rows],
             "mean_path": nn_path.tolist()}, indent=2))
        out["nn"] = nn_path
        out["nn_dates"] = [r.date for r in nn_rows]
    return out


def stage_precip(config: RunConfig, ws: Workspace, series: DailySeries):
    month = int(config.precip.get("month", 12))
    season_name = config.precip.get("season")
    sub = series
    if season_name is not None:
        try:
            season = Season[season_name.upper()]
        except KeyError as exc:
            raise ConfigError(f"precip.season: unknown season {season_name!r}") from exc
        sub = seasonal_split(series, season)
    wet = wet_day_samples(sub)
    gfit = fit_gamma_mle(wet)
    lam = rainy_day_rate(series, month)
    payload = gfit.to_dict()
    payload["rainy_day_rate"] = lam
    payload["month"] = month
    ws.write("gamma_fit.json", json.dumps(payload, indent=2))
    return gfit, lam


def stage_simulate(config: RunConfig, ws: Workspace, gfit, lam: float):
    opts = config.simulate
    result = simulate_precip_month(
        lam, gfit.alpha, gfit.beta,
        n_days=int(opts.get("n_days", 31)),
        n_sim=int(opts.get("n_sim", 1000)),
        seed=substream_seed(config.seed, "simulate"),
    )
    ws.write("simulation.json", json.dumps({
        "n_sim": len(result.paths),
        "pr_index_estimate": result.pr_index_estimate,
        "mean_path": result.mean_path.tolist(),
        "monthly_total_mean": float(result.monthly_totals().mean()),
    }, indent=2))
    return result


def stage_price(config: RunConfig, ws: Workspace, gfit, lam: float,
                sim_result=None) -> None:
    spec = config.contract
    if spec is None:
        raise ConfigError("contract: required for the price stage")
    reports = {}
    reports["closed_form"] = closed_form_precip_price(
        gfit.alpha, gfit.beta, spec.n_days, spec, lam=lam)
    reports["monte_carlo"] = mc_precip_price(
        lam, gfit.alpha, gfit.beta, spec,
        n_sim=int(config.simulate.get("n_sim", 1000)),
        seed=substream_seed(config.seed, "price-mc"))
    if sim_result is not None:
        indices = sim_result.paths.sum(axis=1) / spec.n_days
        payoffs = np.array([strangle_payoff(x, spec) for x in indices])
        reports["hba"] = hba_price(payoffs, r=spec.r, tau=spec.tau)
    for name, rep in reports.items():
        ws.write(f"price_{name}.json", rep.to_json())


def emit_comparison(forecasts: dict[str, object], actual: DailySeries) -> tuple[str, str]:
    """Per-method MSE and PR-index next to the actual; (csv, text table).

    Forecast values may be DailySeries (dates are verified against
    ``actual``) or plain arrays assumed aligned.
    """
    if not forecasts:
        raise DataError("no forecasts to compare")
    y = actual.values
    rows: list[tuple[str, float | None, float]] = []
    for name, fc in sorted(forecasts.items()):
        if isinstance(fc, DailySeries):
            for da, df in zip(actual.dates, fc.dates):
                if da != df:
                    raise DataError(f"{name}: date mismatch at {df} (expected {da})")
            if len(fc) != len(actual):
                raise DataError(f"{name}: length {len(fc)} != {len(actual)}")
            values = fc.values
        else:
            values = np.asarray(fc, dtype=float)
            if values.shape != y.shape:
                raise DataError(f"{name}: length {values.size} != {y.size}")
        mse = float(np.mean((values - y) ** 2))
        rows.append((name, mse, pacific_rim_index(values)))
    rows.append(("actual", None, pacific_rim_index(y)))

    csv_lines = ["method,mse,pr_index"]
    for name, mse, pr in rows:
        csv_lines.append(f"{name},{'' if mse is None else repr(mse)},{pr!r}")
    csv_text = "\n".join(csv_lines) + "\n"

    w = max(len(r[0]) for r in rows)
    txt_lines = [f"{'method'.ljust(w)}  {'mse':>12}  {'pr_index':>12}"]
    for name, mse, pr in rows:
        mse_s = "-" if mse is None else f"{mse:12.6f}"
        txt_lines.append(f"{name.ljust(w)}  {mse_s:>12}  {pr:12.6f}")
    return csv_text, "\n".join(txt_lines) + "\n"


def stage_compare(config: RunConfig, ws: Workspace, series: DailySeries,
                  forecasts: dict) -> None:
    dates = forecasts["dates"]
    lookup = dict(zip(series.dates, series.values))
    missing = [d for d in dates if d not in lookup]
    if missing:
        raise DataError(f"no actual observations for forecast date {missing[0]}")
    mask = np.array([d in set(dates) for d in series.dates])
    actual = series.subset(mask)
    cmp_map = {
        "harmonic": forecasts["harmonic"],
        "harmonic_arma": forecasts["harmonic_arma"],
    }
    if "nn" in forecasts and len(forecasts["nn"]) == len(actual):
        cmp_map["nn"] = forecasts["nn"]
    csv_text, txt = emit_comparison(cmp_map, actual)
    ws.write("comparison.csv", csv_text)
    ws.write("comparison.txt", txt)


# ---------------------------------------------------------------------------
# drivers

def run_pipeline(config: RunConfig, stages: list[str] | None = None) -> int:
    """Run the configured stages in order; returns a process exit code."""
    ws = Workspace(config.out)
    digest = _config_digest(config)
    if config.variable is Variable.TEMPERATURE:
        default = ["fetch", "stats", "fit-harmonic", "fit-arma", "train-nn",
                   "forecast", "compare"]
    else:
        default = ["fetch", "stats", "fit-precip", "simulate", "price"]
    stages = stages or default

    state: dict[str, object] = {}
    current = ""
    try:
        for current in stages:
            if current == "fetch":
                state["series"] = _load_series(config, ws)
            elif current == "stats":
                stage_stats(config, ws, state["series"])
            elif current == "fit-harmonic":
                state["harmonic"] = stage_harmonic(config, ws, state["series"])
            elif current == "fit-arma":
                state["arma"] = stage_arma(config, ws, state["harmonic"])
            elif current == "train-nn":
                state["nn"], state["rows"] = stage_nn(
                    config, ws, state["series"], state["harmonic"])
            elif current == "forecast":
                state["forecasts"] = stage_forecasts(
                    config, ws, state["series"], state["harmonic"],
                    state["arma"], state.get("nn"), state.get("rows"))
            elif current == "compare":
                stage_compare(config, ws, state["series"], state["forecasts"])
            elif current == "fit-precip":
                state["gamma"], state["lam"] = stage_precip(config, ws, state["series"])
            elif current == "simulate":
                state["sim"] = stage_simulate(config, ws, state["gamma"], state["lam"])
            elif current == "price":
                stage_price(config, ws, state["gamma"], state["lam"], state.get("sim"))
            else:
                raise ConfigError(f"unknown stage: {current}")
    except KeyError as exc:
        ws.finish(digest, config.seed, failed_stage=current)
        print(f"stage {current}: missing prerequisite stage output {exc}",
              file=sys.stderr)
        return EXIT_BAD_CONFIG
    except ConfigError as exc:
        ws.finish(digest, config.seed, failed_stage=current)
        print(f"stage {current}: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except DataError as exc:
        ws.finish(digest, config.seed, failed_stage=current)
        print(f"stage {current}: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except NumericalError as exc:
        ws.finish(digest, config.seed, failed_stage=current)
        print(f"stage {current}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    ws.finish(digest, config.seed)
    return EXIT_OK


_SUBCOMMAND_STAGES = {
    "fetch": ["fetch"],
    "stats": ["fetch", "stats"],
    "fit-harmonic": ["fetch", "fit-harmonic"],
    "fit-arma": ["fetch", "fit-harmonic", "fit-arma"],
    "train-nn": ["fetch", "fit-harmonic", "train-nn"],
    "fit-precip": ["fetch", "fit-precip"],
    "simulate": ["fetch", "fit-precip", "simulate"],
    "price": ["fetch", "fit-precip", "simulate", "price"],
    "compare": ["fetch", "fit-harmonic", "fit-arma", "train-nn", "forecast",
                "compare"],
    "run": None,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pacrim",
        description="Weather-derivative pipeline: fit, forecast, price.",
    )
    parser.add_argument("command", choices=sorted(_SUBCOMMAND_STAGES))
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--offline", action="store_true",
                        help="serve data from cache only; never hit the network")
    args = parser.parse_args(argv)

    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.offline:
        overrides["offline"] = True
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    return run_pipeline(config, _SUBCOMMAND_STAGES[args.command])


if __name__ == "__main__":
    sys.exit(main())
