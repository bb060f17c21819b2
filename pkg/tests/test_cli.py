import datetime as dt
import json

import numpy as np
import pytest
import yaml

from pacrim.cli import (
    EXIT_BAD_CONFIG,
    EXIT_DATA_ERROR,
    EXIT_OK,
    emit_comparison,
    load_config,
    main,
    run_pipeline,
    substream_seed,
)
from pacrim.climate import Variable, write_csv
from pacrim.errors import ConfigError, DataError

from conftest import make_series, synthetic_precipitation, synthetic_temperature


@pytest.fixture()
def temp_csv(tmp_path):
    s = synthetic_temperature(n_days=2192, start=dt.date(2000, 1, 1),
                              noise=2.0, seed=30)
    return write_csv(s, tmp_path / "temp.csv")


@pytest.fixture()
def temp_config(tmp_path, temp_csv):
    def build(**extra):
        cfg = {
            "location": {"name": "Testville", "latitude": 43.0, "longitude": -79.0},
            "variable": "temperature_C",
            "start": dt.date(2000, 1, 1),
            "end": dt.date(2005, 12, 31),
            "data": {"csv": str(temp_csv)},
            "arma": {"p": 1, "q": 0},
            "nn": {"epochs": 30},
            "forecast": {"horizon": 31, "start": dt.date(2005, 12, 1)},
            "seed": 11,
            "out": str(tmp_path / "run"),
        }
        cfg.update(extra)
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(cfg))
        return path
    return build


@pytest.fixture()
def precip_config(tmp_path):
    s = synthetic_precipitation(years=range(2000, 2010), lam_per_month=12.0,
                                alpha=0.6, beta=0.4, seed=31)
    csv = write_csv(s, tmp_path / "precip.csv")
    cfg = {
        "location": {"name": "Testville", "latitude": 43.0, "longitude": -79.0},
        "variable": "precipitation_mm",
        "start": dt.date(2000, 1, 1),
        "end": dt.date(2009, 12, 31),
        "data": {"csv": str(csv)},
        "precip": {"month": 12},
        "simulate": {"n_sim": 400, "n_days": 31},
        "contract": {"kind": "precipitation", "K_call": 0.8, "K_put": 0.3,
                     "d_call": 20.0, "d_put": 20.0},
        "seed": 5,
        "out": str(tmp_path / "prun"),
    }
    path = tmp_path / "pconfig.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestLoadConfig:
    def test_valid(self, temp_config):
        cfg = load_config(temp_config())
        assert cfg.variable is Variable.TEMPERATURE
        assert cfg.seed == 11

    def test_unknown_field(self, temp_config):
        with pytest.raises(ConfigError, match="unknown config field: armagrid"):
            load_config(temp_config(armagrid=3))

    def test_unknown_nested_field(self, temp_config):
        with pytest.raises(ConfigError, match="arma.pmax"):
            load_config(temp_config(arma={"pmax": 3}))

    def test_bad_type_names_path(self, temp_config):
        with pytest.raises(ConfigError, match="location.latitude"):
            load_config(temp_config(
                location={"name": "x", "latitude": "high", "longitude": 0.0}))

    def test_missing_required(self, temp_config):
        path = temp_config()
        raw = yaml.safe_load(path.read_text())
        del raw["seed"]
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="seed"):
            load_config(path)

    def test_bad_variable(self, temp_config):
        with pytest.raises(ConfigError, match="variable"):
            load_config(temp_config(variable="humidity"))

    def test_inverted_dates(self, temp_config):
        with pytest.raises(ConfigError, match="end"):
            load_config(temp_config(end=dt.date(1999, 1, 1)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_overrides_win(self, temp_config, tmp_path):
        cfg = load_config(temp_config(), {"seed": 99, "out": str(tmp_path / "o")})
        assert cfg.seed == 99
        assert cfg.out.name == "o"


class TestSubstreams:
    def test_deterministic_and_distinct(self):
        a = substream_seed(11, "train-nn")
        assert a == substream_seed(11, "train-nn")
        assert a != substream_seed(11, "simulate")
        assert a != substream_seed(12, "train-nn")


class TestTemperaturePipeline:
    def test_full_run_artifacts(self, temp_config, tmp_path):
        cfg = load_config(temp_config())
        assert run_pipeline(cfg) == EXIT_OK
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        names = {a["name"] for a in manifest["artifacts"]}
        assert {"data.csv", "stats.json", "harmonic.json", "arma.json",
                "nn_model.json", "forecast_harmonic.json", "forecast_arma.json",
                "forecast_nn.json", "comparison.csv"} <= names
        # every artifact exists and its digest matches its content
        import hashlib
        for art in manifest["artifacts"]:
            text = (tmp_path / "run" / art["name"]).read_text()
            assert hashlib.sha256(text.encode()).hexdigest() == art["sha256"]

    def test_comparison_contents(self, temp_config, tmp_path):
        cfg = load_config(temp_config())
        run_pipeline(cfg)
        lines = (tmp_path / "run" / "comparison.csv").read_text().splitlines()
        assert lines[0] == "method,mse,pr_index"
        methods = [ln.split(",")[0] for ln in lines[1:]]
        assert methods == ["harmonic", "harmonic_arma", "nn", "actual"]

    def test_determinism(self, temp_config, tmp_path):
        path = temp_config()
        cfg1 = load_config(path, {"out": str(tmp_path / "a")})
        cfg2 = load_config(path, {"out": str(tmp_path / "b")})
        assert run_pipeline(cfg1) == EXIT_OK
        assert run_pipeline(cfg2) == EXIT_OK
        m1 = json.loads((tmp_path / "a" / "manifest.json").read_text())
        for art in m1["artifacts"]:
            t1 = (tmp_path / "a" / art["name"]).read_text()
            t2 = (tmp_path / "b" / art["name"]).read_text()
            assert t1 == t2, art["name"]

    def test_failure_marks_manifest(self, temp_config, tmp_path):
        # forecast window beyond the data: compare stage has no actuals
        cfg = load_config(temp_config(
            forecast={"horizon": 31, "start": dt.date(2006, 6, 1)}))
        code = run_pipeline(cfg)
        assert code == EXIT_DATA_ERROR
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert manifest["failed_stage"] in ("forecast", "compare")
        # partial artifacts retained
        assert any(a["name"] == "harmonic.json" for a in manifest["artifacts"])


class TestPrecipPipeline:
    def test_full_run(self, precip_config, tmp_path):
        cfg = load_config(precip_config)
        assert run_pipeline(cfg) == EXIT_OK
        manifest = json.loads((tmp_path / "prun" / "manifest.json").read_text())
        names = {a["name"] for a in manifest["artifacts"]}
        assert {"gamma_fit.json", "simulation.json", "price_closed_form.json",
                "price_monte_carlo.json", "price_hba.json"} <= names
        price = json.loads((tmp_path / "prun" / "price_closed_form.json").read_text())
        assert price["price"] >= 0.0


class TestMain:
    def test_run_exit_ok(self, precip_config):
        assert main(["run", "--config", str(precip_config)]) == EXIT_OK

    def test_bad_config_exit(self, temp_config):
        assert main(["run", "--config", str(temp_config(armagrid=1))]) == EXIT_BAD_CONFIG

    def test_missing_config_exit(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "no.yaml")]) == EXIT_BAD_CONFIG

    def test_missing_data_exit(self, temp_config, tmp_path):
        path = temp_config(data={"csv": str(tmp_path / "gone.csv")})
        assert main(["run", "--config", str(path)]) == EXIT_DATA_ERROR

    def test_stats_subcommand(self, temp_config, tmp_path):
        out = tmp_path / "statsrun"
        code = main(["stats", "--config", str(temp_config()), "--out", str(out)])
        assert code == EXIT_OK
        stats = json.loads((out / "stats.json").read_text())
        assert stats["n"] == 2192
        names = {a["name"] for a in
                 json.loads((out / "manifest.json").read_text())["artifacts"]}
        assert names == {"data.csv", "stats.json"}

    def test_seed_override_changes_stochastic_artifacts(self, precip_config, tmp_path):
        o1, o2 = tmp_path / "s1", tmp_path / "s2"
        main(["simulate", "--config", str(precip_config), "--out", str(o1),
              "--seed", "1"])
        main(["simulate", "--config", str(precip_config), "--out", str(o2),
              "--seed", "2"])
        s1 = json.loads((o1 / "simulation.json").read_text())
        s2 = json.loads((o2 / "simulation.json").read_text())
        assert s1["pr_index_estimate"] != s2["pr_index_estimate"]


class TestEmitComparison:
    def test_identity_zero_mse(self):
        s = make_series([1.0, 2.0, 3.0])
        csv_text, txt = emit_comparison({"only": s.values.copy()}, s)
        lines = csv_text.splitlines()
        assert lines[1].startswith("only,0.0,")
        assert lines[2].startswith("actual,,")
        assert "only" in txt and "actual" in txt

    def test_date_mismatch_names_first(self):
        actual = make_series([1.0, 2.0, 3.0], start=dt.date(2020, 1, 1))
        shifted = make_series([1.0, 2.0, 3.0], start=dt.date(2020, 1, 2))
        with pytest.raises(DataError, match="2020-01-02"):
            emit_comparison({"m": shifted}, actual)

    def test_length_mismatch(self):
        actual = make_series([1.0, 2.0, 3.0])
        with pytest.raises(DataError, match="m"):
            emit_comparison({"m": np.ones(4)}, actual)

    def test_empty(self):
        with pytest.raises(DataError):
            emit_comparison({}, make_series([1.0, 2.0]))
