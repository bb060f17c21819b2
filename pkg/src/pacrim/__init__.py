"""Weather derivative pricing on Pacific Rim temperature and precipitation indices."""

from .climate import (
    CHICAGO,
    TORONTO,
    DailySeries,
    Location,
    Season,
    StatsSummary,
    Variable,
    fetch_power,
    load_csv,
    rainy_day_rate,
    seasonal_split,
    summary_stats,
    write_csv,
)
from .errors import ConfigError, DataError, NumericalError, PacrimError
from .harmonic import HarmonicFit, fit_harmonic, predict_harmonic
from .arma import ArmaModel, Forecast, fit_arma, forecast_arma, select_order, simulate_arma
from .stattests import adf_test, diagnostics, ks_normal_test
from .forecaster import (
    FeatureRow,
    MlpModel,
    build_features,
    forecast_mse,
    normalize,
    predict_mlp,
    train_mlp,
)
from .nn import RpropConfig
from .precip import (
    EstimatorModel,
    GammaFit,
    SimulationResult,
    estimate_params_nn,
    fit_gamma_mle,
    generate_estimator_dataset,
    seasonal_fits,
    simulate_precip_month,
    train_param_estimator,
)
from .pricing import (
    ContractKind,
    ContractSpec,
    PriceReport,
    closed_form_precip_price,
    hba_price,
    mc_precip_price,
    pacific_rim_index,
    percentile_strikes,
    strangle_payoff,
    temp_payoff_surface,
)
from .special import reg_incomplete_gamma

__version__ = "0.1.0"
