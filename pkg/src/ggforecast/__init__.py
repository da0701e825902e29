"""Forecasting grain-size distribution evolution with sequence models."""
from .forecast import ForecastRun, forecast, forecast_full_protocol, repair_distribution
from .metrics import EvalReport, evaluate, mae, mre, rmse
from .models import DistributionForecaster, ModelBundle, ModelConfig, load_bundle, train
from .preprocess import BinningSpec, DistributionBinner, DistributionSeries, SplitSpec, bin_snapshot
from .simgen import SimConfig, generate_dataset, run_sequence

__version__ = "0.1.0"
