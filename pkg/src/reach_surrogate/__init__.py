"""Per-reach river-stage surrogate: a GRU over time feeding a Fourier
neural-operator block over the cross-sections, trained on one-step
prediction and rolled out autoregressively."""

__version__ = "0.1.0"

from .estimator import GRUGeoFNORegressor, build_dataset, train_reach
from .features import CHANNELS, ChannelScaler, NormStats
from .hydro import OracleConfig, StateField, SyntheticSpec, route_reach
from .ingest import CrossSection, ForcingSeries, Reach, parse_forcings, parse_geometry
from .metrics import MetricsReport, evaluate_reach, mae, nse, rmse
from .rollout import RolloutConfig, RolloutInstability, rollout

__all__ = [
    "__version__",
    "GRUGeoFNORegressor",
    "build_dataset",
    "train_reach",
    "CHANNELS",
    "ChannelScaler",
    "NormStats",
    "OracleConfig",
    "StateField",
    "SyntheticSpec",
    "route_reach",
    "CrossSection",
    "ForcingSeries",
    "Reach",
    "parse_forcings",
    "parse_geometry",
    "MetricsReport",
    "evaluate_reach",
    "mae",
    "nse",
    "rmse",
    "RolloutConfig",
    "RolloutInstability",
    "rollout",
]
