"""Heavy-tailed probabilistic forecasting with mixtures of S0 stable laws."""

from .stable import StableParams, cf, log_cf
from .mixture import MixtureParams, make_grid, mixture_cf, cf_loss, empirical_cf
from .sampler import RngStream, sample_stable, sample_mixture
from .model import ModelConfig, Forecaster, train

__all__ = [
    "StableParams", "cf", "log_cf",
    "MixtureParams", "make_grid", "mixture_cf", "cf_loss", "empirical_cf",
    "RngStream", "sample_stable", "sample_mixture",
    "ModelConfig", "Forecaster", "train",
]
__version__ = "0.1.0"
