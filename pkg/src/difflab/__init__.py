"""Gaussian diffusion and flow-matching laboratory with analytic oracles."""

from .flow import Interpolant, marginal_velocity_straightline, rectified_velocity, time_change
from .gaussian import Gaussian, Seed, kl, log_density, product
from .guidance import CFGPredictor, ClassifierGuidedPredictor, GuidanceConfig, distill
from .latent import LinearCodec
from .mixture import GaussianMixture
from .predictor import AnalyticOracle, MLPPredictor, Predictor, TrainConfig, train_eps
from .samplers import SamplerConfig, SamplerRun, run_sampler
from .schedule import Schedule, default_schedule, make_constant, make_linear, subgrid

__version__ = "0.1.0"

__all__ = [
    "AnalyticOracle",
    "CFGPredictor",
    "ClassifierGuidedPredictor",
    "Gaussian",
    "GaussianMixture",
    "GuidanceConfig",
    "Interpolant",
    "LinearCodec",
    "MLPPredictor",
    "Predictor",
    "SamplerConfig",
    "SamplerRun",
    "Schedule",
    "Seed",
    "TrainConfig",
    "default_schedule",
    "distill",
    "kl",
    "log_density",
    "make_constant",
    "make_linear",
    "marginal_velocity_straightline",
    "product",
    "rectified_velocity",
    "run_sampler",
    "subgrid",
    "time_change",
    "train_eps",
]
