"""Orthogonal stochastic control for diverse flow-matching samples."""
from .endpoint import EncoderSpec, heun_endpoint, pullback_control
from .energy import EnergyConfig, energy_grad, set_energy
from .errors import OscarError
from .flow import GmmField, GmmSpec, MlpField, grid_gmm, ring_gmm, single_gaussian, train_flow
from .metrics import ModeReference, metric_report
from .sampler import SamplerConfig, run
from .schedules import BetaSchedule, GammaSchedule, normalize_budget

__all__ = [
    "BetaSchedule",
    "EncoderSpec",
    "EnergyConfig",
    "GammaSchedule",
    "GmmField",
    "GmmSpec",
    "MlpField",
    "ModeReference",
    "OscarError",
    "SamplerConfig",
    "energy_grad",
    "grid_gmm",
    "heun_endpoint",
    "metric_report",
    "normalize_budget",
    "pullback_control",
    "ring_gmm",
    "run",
    "set_energy",
    "single_gaussian",
    "train_flow",
]
