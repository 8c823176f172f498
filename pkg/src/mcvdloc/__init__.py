"""Source localisation for diffusion-based molecular communication with
multiple absorbing receivers: particle simulation, per-receiver distance
fitting and multilateration."""

from .channel import FitParams, ModelContext, fit_model, siso_cumulative
from .config import ExperimentConfig, load_config, parse_config
from .distance import DistanceEstimate, estimate_all, estimate_distance
from .errors import McvdError
from .lm import LmOptions, LmResult, lm_minimize
from .localization import LocalizationResult, localize, localize_from_estimates, multilaterate_init, steepest_descent
from .scenario import Medium, Receiver, SamplingPlan, Scenario, Vec3, make_scenario, validate_scenario
from .sim import CumulativeTrace, run_trials, simulate_events, simulate_trial

__version__ = "0.1.0"

__all__ = [
    "CumulativeTrace",
    "DistanceEstimate",
    "ExperimentConfig",
    "FitParams",
    "LmOptions",
    "LmResult",
    "LocalizationResult",
    "McvdError",
    "Medium",
    "ModelContext",
    "Receiver",
    "SamplingPlan",
    "Scenario",
    "Vec3",
    "estimate_all",
    "estimate_distance",
    "fit_model",
    "lm_minimize",
    "load_config",
    "localize",
    "localize_from_estimates",
    "make_scenario",
    "multilaterate_init",
    "parse_config",
    "run_trials",
    "simulate_events",
    "simulate_trial",
    "siso_cumulative",
    "steepest_descent",
    "validate_scenario",
]
