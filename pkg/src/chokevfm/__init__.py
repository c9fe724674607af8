"""Gray-box virtual flow metering for production choke valves.

A mechanistic multiphase choke model, five neural-hybrid variants of it and
a pure data-driven reference, fitted by maximum a posteriori estimation with
exact reverse-mode gradients, plus the data pipeline, synthetic well
generator, and evaluation tooling needed to exercise them end to end.
"""

from .choke import ChokeFlowResult, mass_flow_rate, predict_oil_rate, pressure_ratio
from .errors import ChokeVfmError
from .estimation import (
    TrainConfig,
    default_physical_priors,
    fit,
    map_loss,
    noise_sigma_from_mape,
    physical_prior_sigma,
    pretrain_network,
)
from .evaluation import cumulative_deviation, evaluate_model, horizon_compare, mape, sensitivity_sweep
from .fluids import OperatingPoint, PhysicalConstants, PhysicalParameters, z_factor
from .hybrid import VARIANTS, HybridModel, Standardization, build
from .pipeline import WellDataset, prepare_well, split
from .synth import WellScenario, simulate

__all__ = [
    "ChokeFlowResult",
    "ChokeVfmError",
    "HybridModel",
    "OperatingPoint",
    "PhysicalConstants",
    "PhysicalParameters",
    "Standardization",
    "TrainConfig",
    "VARIANTS",
    "WellDataset",
    "WellScenario",
    "build",
    "cumulative_deviation",
    "default_physical_priors",
    "evaluate_model",
    "fit",
    "horizon_compare",
    "map_loss",
    "mape",
    "mass_flow_rate",
    "noise_sigma_from_mape",
    "physical_prior_sigma",
    "predict_oil_rate",
    "prepare_well",
    "pressure_ratio",
    "pretrain_network",
    "sensitivity_sweep",
    "simulate",
    "split",
    "z_factor",
]

__version__ = "0.1.0"
