"""State observation of a flux-decay synchronous generator from PMU data."""
from .errors import (ConfigError, FluxObsError, InconsistentStateError, IntegrationDivergedError,
                     InvalidParametersError, ObservabilityLossError, ReconstructionDomainError)
from .model import (SMIB_COEFFICIENTS, DerivedCoefficients, Inputs, MachineParams, PlantState,
                    derive_coefficients, plant_rhs)
from .sim import Scenario, Signal, Trajectory, rk4_step, run_scenario

__version__ = "0.1.0"
