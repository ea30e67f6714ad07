"""Finite-volume solver and simulator for non-isothermal multicomponent
cross-diffusion with Maxwell-Stefan friction structure."""

from .model import (
    Bounds,
    FieldState,
    Grid,
    MixtureSpec,
    Preset,
    ScenarioConfig,
    build_initial_state,
    validate_mixture,
)
from .algebra import (
    SpectralReport,
    conjugation_blocks,
    constrained_flux_solve,
    eigen_check,
    friction_matrix,
    invert_reduced_friction,
    reduced_friction_matrix,
    scaled_concentration,
    spectral_bounds,
)
from .decoupled import (
    CtotHistory,
    VelocityField,
    advection_velocity,
    dt_log_ctot,
    heat_step,
    temperature_characteristics,
    temperature_step_upwind,
)
from .reduced import (
    FluxSet,
    lower_order_term,
    reconstruct_fluxes,
    recover_last_species,
    reduced_step_explicit,
    reduced_step_semi_implicit,
    stable_dt,
)
from .verify import (
    ConvergenceTable,
    Diagnostics,
    convergence_order,
    ellipticity_monitor,
    flux_gradient_residual,
    full_system_step_oracle,
    mass_drift,
    max_principle_report,
)
from .config import load_config
from .runner import RunOutputs, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Bounds",
    "ConvergenceTable",
    "CtotHistory",
    "Diagnostics",
    "FieldState",
    "FluxSet",
    "Grid",
    "MixtureSpec",
    "Preset",
    "RunOutputs",
    "ScenarioConfig",
    "SpectralReport",
    "VelocityField",
    "advection_velocity",
    "build_initial_state",
    "conjugation_blocks",
    "constrained_flux_solve",
    "convergence_order",
    "dt_log_ctot",
    "eigen_check",
    "ellipticity_monitor",
    "flux_gradient_residual",
    "friction_matrix",
    "full_system_step_oracle",
    "heat_step",
    "invert_reduced_friction",
    "load_config",
    "lower_order_term",
    "mass_drift",
    "max_principle_report",
    "reconstruct_fluxes",
    "recover_last_species",
    "reduced_friction_matrix",
    "reduced_step_explicit",
    "reduced_step_semi_implicit",
    "run_scenario",
    "scaled_concentration",
    "spectral_bounds",
    "stable_dt",
    "temperature_characteristics",
    "temperature_step_upwind",
    "validate_mixture",
]
