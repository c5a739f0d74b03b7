"""Adiabatic master-equation and quantum-jump simulator for Ising annealing.

Builds the time-dependent Lindblad equation of a transverse-field Ising
anneal in the instantaneous eigenbasis, solves it directly on the density
matrix, and unravels it into parallel quantum-jump trajectories with
waiting-time sampling.
"""

from .ame import AMEResult, adiabatic_diagnostic, apply_generator, solve_ame
from .config import RunConfig, emit_config, parse_config
from .ensemble import (CostReport, EnsembleResult, JumpStatistics,
                       benchmark_scaling, bootstrap_ci, jump_statistics,
                       reconstruct_density, run_ensemble, stats_rng)
from .errors import ConfigError, ValidityError
from .lindblad import (BohrBin, EigenSystem, LindbladSet,
                       build_effective_hamiltonian, build_frame,
                       build_lindblad_set, eigendecompose_and_bin)
from .model import (AnnealSchedule, IsingSpec, build_hamiltonian,
                    builtin_problem, chain_problem, eval_schedule,
                    hamiltonian_derivative)
from .spectral import (BathSpec, DiagonalizedGamma, diagonalize_gamma,
                       gamma_ohmic, sigma_z_couplings)
from .stepping import StepBound, StepperOptions, Timeline, step_bound
from .trajectory import (JumpEvent, TrajectoryResult, TrajectoryState,
                         bernoulli_trajectory, compute_jump_rate, drift_term,
                         evolve_no_jump, init_trajectory, max_timestep,
                         run_trajectory, select_and_apply_jump,
                         trajectory_seed)

__version__ = "0.1.0"

__all__ = [
    "AMEResult", "AnnealSchedule", "BathSpec", "BohrBin", "ConfigError",
    "CostReport", "DiagonalizedGamma", "EigenSystem", "EnsembleResult",
    "IsingSpec", "JumpEvent", "JumpStatistics", "LindbladSet", "RunConfig",
    "StepBound", "StepperOptions", "Timeline", "TrajectoryResult",
    "TrajectoryState", "ValidityError", "adiabatic_diagnostic",
    "apply_generator", "benchmark_scaling", "bernoulli_trajectory",
    "bootstrap_ci", "build_effective_hamiltonian", "build_frame",
    "build_hamiltonian", "build_lindblad_set", "builtin_problem",
    "chain_problem", "compute_jump_rate", "diagonalize_gamma", "drift_term",
    "eigendecompose_and_bin", "emit_config", "eval_schedule",
    "evolve_no_jump", "gamma_ohmic", "hamiltonian_derivative",
    "init_trajectory", "jump_statistics", "max_timestep", "parse_config",
    "reconstruct_density", "run_ensemble", "run_trajectory",
    "select_and_apply_jump", "sigma_z_couplings", "stats_rng", "step_bound",
    "trajectory_seed",
]
