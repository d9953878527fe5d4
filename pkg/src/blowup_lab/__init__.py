"""Numerical laboratory for minimal-mass blow-up of the mass-critical NLS
with an inverse-power potential, in radial symmetry."""
from .evolve import EvolutionConfig, Trajectory, TrajectorySample, run, step
from .ground_state import GroundStateBundle, GroundStateSolver, solve_ground_state
from .harness import (ExperimentSpec, PowerLawFit, RateFit, fit_rate, pipeline_minimal_blowup,
                      pipeline_nls_minus)
from .law import LawConstants, select_initial_params
from .linops import LinearizedOperator, LinearizedPair, solve_minus, solve_plus
from .modulation import ModulationDecomposer, ModulationState, ModVector, decompose, mod_vector
from .profile import ProfileBuilder, ProfileExpansion, build_expansion, load_expansion
from .radial import RadialFunction, RadialGrid, inner, norm

__version__ = "0.1.0"

__all__ = [
    "EvolutionConfig", "Trajectory", "TrajectorySample", "run", "step",
    "GroundStateBundle", "GroundStateSolver", "solve_ground_state",
    "ExperimentSpec", "PowerLawFit", "RateFit", "fit_rate", "pipeline_minimal_blowup",
    "pipeline_nls_minus", "LawConstants", "select_initial_params",
    "LinearizedOperator", "LinearizedPair", "solve_minus", "solve_plus",
    "ModulationDecomposer", "ModulationState", "ModVector", "decompose", "mod_vector",
    "ProfileBuilder", "ProfileExpansion", "build_expansion", "load_expansion",
    "RadialFunction", "RadialGrid", "inner", "norm",
]
