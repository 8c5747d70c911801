"""Structured distances to singularity and instability of dissipative
Hamiltonian pencils ``lambda E - (J - R)``."""

from .errors import (
    DegenerateEigenvalue,
    DegenerateInput,
    DHDistanceError,
    InputError,
    NoUpperBracket,
    NumericalFailure,
    SNearSingular,
    StalledFlow,
)
from .flow import FlowConfig, FlowState, integrate_to_stationary
from .functional import PerturbationTriple, Variant
from .outer import DistanceResult, OuterConfig, bisection_distance, f_curve, f_of_eps
from .pencil import (
    DHPencil,
    Target,
    direct_formula_minimize,
    distance_bounds,
    gen_mass_spring_damper,
    gen_random_dh,
    example_5x5,
    validate,
)
from .rank2 import Rank2Triple, integrate_rank2, truncate_to_rank2

__version__ = "0.1.0"
