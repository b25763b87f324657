"""aoclab: a numerical laboratory for affine optimal control problems.

The package integrates affine-in-control systems with a quadratic-minus-
potential cost, differentiates the end-point and cost maps exactly on the
discrete grid, solves fixed-endpoint problems by direct (multistart
augmented-Lagrangian) and indirect (Newton shooting) methods, classifies
target points by rank/multiplier structure, and maps value functions over
state-space slices with continuity diagnostics.
"""

__version__ = "0.1.0"

from .benchmarks import Benchmark, benchmark_names, get_benchmark
from .classify import (AbnormalStructure, ClassificationReport, Multiplier,
                       classify_point, multipliers, rank_dE, xi_space)
from .direct import (Candidate, CandidateSet, SolveOptions, solve_fixed_endpoint,
                     value_estimate)
from .endpoint import (CostGradient, EndpointDifferential, cost, d_cost,
                       d_end_point, end_point, full_differential)
from .errors import (AoclabError, ConfigError, ConjugateObstructionError,
                     DegenerateFlowError, InadmissibleControlError, ShapeError,
                     ShootFailedError, UnreachableTargetError)
from .extremal import (ExpJacobian, ExtremalArc, conjugate_times, exp_jacobian,
                       exponential, hamiltonian, shoot)
from .fields import (Poly, Potential, VectorField, lie_bracket, lie_bracket_field,
                     weak_hormander_rank)
from .flow import (Trajectory, VariationalFlow, integrate, pullback_covector,
                   pushforward, variational_flow)
from .model import Control, ControlSystem, ProblemSpec, l2_distance, l2_inner
from .sweep import (ContinuityDiagnostics, GridSpec, ValueMap,
                    continuity_diagnostics, lipschitz_estimate, value_map)

__all__ = [
    "AbnormalStructure", "AoclabError", "Benchmark", "Candidate", "CandidateSet",
    "ClassificationReport", "ConfigError", "ConjugateObstructionError",
    "ContinuityDiagnostics", "Control", "ControlSystem", "CostGradient",
    "DegenerateFlowError", "EndpointDifferential", "ExpJacobian", "ExtremalArc",
    "GridSpec", "InadmissibleControlError", "Multiplier", "Poly", "Potential",
    "ProblemSpec", "ShapeError", "ShootFailedError", "SolveOptions", "Trajectory",
    "UnreachableTargetError", "ValueMap", "VariationalFlow", "VectorField",
    "benchmark_names", "classify_point", "conjugate_times", "continuity_diagnostics",
    "cost", "d_cost", "d_end_point", "end_point", "exp_jacobian", "exponential",
    "full_differential", "get_benchmark", "hamiltonian", "integrate", "l2_distance",
    "l2_inner", "lie_bracket", "lie_bracket_field", "lipschitz_estimate",
    "multipliers", "pullback_covector", "pushforward", "rank_dE",
    "solve_fixed_endpoint", "value_estimate", "value_map", "variational_flow",
    "weak_hormander_rank", "xi_space",
]
