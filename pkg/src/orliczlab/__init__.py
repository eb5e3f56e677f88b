"""Numerical lab for Orlicz-space modulars, monotone graphs and parabolic solves."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DependencyError, DomainError, InputError, OrliczLabError,  # noqa: E402
                     ParameterError, RadiusError)
from .nfunc import (SpatialDomain, NFunction, power, variable_exponent, anisotropic_paper,  # noqa: E402
                    exponential, custom, verify_n_function_axioms, check_delta2, check_condition_M)
from .conjugate import ConjugateApprox, PowerConjugate, conjugate, conjugate_for, fenchel_young_gap  # noqa: E402
from .modular import SpaceTimeGrid, ScalarField, VectorField, modular, luxemburg_norm  # noqa: E402
from .graph import (MonotoneGraph, Selection, MollifiedSelection, CoercivityParams,  # noqa: E402
                    identity_graph, power_potential, sign_jump_graph, verify_graph_axioms)
from .mollify import Kernel, MollifyParams, scale_mollify, density_experiment  # noqa: E402
from .solver import (ProblemSpec, assemble_galerkin, integrate, energy_report, weak_residual,  # noqa: E402
                     minty_inclusion_check, refinement_study)

__all__ = [
    "__version__",
    "OrliczLabError", "InputError", "DomainError", "ParameterError", "RadiusError",
    "ConvergenceError", "DependencyError",
    "SpatialDomain", "NFunction", "power", "variable_exponent", "anisotropic_paper", "exponential",
    "custom", "verify_n_function_axioms", "check_delta2", "check_condition_M",
    "ConjugateApprox", "PowerConjugate", "conjugate", "conjugate_for", "fenchel_young_gap",
    "SpaceTimeGrid", "ScalarField", "VectorField", "modular", "luxemburg_norm",
    "MonotoneGraph", "Selection", "MollifiedSelection", "CoercivityParams", "identity_graph",
    "power_potential", "sign_jump_graph", "verify_graph_axioms",
    "Kernel", "MollifyParams", "scale_mollify", "density_experiment",
    "ProblemSpec", "assemble_galerkin", "integrate", "energy_report", "weak_residual",
    "minty_inclusion_check", "refinement_study",
]
