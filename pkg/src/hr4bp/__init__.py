"""Periodic orbits and one-parameter families in the Hill restricted
4-body problem, seeded from CR3BP orbits via a persistence function."""

from .dynamics import (SystemParams, UnitScales, cr3bp_field, hr4bp_field,
                       jacobi_constant, jacobian_A, param_partials_C,
                       potential, potential_gradient, symmetry_map)
from .hvo import (M_MAX, M_SEM, MU_EM, HvoEval, HvoSeries, evaluate_hvo,
                  hill_param, rho_bar)
from .propagation import (DenseTrajectory, IntegratorConfig,
                          PropagationResult, propagate)

__version__ = "0.1.0"

__all__ = [
    "SystemParams", "UnitScales", "cr3bp_field", "hr4bp_field",
    "jacobi_constant", "jacobian_A", "param_partials_C", "potential",
    "potential_gradient", "symmetry_map", "M_MAX", "M_SEM", "MU_EM",
    "HvoEval", "HvoSeries", "evaluate_hvo", "hill_param", "rho_bar",
    "DenseTrajectory", "IntegratorConfig", "PropagationResult",
    "propagate", "__version__",
]
