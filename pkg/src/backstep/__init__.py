"""Backstepping boundary control with approximate gains.

Kernel solvers for three plant families (scalar transport PIDE,
reaction-diffusion with Dirichlet or Neumann actuation, and 2x2 linear
hyperbolic systems), gain accuracy budgets, closed-loop simulators and the
verification pipeline tying them together.
"""

from .core import (
    H1,
    L2,
    ScalarField1D,
    TriangularField,
    UniformGrid,
    WeightedExp,
    make_uniform_grid,
    norm,
    quad_trapezoid,
    volterra_apply,
    volterra_invert,
)
from .errors import InvalidArgument, NumericFailure
from .gains import (
    ConstantOffset,
    SmoothNoise,
    boundary_perturbation,
    boundary_perturbation_2x2,
    epsilon_star_coupled,
    epsilon_star_dirichlet,
    epsilon_star_hyperbolic,
    epsilon_star_neumann,
    fit_surrogate_gain,
    perturb_gain,
)
from .kernel_coupled import CoupledPlantSpec, solve_kernels_2x2, transform_2x2
from .kernel_hyperbolic import HyperbolicPlantSpec, solve_kernel_pide
from .kernel_parabolic import Dirichlet, Neumann, ParabolicPlantSpec, solve_kernel_rd
from .simulation import (
    estimate_decay_rate,
    lyapunov_derivative_check,
    simulate_2x2,
    simulate_hyperbolic_pide,
    simulate_reaction_diffusion,
)

__version__ = "0.1.0"

__all__ = [
    "ConstantOffset",
    "CoupledPlantSpec",
    "Dirichlet",
    "H1",
    "HyperbolicPlantSpec",
    "InvalidArgument",
    "L2",
    "Neumann",
    "NumericFailure",
    "ParabolicPlantSpec",
    "ScalarField1D",
    "SmoothNoise",
    "TriangularField",
    "UniformGrid",
    "WeightedExp",
    "boundary_perturbation",
    "boundary_perturbation_2x2",
    "epsilon_star_coupled",
    "epsilon_star_dirichlet",
    "epsilon_star_hyperbolic",
    "epsilon_star_neumann",
    "estimate_decay_rate",
    "fit_surrogate_gain",
    "lyapunov_derivative_check",
    "make_uniform_grid",
    "norm",
    "perturb_gain",
    "quad_trapezoid",
    "simulate_2x2",
    "simulate_hyperbolic_pide",
    "simulate_reaction_diffusion",
    "solve_kernel_pide",
    "solve_kernel_rd",
    "solve_kernels_2x2",
    "transform_2x2",
    "volterra_apply",
    "volterra_invert",
]
