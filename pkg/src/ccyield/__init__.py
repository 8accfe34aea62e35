"""Chance-constrained yield-aware optimisation with polynomial-chaos surrogates."""

from .basis import build_gram_schmidt, build_legendre, enumerate_indices
from .chance import ChanceProblem, ChanceSpec, Constraint, assemble, kappa, mean_only_assemble
from .gaussmix import GaussianMixture, make_rng
from .polyopt import SolveResult, grid_oracle, solve
from .quadrature import QuadratureRule, QuadratureSettings, design_rule, joint_rule, noise_rule
from .surrogate import SurrogateModel, fit

__version__ = "0.1.0"

__all__ = [
    "ChanceProblem",
    "ChanceSpec",
    "Constraint",
    "GaussianMixture",
    "QuadratureRule",
    "QuadratureSettings",
    "SolveResult",
    "SurrogateModel",
    "assemble",
    "build_gram_schmidt",
    "build_legendre",
    "design_rule",
    "enumerate_indices",
    "fit",
    "grid_oracle",
    "joint_rule",
    "kappa",
    "make_rng",
    "mean_only_assemble",
    "noise_rule",
    "solve",
]
