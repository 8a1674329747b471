from .affine import AffineSpec, eigen_derivative_at_zero, solve_affine_eigen, solve_poisson
from .heston import HestonParams, build_heston, heston_affine_spec
from .sird import DiffusionBasis, SirdParams, build_sird, sird_overflow_event
from .vargarch import VarGarchParams, build_var_garch

__all__ = [
    "AffineSpec",
    "eigen_derivative_at_zero",
    "solve_affine_eigen",
    "solve_poisson",
    "HestonParams",
    "build_heston",
    "heston_affine_spec",
    "DiffusionBasis",
    "SirdParams",
    "build_sird",
    "sird_overflow_event",
    "VarGarchParams",
    "build_var_garch",
]
