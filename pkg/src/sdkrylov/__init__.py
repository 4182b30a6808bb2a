"""Hybrid projection methods for smooth-plus-sparse linear inverse problems."""

from .operators import LinearMap, SpdMap, matrix_map, dense_spd, diag_map, identity
from .covariance import GridGeometry, KernelSpec, build_covariance
from .regparam import SelectionRule, StoppingPolicy
from .solvers import InverseProblem, SolveOptions, SolveResult, alternating, fhybr, genhybr, sdhybr, sdhybr_alt

__version__ = "0.1.0"
