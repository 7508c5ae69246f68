"""Numerical lab for a coupled fractional Lane-Emden system with measure data.

    (-Delta)^s u = v^p + rho mu,   (-Delta)^s v = u^q + tau nu   in B_R,
    u = v = 0 outside B_R,

on an interval (N = 1) or a disk (N = 2).  The package assembles the Green
operator, checks its pointwise and integral estimates, computes the minimal
solution, certifies its stability and searches for a second solution by a
linking argument on a Galerkin subspace.
"""
__version__ = "0.1.0"

from .core import (Grid, GridFunction, Measure, SystemParams, build_grid, delta_mass, dirac,
                   lebesgue, make_params, pair_with, power_density, swap_roles, zero_measure)
from .green import (GreenMatrix, SpectralData, apply_green, assemble_green, load_green, save_green,
                    spectral_decompose, x_inner, xnorm)
from .minimal import (SolveReport, SupersolutionParams, ThresholdScan, build_supersolution,
                      check_leub, dominated_by, picard_iterate, threshold_scan)
from .stability import StabilityReport, apriori_check, check_stability, stability_gap
from .linking import (CriticalPoint, LinkingGeometry, LinkingProblem, NonlinearTerms,
                      assemble_second_solution, build_problem, calibrate_geometry,
                      find_critical_point, make_terms, verify_geometry)

__all__ = [name for name in dir() if not name.startswith("_")]
