"""Arbitrary-order local energy-preserving integrators for multi-symplectic PDEs."""
from .crk import (ConvergenceError, CrkTableau, HamiltonianSystem, QuadratureRule, StageOperators,
                  StagePolynomial, build_crk_tableau, crk_step, gauss_legendre_rule, weighted_average)
from .spectral import (SpectralGrid1D, SpectralGrid2D, apply_diff_1d, apply_diff_2d_x, apply_diff_2d_y,
                       build_grid_1d, build_grid_2d)
from .records import ConservationRecord, Invariants
from .cnls import (CnlsParams, CnlsState, cnls_ecl_residual, cnls_energy, cnls_exact_solution,
                   cnls_momentum_and_charges, et4_step, et4gl6_step, mst4_step)
from .nls2d import (Nls2dProblem, Nls2dState, et2_step, nls2d_case, nls2d_ecl_residual,
                    nls2d_exact_solution, st2_step)
from .glbox import (GlSpaceTableau, MultiSymplecticSystem1D, gl_box_step, gl_ecl_residual,
                    gl_space_tableau)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "CrkTableau", "HamiltonianSystem", "QuadratureRule", "StageOperators",
    "StagePolynomial", "build_crk_tableau", "crk_step", "gauss_legendre_rule", "weighted_average",
    "SpectralGrid1D", "SpectralGrid2D", "apply_diff_1d", "apply_diff_2d_x", "apply_diff_2d_y",
    "build_grid_1d", "build_grid_2d", "ConservationRecord", "Invariants",
    "CnlsParams", "CnlsState", "cnls_ecl_residual", "cnls_energy", "cnls_exact_solution",
    "cnls_momentum_and_charges", "et4_step", "et4gl6_step", "mst4_step",
    "Nls2dProblem", "Nls2dState", "et2_step", "nls2d_case", "nls2d_ecl_residual", "nls2d_exact_solution",
    "st2_step", "GlSpaceTableau", "MultiSymplecticSystem1D", "gl_box_step", "gl_ecl_residual",
    "gl_space_tableau",
]
