"""Discrete local energy conservation law for pseudospectral CRK schemes.

For ``M z_t + K z_x = grad S(z, x)`` discretized with a skew-symmetric
differentiation matrix ``D`` and a CRK method in time, every grid point
satisfies

    (E_j^1 - E_j^0) / dt + sum_k D_jk Fbar_jk = 0,

    E_j     = S(z_j, x_j) - 1/2 z_j^T K (D z)_j,
    Fbar_jk = 1/2 sum_i b_i (<z_j>_i^T K <d_t z_k>_i + <z_k>_i^T K <d_t z_j>_i).

The residual is evaluated here from a stored stage polynomial only, so it
checks a step independently of how the step was solved.
"""
from __future__ import annotations

import numpy as np

from .crk import CrkTableau, StagePolynomial, weighted_average

__all__ = ["stage_averages", "energy_density_1d", "flux_matrix_1d", "pseudospectral_ecl_residual"]


def stage_averages(poly: StagePolynomial, tableau: CrkTableau, dt: float):
    """Return ``(<z>_i, <d_t z>_i)`` stacked over ``i``.

    ``<d_t z>_i`` is read off the polynomial: ``d_tau z(c_i) = dt <d_t z>_i``.
    """
    avg = np.stack([weighted_average(poly, tableau, i) for i in range(tableau.s)])
    rate = poly.derivative(tableau.rule.nodes) / dt
    return avg, rate


def energy_density_1d(z, D, K, S):
    """``S(z_j) - 1/2 z_j^T K (D z)_j`` for ``z`` of shape ``(n, d)``."""
    dz = D @ z
    return S(z) - 0.5 * np.einsum("jd,de,je->j", z, K, dz)


def flux_matrix_1d(avg, rate, K, b):
    """Symmetric ``Fbar`` of shape ``(n, n)`` from stacked stage averages."""
    G = np.einsum("ijd,de,ike->jk", avg * b[:, None, None], K, rate)
    return 0.5 * (G + G.T)


def pseudospectral_ecl_residual(poly: StagePolynomial, D, K, S, tableau: CrkTableau, dt: float):
    """Per-point residual of the discrete ECL for one step.

    ``poly.values`` has shape ``(s + 1, n, d)``; ``S`` maps ``(n, d)`` states
    to ``n`` energy values (grid position already bound in).
    """
    vals = poly.values
    if vals.ndim != 3:
        raise ValueError("stage polynomial values must have shape (s + 1, n, d)")
    e0 = energy_density_1d(vals[0], D, K, S)
    e1 = energy_density_1d(vals[-1], D, K, S)
    avg, rate = stage_averages(poly, tableau, dt)
    F = flux_matrix_1d(avg, rate, K, tableau.b_weights)
    return (e1 - e0) / dt + np.einsum("jk,jk->j", D, F)
