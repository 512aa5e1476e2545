"""2D nonlinear Schroedinger equations with an external field.

    i psi_t + alpha (psi_xx + psi_yy) + V'(|psi|^2, x, y) psi = 0

with ``V(xi, x, y) = sum_k c_k(x, y) xi^k`` polynomial in ``xi``.  Fields are
``(N, M)`` arrays on a :class:`SpectralGrid2D`; the solvers work on the
flattened complex field ``psi = p + i q``.

``et2`` is the average vector field (1-stage CRK) method and ``st2`` the
implicit midpoint rule, both with pseudospectral differentiation in space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._validation import check_max_iter, check_positive
from .crk import StagePolynomial, build_crk_tableau, gauss_legendre_rule, quadrature_points_for_degree
from .ecl import stage_averages
from .records import ConservationRecord, Invariants
from .semilinear import CrkSemilinearStepper, GaussCollocationStepper
from .spectral import SpectralGrid2D, build_grid_2d

__all__ = [
    "NLS2D_SCHEMES",
    "NLS2D_CASES",
    "Nls2dProblem",
    "Nls2dState",
    "Nls2dIntegrator",
    "et2_step",
    "st2_step",
    "nls2d_energy",
    "nls2d_charge",
    "nls2d_fluxes",
    "nls2d_ecl_residual",
    "nls2d_exact_solution",
    "nls2d_case",
]

NLS2D_SCHEMES = ("et2", "st2")
NLS2D_CASES = ("gp-attractive", "gp-repulsive", "quintic")
QUINTIC_AMPLITUDE = 1.5


@dataclass(frozen=True, eq=False)
class Nls2dProblem:
    """Equation data plus discretization.

    ``coefficients[k - 1]`` is ``c_k``, a scalar or an ``(N, M)`` array, so
    that ``V(xi) = sum_k c_k xi^k``.
    """

    alpha: float
    coefficients: Sequence
    grid: SpectralGrid2D
    dt: float
    tol: float = 1e-14
    max_iter: int = 200

    def __post_init__(self):
        check_positive(self.dt, "dt")
        check_positive(self.tol, "tol")
        check_max_iter(self.max_iter)
        if len(self.coefficients) == 0:
            raise ValueError("potential needs at least one coefficient")
        fields = tuple(np.broadcast_to(np.asarray(c, dtype=float), self.grid.shape) for c in self.coefficients)
        object.__setattr__(self, "coefficients", fields)

    @property
    def potential_degree(self) -> int:
        deg = len(self.coefficients)
        while deg > 1 and not np.any(self.coefficients[deg - 1]):
            deg -= 1
        return deg

    @property
    def is_linear(self) -> bool:
        return self.potential_degree == 1

    def potential(self, xi):
        out = np.zeros(np.shape(xi))
        for c in reversed(self.coefficients):
            out = (out + c) * xi
        return out

    def potential_derivative(self, xi):
        out = np.zeros(np.shape(xi))
        for k in range(len(self.coefficients), 0, -1):
            out = out * xi + k * self.coefficients[k - 1]
        return out


@dataclass
class Nls2dState:
    """Real and imaginary parts of ``psi`` as ``(N, M)`` arrays."""

    p: np.ndarray
    q: np.ndarray
    grid: SpectralGrid2D

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.p.shape != self.grid.shape or self.q.shape != self.grid.shape:
            raise ValueError(f"p and q must have shape {self.grid.shape}")
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q))):
            raise ValueError("state contains non-finite entries")

    @classmethod
    def from_complex(cls, psi, grid: SpectralGrid2D) -> "Nls2dState":
        psi = np.asarray(psi, dtype=complex).reshape(grid.shape)
        return cls(psi.real.copy(), psi.imag.copy(), grid)

    @property
    def psi(self) -> np.ndarray:
        return self.p + 1j * self.q

    @property
    def v(self):
        return self.grid.dx(self.p)

    @property
    def w(self):
        return self.grid.dx(self.q)

    @property
    def a(self):
        return self.grid.dy(self.p)

    @property
    def b(self):
        return self.grid.dy(self.q)


def _energy_density(psi, problem: Nls2dProblem):
    g = problem.grid
    gx, gy = g.dx(psi), g.dy(psi)
    grad2 = gx.real ** 2 + gx.imag ** 2 + gy.real ** 2 + gy.imag ** 2
    return 0.5 * problem.potential(psi.real ** 2 + psi.imag ** 2) - 0.5 * problem.alpha * grad2


def nls2d_energy(state: Nls2dState, problem: Nls2dProblem):
    """Energy density ``V/2 - alpha/2 (v^2 + w^2 + a^2 + b^2)`` and its global sum."""
    dens = _energy_density(state.psi, problem)
    return dens, problem.grid.cell_area * float(np.sum(dens))


def nls2d_charge(state: Nls2dState) -> float:
    return state.grid.cell_area * float(np.sum(state.p ** 2 + state.q ** 2))


def nls2d_invariants(state: Nls2dState, problem: Nls2dProblem) -> Invariants:
    return Invariants(energy=nls2d_energy(state, problem)[1], charge_u=nls2d_charge(state))


def _field_poly(stages: StagePolynomial, grid: SpectralGrid2D) -> StagePolynomial:
    vals = np.asarray(stages.values)
    if vals.ndim == 2 and vals.shape[1] == grid.size:
        vals = vals.reshape((vals.shape[0],) + grid.shape)
    if vals.shape[1:] != grid.shape:
        raise ValueError(f"stage values must have shape (s + 1, {grid.size}) or (s + 1, N, M)")
    return StagePolynomial(vals)


def nls2d_fluxes(stages: StagePolynomial, problem: Nls2dProblem, tableau):
    """Symmetric flux tensors ``Fbar[j, k, l]`` and ``Gbar[j, l, m]``."""
    if stages is None:
        raise ValueError("stage polynomial is required for the ECL residual")
    g = problem.grid
    poly = _field_poly(stages, g)
    avg, rate = stage_averages(poly, tableau, problem.dt)
    wb = problem.alpha * tableau.b_weights
    Dx, Dy = g.grid_x.diff_matrix, g.grid_y.diff_matrix
    # <v>_i = Dx <p>_i since averaging commutes with the linear map
    ax = np.einsum("jk,ikl->ijl", Dx, avg)
    ay = np.einsum("lm,ijm->ijl", Dy, avg)
    F = np.einsum("i,ijl,ikl->jkl", wb, ax.real, rate.real) + np.einsum("i,ijl,ikl->jkl", wb, ax.imag, rate.imag)
    G = np.einsum("i,ijl,ijm->jlm", wb, ay.real, rate.real) + np.einsum("i,ijl,ijm->jlm", wb, ay.imag, rate.imag)
    return F + F.transpose(1, 0, 2), G + G.transpose(0, 2, 1)


def nls2d_ecl_residual(stages: StagePolynomial, problem: Nls2dProblem, tableau):
    """Residual field ``R[j, l]`` of the reduced discrete energy law and ``max |R|``."""
    g = problem.grid
    poly = _field_poly(stages, g)
    e0 = _energy_density(poly.initial, problem)
    e1 = _energy_density(poly.final, problem)
    F, G = nls2d_fluxes(poly, problem, tableau)
    R = ((e1 - e0) / problem.dt
         + np.einsum("jk,jkl->jl", g.grid_x.diff_matrix, F)
         + np.einsum("lm,jlm->jl", g.grid_y.diff_matrix, G))
    return R, float(np.max(np.abs(R)))


def nls2d_linear_operator(problem: Nls2dProblem) -> np.ndarray:
    g = problem.grid
    Dx2 = g.grid_x.diff_matrix @ g.grid_x.diff_matrix
    Dy2 = g.grid_y.diff_matrix @ g.grid_y.diff_matrix
    lap = np.kron(Dx2, np.eye(g.shape[1])) + np.kron(np.eye(g.shape[0]), Dy2)
    return 1j * (problem.alpha * lap + np.diag(problem.coefficients[0].ravel()))


def nls2d_nonlinear(problem: Nls2dProblem):
    # linear-in-xi potential term lives in the implicit operator
    weights = [k * c.ravel() for k, c in enumerate(problem.coefficients, start=1)][1:]

    def N(y):
        xi = y.real ** 2 + y.imag ** 2
        out = np.zeros(np.shape(y))
        for c in reversed(weights):
            out = (out + c) * xi
        return 1j * out * y
    return N


class Nls2dIntegrator:
    def __init__(self, problem: Nls2dProblem, scheme: str = "et2", record_ecl: bool = True):
        if scheme not in NLS2D_SCHEMES:
            raise ValueError(f"unknown 2D scheme {scheme!r}; choose from {NLS2D_SCHEMES}")
        self.problem = problem
        self.scheme = scheme
        self.record_ecl = record_ecl
        self.tableau = build_crk_tableau(gauss_legendre_rule(1))
        L = nls2d_linear_operator(problem)
        N = nls2d_nonlinear(problem)
        if scheme == "st2":
            self._stepper = GaussCollocationStepper(1, L, N, problem.dt, problem.tol, problem.max_iter)
        else:
            # integrand A * V'(|psi|^2) psi has degree 2 * deg - 1 in sigma for s = 1
            n_quad = quadrature_points_for_degree(2 * problem.potential_degree - 1)
            self._stepper = CrkSemilinearStepper(self.tableau, L, N, problem.dt, n_quad,
                                                 problem.tol, problem.max_iter)

    def advance(self, state: Nls2dState):
        res = self._stepper.step(state.psi.ravel())
        return Nls2dState.from_complex(res.y1, self.problem.grid), res

    def step(self, state: Nls2dState, reference: Optional[Invariants] = None, step_index: int = 1,
             time: Optional[float] = None):
        new, res = self.advance(state)
        current = nls2d_invariants(new, self.problem)
        ref = reference if reference is not None else nls2d_invariants(state, self.problem)
        ecl = nls2d_ecl_residual(res.stages, self.problem, self.tableau)[1] if self.record_ecl else None
        t = step_index * self.problem.dt if time is None else time
        rec = ConservationRecord.from_invariants(step_index, t, current, ref, max_ecl_residual=ecl,
                                                 iterations=res.iterations)
        return new, rec


_CACHE: dict = {}


def _integrator(problem, scheme):
    key = (id(problem), scheme)
    hit = _CACHE.get(key)
    if hit is None or hit.problem is not problem:
        if len(_CACHE) > 4:
            _CACHE.clear()
        hit = _CACHE[key] = Nls2dIntegrator(problem, scheme)
    return hit


def et2_step(state: Nls2dState, problem: Nls2dProblem, reference: Optional[Invariants] = None):
    """One AVF step; returns ``(state, ConservationRecord)``."""
    return _integrator(problem, "et2").step(state, reference)


def st2_step(state: Nls2dState, problem: Nls2dProblem, reference: Optional[Invariants] = None):
    """One implicit midpoint step; returns ``(state, ConservationRecord)``."""
    return _integrator(problem, "st2").step(state, reference)


def nls2d_exact_solution(case: str, x, y, t):
    """Closed-form solutions of the ``gp-attractive`` and ``quintic`` cases."""
    r2 = np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
    if case == "gp-attractive":
        return np.sqrt(2.0) * np.exp(-0.5 * r2) * np.exp(-1j * t)
    if case == "quintic":
        A4 = QUINTIC_AMPLITUDE ** 4
        return QUINTIC_AMPLITUDE * np.exp(-0.25 * A4 * r2) * np.exp(-1j * A4 * t)
    raise ValueError(f"no exact solution for case {case!r}")


_CASE_DEFAULTS = {
    # (half-width, grid count, dt)
    "gp-attractive": (6.0, 42, 0.05),
    "gp-repulsive": (8.0, 36, 0.1),
    "quintic": (4.0, 42, 0.01),
}


def nls2d_case(case: str, n: Optional[int] = None, m: Optional[int] = None, dt: Optional[float] = None,
               tol: float = 1e-14, max_iter: int = 200):
    """Problem and initial state of a named benchmark."""
    if case not in _CASE_DEFAULTS:
        raise ValueError(f"unknown 2D case {case!r}; choose from {NLS2D_CASES}")
    half, count, dt0 = _CASE_DEFAULTS[case]
    n = count if n is None else n
    m = n if m is None else m
    grid = build_grid_2d(-half, 2 * half, n, -half, 2 * half, m)
    X, Y = grid.mesh
    r2 = X ** 2 + Y ** 2
    if case == "gp-attractive":
        alpha, coeffs = 0.5, (-0.5 * r2 - 2.0 * np.exp(-r2), 0.5)
        psi0 = nls2d_exact_solution(case, X, Y, 0.0)
    elif case == "gp-repulsive":
        alpha, coeffs = 0.5, (-0.5 * r2, -1.0)
        psi0 = np.exp(-0.5 * r2) / np.sqrt(np.pi) + 0j
    else:
        A4 = QUINTIC_AMPLITUDE ** 4
        alpha, coeffs = 1.0, (-0.25 * A4 * A4 * r2 - A4 * np.exp(-A4 * r2), 0.0, 1.0 / 3.0)
        psi0 = nls2d_exact_solution(case, X, Y, 0.0)
    problem = Nls2dProblem(alpha, coeffs, grid, dt0 if dt is None else dt, tol, max_iter)
    return problem, Nls2dState.from_complex(psi0, grid)
