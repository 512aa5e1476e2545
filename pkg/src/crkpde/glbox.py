"""Box scheme: Gauss-Legendre collocation in space, CRK in time.

For ``M z_t + K z_x = grad S(z, x)`` each space-time box ``[x_n, x_n + dx] x
[t, t + dt]`` carries

* edge values ``z_n(tau)``,
* internal slopes ``G_{n,j}(tau)`` approximating ``z_x`` at ``x_n + c~_j dx``,

all polynomials of degree ``s`` in ``tau`` stored at ``0, 1/s, ..., 1``.  The
internal values are ``Z_{n,j} = z_n + dx sum_k a~_jk G_{n,k}``.  The step
enforces, at every unknown abscissa and stage,

    z_{n+1} - z_n - dx sum_j b~_j G_{n,j} = 0
    M <d_t Z_{n,j}>_i + K <G_{n,j}>_i - <grad S(Z_{n,j})>_i = 0

where ``d_t Z = d_tau Z / dt``.  This is the weighted form of the CRK stage
relations, so the discrete local energy law holds to round-off once the
nonlinear averages are integrated exactly.

Only ``r`` in ``{1, 2}`` is supported; higher spatial orders produce badly
conditioned stage systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from ._validation import check_max_iter, check_positive
from .crk import (ConvergenceError, CrkTableau, gauss_legendre_rule, lagrange_basis,
                  lagrange_basis_derivative, quadrature_points_for_degree)

__all__ = [
    "MultiSymplecticSystem1D",
    "GlSpaceTableau",
    "gl_space_tableau",
    "BoxCells",
    "BoxStepResult",
    "GlBoxStepper",
    "gl_box_step",
    "gl_ecl_residual",
    "gl_global_energy",
    "gl_commutator_defect",
    "box_state_from_profile",
    "nls_box_system",
]

MAX_SPACE_STAGES = 2
FLOOR_FACTOR = 100.0


def _check_skew(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.max(np.abs(A + A.T), initial=0.0) > 1e-14 * max(1.0, np.max(np.abs(A), initial=0.0)):
        raise ValueError(f"{name} must be skew-symmetric")
    return A


@dataclass(frozen=True, eq=False)
class MultiSymplecticSystem1D:
    """``M z_t + K z_x = grad S(z, x)``.

    ``S`` and ``gradS`` take ``z`` of shape ``(..., d)`` and a broadcastable
    position array ``x`` of shape ``(...)``.  ``hessian_at_zero`` optionally
    returns ``d x d`` matrices (shape ``(..., d, d)``); by default it is
    estimated by central differences and only steers the iteration.
    """

    M: np.ndarray
    K: np.ndarray
    S: Callable
    gradS: Callable
    nonlinearity_degree: Optional[int] = 1
    hessian_at_zero: Optional[Callable] = None

    def __post_init__(self):
        M = _check_skew(self.M, "M")
        K = _check_skew(self.K, "K")
        if M.shape != K.shape:
            raise ValueError("M and K must have the same shape")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)

    @property
    def d(self) -> int:
        return self.M.shape[0]

    def linearization(self, x, z=None):
        """Hessian of ``S`` at ``z`` (default zero) for each position in ``x``."""
        x = np.asarray(x, dtype=float)
        if z is None and self.hessian_at_zero is not None:
            return np.broadcast_to(self.hessian_at_zero(x), x.shape + (self.d, self.d))
        z = np.zeros(x.shape + (self.d,)) if z is None else np.asarray(z, dtype=float)
        h = 1e-5
        H = np.empty(x.shape + (self.d, self.d))
        for k in range(self.d):
            e = np.zeros(x.shape + (self.d,))
            e[..., k] = h
            H[..., :, k] = (self.gradS(z + e, x) - self.gradS(z - e, x)) / (2 * h)
        return H


@dataclass(frozen=True)
class GlSpaceTableau:
    """Butcher tableau of the ``r``-stage Gauss-Legendre collocation method."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def r(self) -> int:
        return self.b.size

    def symplecticity_defect(self) -> float:
        b, a = self.b, self.a
        return float(np.max(np.abs(np.outer(b, b) - b[:, None] * a - (b[:, None] * a).T)))


def gl_space_tableau(r: int) -> GlSpaceTableau:
    if r not in (1, 2):
        if isinstance(r, (int, np.integer)) and r > MAX_SPACE_STAGES:
            raise NotImplementedError(
                f"r={r} spatial stages is not supported; high-order collocation in space leads "
                "to singular stage systems, use r = 1 or 2")
        raise ValueError(f"spatial stage count must be 1 or 2, got {r!r}")
    rule = gauss_legendre_rule(r)
    c = rule.nodes
    # a~_jk = int_0^{c_j} l_k
    ex = gauss_legendre_rule(r + 1)
    a = np.empty((r, r))
    for j in range(r):
        pts = c[j] * ex.nodes
        a[j] = c[j] * (ex.weights @ lagrange_basis(c, pts))
    return GlSpaceTableau(a, rule.weights.copy(), c.copy())


@dataclass
class BoxCells:
    """Stage polynomials of every box for one time step.

    ``edges`` has shape ``(s + 1, N_e, d)`` where ``N_e`` is ``N`` for a
    periodic ring and ``N + 1`` when the left boundary edge is prescribed;
    ``slopes`` has shape ``(s + 1, N, r, d)``.  Index 0 along the first axis
    is the time level ``t``, the last index the level ``t + dt``.
    """

    edges: np.ndarray
    slopes: np.ndarray
    periodic: bool = True

    @property
    def n_cells(self) -> int:
        return self.slopes.shape[1]

    def right_edges(self):
        return np.roll(self.edges, -1, axis=1) if self.periodic else self.edges[:, 1:]

    def left_edges(self):
        return self.edges if self.periodic else self.edges[:, :-1]

    def internal(self, space: GlSpaceTableau, dx: float):
        return self.left_edges()[:, :, None, :] + dx * np.einsum("jk,tnkd->tnjd", space.a, self.slopes)


@dataclass
class BoxStepResult:
    cells: BoxCells
    iterations: int
    residual: np.ndarray = field(default=None)


def box_state_from_profile(z, zx, x0: float, dx: float, n_cells: int, space: GlSpaceTableau):
    """Consistent time-level data ``(edges, slopes)`` on a periodic ring.

    ``z`` and ``zx`` map positions to states and their derivatives.  Slopes
    are shifted per cell so that the edge relation holds exactly, with the
    ring closed by the first edge (``z_N = z_0``).
    """
    xe = x0 + dx * np.arange(n_cells)
    edges = np.asarray(z(xe), dtype=float)
    edges = np.concatenate([edges, edges[:1]])
    xi = x0 + dx * (np.arange(n_cells)[:, None] + space.c[None, :])
    slopes = np.asarray(zx(xi), dtype=float).copy()
    jump = (edges[1:] - edges[:-1]) / dx - np.einsum("j,njd->nd", space.b, slopes)
    slopes += jump[:, None, :]
    return edges[:-1].copy(), slopes


class GlBoxStepper:
    """Chord iteration for the coupled box equations of all cells.

    The Jacobian of the equations with ``grad S`` replaced by its
    linearization at zero is factored once; every sweep evaluates the full
    residual for all cells and applies the same correction (a global,
    order-independent update).
    """

    def __init__(self, system: MultiSymplecticSystem1D, x0: float, dx: float, n_cells: int, dt: float,
                 time_tableau: CrkTableau, space_tableau: GlSpaceTableau, tol: float = 1e-14,
                 max_iter: int = 200, periodic: bool = True, n_quad: Optional[int] = None,
                 refresh_jacobian: bool = False):
        if space_tableau.r > MAX_SPACE_STAGES:
            raise NotImplementedError("r > 2 spatial stages is not supported")
        self.system = system
        self.dx = check_positive(dx, "dx")
        self.dt = check_positive(dt, "dt")
        self.tol = check_positive(tol, "tol")
        self.max_iter = check_max_iter(max_iter)
        self.n_cells = int(n_cells)
        self.periodic = periodic
        self.time = time_tableau
        self.space = space_tableau
        s = time_tableau.s
        self.s = s
        self.positions = x0 + dx * (np.arange(self.n_cells)[:, None] + space_tableau.c[None, :])
        if n_quad is None:
            deg = system.nonlinearity_degree
            n_quad = 2 * s + 2 if deg is None else quadrature_points_for_degree(s * deg + s - 1)
        quad = gauss_legendre_rule(n_quad)
        ab = np.linspace(0.0, 1.0, s + 1)
        nodes = time_tableau.rule.nodes
        self._at_nodes = lagrange_basis(ab, nodes)
        self._slope_at_nodes = lagrange_basis_derivative(ab, nodes) / self.dt
        self._at_quad = lagrange_basis(ab, quad.nodes)
        li = np.stack([l(quad.nodes) for l in time_tableau.lagrange_basis])
        self._avg_quad = li * quad.weights[None, :] / time_tableau.b_weights[:, None]
        self._H0 = system.linearization(self.positions)
        self._lu = None
        self.refresh_jacobian = refresh_jacobian

    # --- residual -------------------------------------------------------
    def _unpack(self, X, data: BoxCells) -> BoxCells:
        s, N, d, r = self.s, self.n_cells, self.system.d, self.space.r
        ne = data.edges.shape[1]
        n_edge = s * (ne - (0 if self.periodic else 1)) * d
        edges = data.edges.copy()
        slopes = data.slopes.copy()
        if self.periodic:
            edges[1:] = X[:n_edge].reshape(s, ne, d)
        else:
            edges[1:, 1:] = X[:n_edge].reshape(s, ne - 1, d)
        slopes[1:] = X[n_edge:].reshape(s, N, r, d)
        return BoxCells(edges, slopes, self.periodic)

    def _pack(self, cells: BoxCells):
        e = cells.edges[1:] if self.periodic else cells.edges[1:, 1:]
        return np.concatenate([e.ravel(), cells.slopes[1:].ravel()])

    def _residual(self, cells: BoxCells, linear: bool = False):
        sys_ = self.system
        r1 = cells.right_edges() - cells.left_edges() - self.dx * np.einsum("j,tnjd->tnd", self.space.b, cells.slopes)
        Z = cells.internal(self.space, self.dx)
        dZ = np.einsum("it,tnjd->injd", self._slope_at_nodes, Z)
        Gc = np.einsum("it,tnjd->injd", self._at_nodes, cells.slopes)
        Zq = np.einsum("qt,tnjd->qnjd", self._at_quad, Z)
        if linear:
            grad = np.einsum("njde,qnje->qnjd", self._H0, Zq)
        else:
            grad = sys_.gradS(Zq, self.positions[None])
        avg_grad = np.einsum("iq,qnjd->injd", self._avg_quad, grad)
        r2 = dZ @ sys_.M.T + Gc @ sys_.K.T - avg_grad
        return np.concatenate([r1[1:].ravel(), r2.ravel()])

    def _factor(self, data: BoxCells):
        base = self._residual(self._unpack(np.zeros(self._size(data)), data), linear=True)
        n = base.size
        J = np.empty((n, n))
        e = np.zeros(n)
        for m in range(n):
            e[m] = 1.0
            J[:, m] = self._residual(self._unpack(e, data), linear=True) - base
            e[m] = 0.0
        self._lu = scipy.linalg.lu_factor(J, check_finite=False)

    def _size(self, data: BoxCells):
        ne = data.edges.shape[1] - (0 if self.periodic else 1)
        return self.s * (ne + self.n_cells * self.space.r) * self.system.d

    # --- stepping -------------------------------------------------------
    def initial_cells(self, edges, slopes) -> BoxCells:
        """Constant-in-tau stage data from one time level."""
        edges = np.asarray(edges, dtype=float)
        slopes = np.asarray(slopes, dtype=float)
        N, r, d = self.n_cells, self.space.r, self.system.d
        if slopes.shape != (N, r, d):
            raise ValueError(f"slopes must have shape {(N, r, d)}, got {slopes.shape}")
        expected = N if self.periodic else N + 1
        if edges.shape[0] != expected or edges.shape[-1] != d:
            raise ValueError(f"edges must have {expected} rows of length {d}")
        reps = (self.s + 1,) + (1,) * edges.ndim
        return BoxCells(np.tile(edges, reps), np.tile(slopes, (self.s + 1, 1, 1, 1)), self.periodic)

    def step(self, edges, slopes, left_edge=None) -> BoxStepResult:
        """Advance one time step.

        For a non-periodic stepper ``edges`` includes the left boundary edge
        and ``left_edge`` (shape ``(s + 1, d)``) prescribes its values in tau.
        """
        cells = self.initial_cells(edges, slopes)
        if not self.periodic:
            if left_edge is None:
                raise ValueError("a non-periodic box step needs the left edge values in tau")
            cells.edges[:, 0] = np.asarray(left_edge, dtype=float)
        if self.refresh_jacobian:
            # linearize about this step's starting internal values
            self._H0 = self.system.linearization(self.positions, cells.internal(self.space, self.dx)[0])
            self._factor(cells)
        elif self._lu is None:
            self._factor(cells)
        X = self._pack(cells)
        change = np.inf
        for it in range(1, self.max_iter + 1):
            F = self._residual(cells)
            delta = scipy.linalg.lu_solve(self._lu, F, check_finite=False)
            X = X - delta
            cells = self._unpack(X, cells)
            previous, change = change, float(np.max(np.abs(delta), initial=0.0))
            # the d_tau / dt terms put a round-off floor of a few 1e-14 on the
            # increments; a stalled increment within FLOOR_FACTOR * tol counts
            if change <= self.tol or (change <= FLOOR_FACTOR * self.tol and change > 0.5 * previous):
                return BoxStepResult(cells, it, self._residual(cells))
        raise ConvergenceError(
            f"box iteration did not converge in {self.max_iter} sweeps (last change {change:.3e})",
            iterate=cells, residual=change, iterations=self.max_iter)

    def run(self, edges, slopes, n_steps: int):
        """Advance a periodic ring ``n_steps`` times; yields each :class:`BoxStepResult`."""
        for _ in range(n_steps):
            res = self.step(edges, slopes)
            edges, slopes = res.cells.edges[-1], res.cells.slopes[-1]
            yield res


def gl_box_step(system, edges, slopes, x0, dx, dt, time_tableau, space_tableau, tol=1e-14,
                max_iter=200, periodic=True, left_edge=None):
    """One box-scheme step for all cells; returns ``(BoxStepResult, per-cell ECL residual)``."""
    n_cells = np.asarray(slopes).shape[0]
    stepper = GlBoxStepper(system, x0, dx, n_cells, dt, time_tableau, space_tableau, tol, max_iter, periodic)
    res = stepper.step(edges, slopes, left_edge)
    return res, gl_ecl_residual(res.cells, system, stepper.positions, dx, dt, time_tableau, space_tableau)


def _averages(values, tableau: CrkTableau, dt: float):
    """``(<f>_i, <d_t f>_i)`` for polynomials stored at uniform abscissae."""
    s = tableau.s
    ab = np.linspace(0.0, 1.0, s + 1)
    nodes = tableau.rule.nodes
    avg = np.tensordot(lagrange_basis(ab, nodes), values, axes=(1, 0))
    rate = np.tensordot(lagrange_basis_derivative(ab, nodes), values, axes=(1, 0)) / dt
    return avg, rate


def _edge_flux(edges, system, tableau, dt):
    avg, rate = _averages(edges, tableau, dt)
    return 0.5 * np.einsum("i,ind,de,ine->n", tableau.b_weights, avg, system.K, rate)


def _box_energy(Z, G, system, positions):
    return system.S(Z, positions) - 0.5 * np.einsum("njd,de,nje->nj", Z, system.K, G)


def gl_ecl_residual(cells: BoxCells, system: MultiSymplecticSystem1D, positions, dx, dt,
                    time_tableau: CrkTableau, space_tableau: GlSpaceTableau):
    """Per-cell ``dx sum_j b~_j (E^1 - E^0) + dt (Fbar_{n+1} - Fbar_n)``."""
    Z = cells.internal(space_tableau, dx)
    e0 = _box_energy(Z[0], cells.slopes[0], system, positions)
    e1 = _box_energy(Z[-1], cells.slopes[-1], system, positions)
    flux = _edge_flux(cells.edges, system, time_tableau, dt)
    if cells.periodic:
        jump = np.roll(flux, -1) - flux
    else:
        jump = flux[1:] - flux[:-1]
    return dx * (e1 - e0) @ space_tableau.b + dt * jump


def gl_edge_fluxes(cells: BoxCells, system, dt, time_tableau):
    return _edge_flux(cells.edges, system, time_tableau, dt)


def gl_global_energy(edges, slopes, system, positions, dx, space_tableau: GlSpaceTableau):
    """``dx sum_n sum_j b~_j E_{n,j}`` at one time level of a periodic ring."""
    left = edges if edges.shape[0] == slopes.shape[0] else edges[:-1]
    Z = left[:, None, :] + dx * np.einsum("jk,nkd->njd", space_tableau.a, slopes)
    return float(dx * np.sum(_box_energy(Z, slopes, system, positions) @ space_tableau.b))


def gl_commutator_defect(cells: BoxCells, dx, dt, time_tableau, space_tableau) -> float:
    """Max of ``|<d_x d_t Z>_i - <d_t d_x Z>_i|`` over stages and cells.

    ``d_x d_t Z`` is recovered from the spatial relation applied to the time
    derivatives; ``d_t d_x Z`` is the time derivative of the slopes.
    """
    Z = cells.internal(space_tableau, dx)
    _, dZ = _averages(Z, time_tableau, dt)
    _, de = _averages(cells.left_edges(), time_tableau, dt)
    _, dG = _averages(cells.slopes, time_tableau, dt)
    rhs = (dZ - de[:, :, None, :]) / dx
    dxdt = np.einsum("jk,inkd->injd", np.linalg.inv(space_tableau.a), rhs)
    return float(np.max(np.abs(dxdt - dG), initial=0.0))


def nls_box_system() -> MultiSymplecticSystem1D:
    """Cubic focusing NLS ``i u_t + u_xx / 2 + |u|^2 u = 0`` with ``z = (Re u, Im u, p1, p2)``.

    ``p = u_x / 2`` componentwise.
    """
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    O, I = np.zeros((2, 2)), np.eye(2)
    M = np.block([[J, O], [O, O]])
    K = np.block([[O, I], [-I, O]])

    def S(z, x=None):
        a = z[..., 0] ** 2 + z[..., 1] ** 2
        return -0.25 * a * a - z[..., 2] ** 2 - z[..., 3] ** 2

    def gradS(z, x=None):
        a = z[..., 0] ** 2 + z[..., 1] ** 2
        return np.stack([-a * z[..., 0], -a * z[..., 1], -2 * z[..., 2], -2 * z[..., 3]], axis=-1)

    def hess(x):
        return np.diag([0.0, 0.0, -2.0, -2.0])

    return MultiSymplecticSystem1D(M, K, S, gradS, nonlinearity_degree=3, hessian_at_zero=hess)
