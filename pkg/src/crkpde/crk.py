"""Continuous Runge-Kutta (CRK) methods generated by quadrature rules.

A CRK method with generating quadrature ``(b_i, c_i)`` advances ``y' = f(y)``
through a degree-``s`` polynomial ``y_tau`` over the step::

    y_tau = y0 + h * int_0^1 A(tau, sigma) f(y_sigma) dsigma
    y1    = y0 + h * int_0^1 f(y_sigma) dsigma

with ``A(tau, sigma) = sum_i (1/b_i) (int_0^tau l_i) l_i(sigma)``.  For
``f = J^{-1} grad H`` and exactly evaluated integrals the Hamiltonian is
preserved.  Stage polynomials are stored by their values at the uniform
abscissae ``0, 1/s, ..., 1``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P

from ._validation import check_positive, check_state

__all__ = [
    "ConvergenceError",
    "QuadratureRule",
    "gauss_legendre_rule",
    "CrkTableau",
    "build_crk_tableau",
    "StagePolynomial",
    "weighted_average",
    "StageOperators",
    "HamiltonianSystem",
    "crk_step",
    "lagrange_basis",
    "lagrange_basis_derivative",
    "quadrature_points_for_degree",
]

MAX_GAUSS_POINTS = 10


class ConvergenceError(RuntimeError):
    """Raised when a fixed-point stage iteration does not reach its tolerance.

    Attributes
    ----------
    iterate : ndarray
        The last iterate of the stage unknowns.
    residual : float
        Max-norm difference between the last two sweeps.
    iterations : int
        Number of sweeps performed.
    """

    def __init__(self, message, iterate=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature formula on [0, 1].

    Parameters
    ----------
    nodes : ndarray of shape (s,)
        Strictly increasing abscissae in [0, 1].
    weights : ndarray of shape (s,)
        Weights, summing to one.
    order : int
        Exactness degree plus one (``2s`` for Gauss-Legendre).
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.size == 0 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be non-empty and of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("quadrature nodes must be strictly increasing")
        if nodes[0] < 0 or nodes[-1] > 1:
            raise ValueError("quadrature nodes must lie in [0, 1]")
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def s(self) -> int:
        return self.nodes.size

    def integrate(self, values, axis=0):
        """Apply the rule to samples taken at ``nodes`` along ``axis``."""
        values = np.moveaxis(np.asarray(values), axis, 0)
        return np.tensordot(self.weights, values, axes=(0, 0))

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.nodes, 1.0 - self.nodes[::-1], rtol=0, atol=1e-14))


def _legendre_and_derivative(n, x):
    # three-term recurrence for P_n on [-1, 1]
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_legendre_rule(s: int) -> QuadratureRule:
    """Return the ``s``-point Gauss-Legendre rule mapped to [0, 1].

    Nodes are found by Newton iteration on the Legendre polynomial, started
    from Chebyshev points.

    >>> rule = gauss_legendre_rule(2)
    >>> rule.weights
    array([0.5, 0.5])
    """
    if not isinstance(s, (int, np.integer)) or isinstance(s, bool) or not 1 <= s <= MAX_GAUSS_POINTS:
        raise ValueError(f"Gauss-Legendre point count must be an integer in [1, {MAX_GAUSS_POINTS}], got {s!r}")
    return _gauss_legendre_cached(int(s))


# rules are immutable (read-only arrays), so sharing them is safe
@functools.lru_cache(maxsize=None)
def _gauss_legendre_cached(s: int) -> QuadratureRule:
    k = np.arange(1, s + 1)
    x = -np.cos((2 * k - 1) * np.pi / (2 * s))
    for _ in range(100):
        p, dp = _legendre_and_derivative(s, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= 1e-16:
            break
    p, dp = _legendre_and_derivative(s, x)
    weights = 2.0 / ((1.0 - x * x) * dp * dp)
    # symmetrize to remove the last bits of Newton noise
    x = 0.5 * (x - x[::-1])
    weights = 0.5 * (weights + weights[::-1])
    if s % 2:
        x[s // 2] = 0.0
    return QuadratureRule(nodes=0.5 * (x + 1.0), weights=0.5 * weights, order=2 * s)


def quadrature_points_for_degree(degree: int) -> int:
    """Smallest Gauss point count that integrates polynomials of ``degree`` exactly."""
    return max(1, math.ceil((int(degree) + 1) / 2))


def lagrange_basis(nodes, t):
    """Evaluate the Lagrange basis on ``nodes`` at points ``t``.

    Returns an array of shape ``(len(t), len(nodes))``.
    """
    nodes = np.asarray(nodes, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = nodes.size
    out = np.ones((t.size, n))
    for i in range(n):
        for k in range(n):
            if k != i:
                out[:, i] *= (t - nodes[k]) / (nodes[i] - nodes[k])
    return out


def lagrange_basis_derivative(nodes, t):
    """Derivatives of the Lagrange basis on ``nodes`` at ``t``, shape ``(len(t), len(nodes))``."""
    nodes = np.asarray(nodes, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = nodes.size
    out = np.zeros((t.size, n))
    for i in range(n):
        denom = np.prod([nodes[i] - nodes[k] for k in range(n) if k != i])
        for m in range(n):
            if m == i:
                continue
            term = np.ones_like(t)
            for k in range(n):
                if k != i and k != m:
                    term = term * (t - nodes[k])
            out[:, i] += term
        out[:, i] /= denom
    return out


@dataclass(frozen=True)
class CrkTableau:
    """Coefficient form of a CRK method.

    Attributes
    ----------
    rule : QuadratureRule
        The generating quadrature.
    lagrange_basis : tuple of Polynomial
        ``l_i(tau)`` in monomial form.
    a_poly : ndarray of shape (s + 1, s)
        ``a_poly[p, q]`` is the coefficient of ``tau**p * sigma**q`` in ``A``.
    b_weights : ndarray of shape (s,)
        ``int_0^1 l_i``, which equals the rule weights.
    """

    rule: QuadratureRule
    lagrange_basis: tuple
    a_poly: np.ndarray
    b_weights: np.ndarray
    _operators: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def s(self) -> int:
        return self.rule.s

    @property
    def order(self) -> int:
        s, r = self.s, self.rule.order
        return 2 * s if r >= 2 * s - 1 else 2 * r - 2 * s + 2

    @property
    def is_symmetric(self) -> bool:
        return self.rule.is_symmetric

    def b_weight(self, sigma):
        """The weight function ``B_sigma``, identically one."""
        return np.ones_like(np.asarray(sigma, dtype=float))

    def a(self, tau, sigma):
        """Evaluate ``A(tau, sigma)`` with broadcasting."""
        tau, sigma = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(sigma, dtype=float))
        return P.polyval2d(tau, sigma, self.a_poly)

    def c_tau(self):
        """Coefficients (in tau) of ``int_0^1 A(tau, sigma) dsigma``."""
        q = np.arange(self.s)
        return self.a_poly @ (1.0 / (q + 1.0))

    def dump(self) -> str:
        """Plain-text coefficient dump: 17 significant digits, row-major."""
        lines = [f"s {self.s}", f"order {self.order}"]
        lines.append("nodes " + " ".join(f"{v:.16e}" for v in self.rule.nodes))
        lines.append("weights " + " ".join(f"{v:.16e}" for v in self.b_weights))
        for p, row in enumerate(self.a_poly):
            lines.append(f"a_poly[{p}] " + " ".join(f"{v:.16e}" for v in row))
        return "\n".join(lines) + "\n"


def build_crk_tableau(rule: QuadratureRule) -> CrkTableau:
    """Build ``A(tau, sigma)`` and the Lagrange basis for a generating rule."""
    c = rule.nodes
    if np.unique(c).size != c.size:
        raise ValueError("quadrature nodes must be distinct")
    basis = []
    for i in range(rule.s):
        poly = Polynomial([1.0])
        for k in range(rule.s):
            if k != i:
                poly = poly * Polynomial([-c[k], 1.0]) / (c[i] - c[k])
        basis.append(poly)
    s = rule.s
    b = np.array([poly.integ(lbnd=0)(1.0) for poly in basis])
    if not np.allclose(b, rule.weights, rtol=0, atol=1e-12):
        raise ValueError("rule weights are not the integrals of the Lagrange basis (not interpolatory)")
    a_poly = np.zeros((s + 1, s))
    for i, poly in enumerate(basis):
        big = np.zeros(s + 1)
        lc = poly.integ(lbnd=0).coef
        big[: lc.size] = lc
        small = np.zeros(s)
        small[: poly.coef.size] = poly.coef
        a_poly += np.outer(big, small) / b[i]
    a_poly.flags.writeable = False
    b.flags.writeable = False
    return CrkTableau(rule=rule, lagrange_basis=tuple(basis), a_poly=a_poly, b_weights=b)


@dataclass
class StagePolynomial:
    """Degree-``s`` polynomial in tau stored at abscissae ``0, 1/s, ..., 1``.

    ``values`` has shape ``(s + 1, *state_shape)``.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim == 0 or self.values.shape[0] < 2:
            raise ValueError("a stage polynomial needs at least two stored values")

    @property
    def degree(self) -> int:
        return self.values.shape[0] - 1

    @property
    def abscissae(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.degree + 1)

    @property
    def initial(self):
        return self.values[0]

    @property
    def final(self):
        return self.values[-1]

    def __call__(self, tau):
        tau_arr = np.asarray(tau, dtype=float)
        basis = lagrange_basis(self.abscissae, tau_arr.ravel())
        out = np.tensordot(basis, self.values, axes=(1, 0))
        return out.reshape(tau_arr.shape + self.values.shape[1:])

    def derivative(self, tau):
        """d/dtau of the polynomial at ``tau``."""
        tau_arr = np.asarray(tau, dtype=float)
        basis = lagrange_basis_derivative(self.abscissae, tau_arr.ravel())
        out = np.tensordot(basis, self.values, axes=(1, 0))
        return out.reshape(tau_arr.shape + self.values.shape[1:])

    def map(self, fn) -> "StagePolynomial":
        """Apply a *linear* map to every stored value."""
        return StagePolynomial(np.stack([fn(v) for v in self.values]))

    @classmethod
    def from_samples(cls, taus, samples, degree):
        """Interpolate samples at ``taus`` (``degree + 1`` of them) onto the uniform abscissae."""
        taus = np.asarray(taus, dtype=float)
        if taus.size != degree + 1:
            raise ValueError("need exactly degree + 1 samples")
        basis = lagrange_basis(taus, np.linspace(0.0, 1.0, degree + 1))
        return cls(np.tensordot(basis, np.asarray(samples), axes=(1, 0)))


def weighted_average(f, tableau: CrkTableau, i: int, degree: Optional[int] = None):
    """``(1/b_i) int_0^1 l_i(tau) f(tau) dtau``, exact for polynomial ``f``.

    ``f`` is a :class:`StagePolynomial` or a vectorized callable of tau; for a
    callable the polynomial ``degree`` must be given.
    """
    if not 0 <= i < tableau.s:
        raise IndexError(f"stage index {i} out of range for s={tableau.s}")
    if isinstance(f, StagePolynomial):
        degree = f.degree if degree is None else degree
        fn = f
    else:
        if degree is None:
            raise ValueError("degree is required when f is a callable")
        fn = f
    rule = gauss_legendre_rule(quadrature_points_for_degree(degree + tableau.s - 1))
    li = tableau.lagrange_basis[i](rule.nodes)
    vals = np.asarray(fn(rule.nodes))
    vals = vals.reshape((rule.s,) + vals.shape[1:]) if vals.ndim else np.full(rule.s, vals)
    return np.tensordot(rule.weights * li, vals, axes=(0, 0)) / tableau.b_weights[i]


class StageOperators:
    """Precomputed matrices for solving CRK stage systems.

    The unknowns are the stage values at abscissae ``1/s, ..., 1``.  With
    ``m`` Gauss points ``sigma_k`` (weights ``w_k``):

    * ``interp[k, b]`` evaluates the stage polynomial at ``sigma_k`` from the
      values at abscissa ``b``;
    * ``a_quad[a, k] = A(tau_a, sigma_k) w_k`` integrates a nonlinear term;
    * ``a_lin[a, b] = int A(tau_a, sigma) ltilde_b(sigma) dsigma`` integrates a
      term linear in the stage polynomial exactly.
    """

    def __init__(self, tableau: CrkTableau, n_quad: int):
        self.tableau = tableau
        s = tableau.s
        self.s = s
        self.n_quad = int(n_quad)
        self.quad = gauss_legendre_rule(self.n_quad)
        self.abscissae = np.linspace(0.0, 1.0, s + 1)
        sig = self.quad.nodes
        self.interp = lagrange_basis(self.abscissae, sig)
        taus = self.abscissae[1:]
        self.a_quad = tableau.a(taus[:, None], sig[None, :]) * self.quad.weights[None, :]
        exact = gauss_legendre_rule(s + 1)
        lin_basis = lagrange_basis(self.abscissae, exact.nodes)
        a_exact = tableau.a(taus[:, None], exact.nodes[None, :]) * exact.weights[None, :]
        self.a_lin = a_exact @ lin_basis

    @classmethod
    def for_nonlinearity(cls, tableau: CrkTableau, nonlinearity_degree: Optional[int], n_quad: Optional[int] = None):
        """Pick the Gauss point count that integrates ``A * f(y_sigma)`` exactly."""
        if n_quad is None:
            if nonlinearity_degree is None:
                n_quad = min(MAX_GAUSS_POINTS, 2 * tableau.s + 2)
            else:
                deg = tableau.s * int(nonlinearity_degree) + tableau.s - 1
                n_quad = quadrature_points_for_degree(deg)
        n_quad = int(n_quad)
        ops = tableau._operators.get(n_quad)
        if ops is None:
            ops = tableau._operators[n_quad] = cls(tableau, n_quad)
        return ops


def _default_structure(d):
    half = d // 2
    J = np.zeros((d, d))
    J[:half, half:] = -np.eye(half)
    J[half:, :half] = np.eye(half)
    return J


@dataclass
class HamiltonianSystem:
    """``y' = J^{-1} grad H(y)`` with a skew-symmetric structure matrix ``J``.

    ``hamiltonian`` and ``gradient`` must accept arrays of shape ``(..., d)``.
    ``nonlinearity_degree`` is the polynomial degree of the gradient, or
    ``None`` for a non-polynomial gradient (energy is then preserved only up
    to quadrature error).
    """

    hamiltonian: Callable
    gradient: Callable
    structure_matrix: np.ndarray = None
    dimension: int = None
    nonlinearity_degree: Optional[int] = 1
    _inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.structure_matrix is None:
            if self.dimension is None or self.dimension % 2:
                raise ValueError("give a structure matrix or an even dimension")
            self.structure_matrix = _default_structure(self.dimension)
        J = np.asarray(self.structure_matrix, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("structure matrix must be square")
        if np.max(np.abs(J + J.T)) > 1e-14 * max(1.0, np.max(np.abs(J))):
            raise ValueError("structure matrix must be skew-symmetric")
        self.structure_matrix = J
        self.dimension = J.shape[0]
        self._inv = np.linalg.inv(J)

    @property
    def polynomial(self) -> bool:
        return self.nonlinearity_degree is not None

    def vector_field(self, y):
        return self.gradient(y) @ self._inv.T


def crk_step(system: HamiltonianSystem, y0, h: float, tableau: CrkTableau, tol: float = 1e-14,
             max_iter: int = 200, operators: Optional[StageOperators] = None):
    """Advance one CRK step by fixed-point iteration on the stage values.

    Returns ``(y1, stages, iterations)``.  Raises :class:`ConvergenceError`
    when ``max_iter`` sweeps do not bring the max-norm change below ``tol``.
    """
    check_positive(tol, "tol")
    y0 = check_state(y0, system.dimension)
    ops = operators or StageOperators.for_nonlinearity(tableau, system.nonlinearity_degree)
    s = tableau.s
    values = np.empty((s + 1, y0.size))
    values[:] = y0
    interp0 = ops.interp[:, :1]
    interp_rest = ops.interp[:, 1:]
    ha = h * ops.a_quad
    base = interp0 * y0
    change = np.inf
    for it in range(1, max_iter + 1):
        ysig = base + interp_rest @ values[1:]
        new = y0 + ha @ system.vector_field(ysig)
        change = abs(new - values[1:]).max()
        values[1:] = new
        if change <= tol:
            return values[-1].copy(), StagePolynomial(values), it
    raise ConvergenceError(
        f"CRK stage iteration did not converge in {max_iter} sweeps (last change {change:.3e})",
        iterate=values.copy(), residual=float(change), iterations=max_iter)
