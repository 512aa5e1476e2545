"""Stage solvers for semilinear systems ``y' = L y + N(y)``.

Both the CRK method and the Gauss collocation (symplectic RK) method lead to
stage systems of the form ``(I - h B (x) L) Y = rhs(Y)``.  The linear block
operator is factored once; each fixed-point sweep re-evaluates only the
nonlinear term and back-substitutes.  This is a fixed-point iteration on the
stage values with the linear part treated implicitly, so stiff linear terms
(``h * |L|`` far above one) do not stall the iteration.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .crk import (ConvergenceError, CrkTableau, StageOperators, StagePolynomial,
                  gauss_legendre_rule, lagrange_basis)

__all__ = ["BlockLinearSolve", "StepResult", "CrkSemilinearStepper", "GaussCollocationStepper"]


def _maxdiff(a, b):
    d = a - b
    if np.iscomplexobj(d):
        return max(np.max(np.abs(d.real)), np.max(np.abs(d.imag)))
    return np.max(np.abs(d))


class BlockLinearSolve:
    """Factorization of ``I - h * kron(B, L)`` for an ``s x s`` matrix ``B``."""

    def __init__(self, B, L, h):
        B = np.atleast_2d(np.asarray(B))
        self.s = B.shape[0]
        if L is None:
            self.n = None
            self._lu = None
            return
        L = np.asarray(L)
        self.n = L.shape[0]
        op = np.eye(self.s * self.n, dtype=np.result_type(L, B, float)) - h * np.kron(B, L)
        self._lu = scipy.linalg.lu_factor(op, check_finite=False)

    def solve(self, rhs):
        if self._lu is None:
            return rhs
        shape = rhs.shape
        out = scipy.linalg.lu_solve(self._lu, rhs.reshape(-1), check_finite=False)
        return out.reshape(shape)


@dataclass
class StepResult:
    """Outcome of one step: the new state, its stage polynomial and the sweep count."""

    y1: np.ndarray
    stages: StagePolynomial
    iterations: int


class CrkSemilinearStepper:
    """CRK step for ``y' = L y + N(y)`` with exact integration of ``L y``.

    Parameters
    ----------
    tableau : CrkTableau
    linear : ndarray of shape (n, n) or None
        The linear operator ``L`` (dense, real or complex).
    nonlinear : callable
        ``N`` evaluated on stacked states of shape ``(k, n)``.
    h : float
        Step size (may be negative).
    n_quad : int
        Gauss points used for the nonlinear integrals.
    """

    def __init__(self, tableau: CrkTableau, linear, nonlinear: Callable, h: float, n_quad: int,
                 tol: float = 1e-14, max_iter: int = 200):
        self.tableau = tableau
        self.ops = StageOperators(tableau, n_quad)
        self.h = float(h)
        self.linear = None if linear is None else np.asarray(linear)
        self.nonlinear = nonlinear
        self.tol = tol
        self.max_iter = max_iter
        self._solver = BlockLinearSolve(self.ops.a_lin[:, 1:], self.linear, self.h)

    def step(self, y0, guess=None) -> StepResult:
        ops, h = self.ops, self.h
        s = ops.s
        y0 = np.asarray(y0)
        rhs0 = np.broadcast_to(y0, (s,) + y0.shape).copy()
        if self.linear is not None:
            rhs0 += h * np.outer(ops.a_lin[:, 0], self.linear @ y0).reshape(rhs0.shape)
        Y = np.broadcast_to(y0, rhs0.shape).copy() if guess is None else np.array(guess)
        ha = h * ops.a_quad
        base = np.outer(ops.interp[:, 0], y0)
        change = np.inf
        for it in range(1, self.max_iter + 1):
            ysig = base + ops.interp[:, 1:] @ Y
            rhs = rhs0 + ha @ self.nonlinear(ysig)
            new = self._solver.solve(rhs)
            change = _maxdiff(new, Y)
            Y = new
            if change <= self.tol:
                values = np.concatenate([y0[None], Y], axis=0)
                return StepResult(Y[-1].copy(), StagePolynomial(values), it)
        raise ConvergenceError(
            f"stage iteration did not converge in {self.max_iter} sweeps (last change {change:.3e})",
            iterate=Y, residual=float(change), iterations=self.max_iter)


class GaussCollocationStepper:
    """``s``-stage Gauss-Legendre Runge-Kutta (symplectic) for ``y' = L y + N(y)``.

    The stage polynomial returned is the collocation polynomial through
    ``y0`` and the internal stages, stored at the uniform abscissae; its
    value at ``tau = 1`` is the step result.
    """

    def __init__(self, s: int, linear, nonlinear: Callable, h: float, tol: float = 1e-14,
                 max_iter: int = 200):
        rule = gauss_legendre_rule(s)
        self.rule = rule
        c = rule.nodes
        basis = [np.poly1d(np.poly(np.delete(c, j))) / np.prod(c[j] - np.delete(c, j)) for j in range(s)]
        self.A = np.array([[basis[j].integ()(c[i]) - basis[j].integ()(0.0) for j in range(s)] for i in range(s)])
        self.b = rule.weights
        # y1 = y0 + sum_i d_i (Y_i - y0) avoids multiplying stage errors by h L
        self.d = np.linalg.solve(self.A.T, self.b)
        self.h = float(h)
        self.linear = None if linear is None else np.asarray(linear)
        self.nonlinear = nonlinear
        self.tol = tol
        self.max_iter = max_iter
        self._solver = BlockLinearSolve(self.A, self.linear, self.h)
        nodes = np.concatenate([[0.0], c])
        self._to_uniform = lagrange_basis(nodes, np.linspace(0.0, 1.0, s + 1))

    @property
    def s(self):
        return self.rule.s

    def step(self, y0, guess=None) -> StepResult:
        h, s = self.h, self.s
        y0 = np.asarray(y0)
        Y = np.broadcast_to(y0, (s,) + y0.shape).copy() if guess is None else np.array(guess)
        ha = h * self.A
        change = np.inf
        for it in range(1, self.max_iter + 1):
            rhs = y0 + ha @ self.nonlinear(Y)
            new = self._solver.solve(rhs)
            change = _maxdiff(new, Y)
            Y = new
            if change <= self.tol:
                y1 = y0 + self.d @ (Y - y0)
                samples = np.concatenate([y0[None], Y], axis=0)
                values = np.tensordot(self._to_uniform, samples, axes=(1, 0))
                values[0] = y0
                values[-1] = y1
                return StepResult(y1, StagePolynomial(values), it)
        raise ConvergenceError(
            f"Gauss stage iteration did not converge in {self.max_iter} sweeps (last change {change:.3e})",
            iterate=Y, residual=float(change), iterations=self.max_iter)
