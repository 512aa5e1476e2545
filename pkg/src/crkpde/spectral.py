"""Periodic grids with skew-symmetric pseudospectral differentiation matrices."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import check_positive, check_vector

__all__ = [
    "SpectralGrid1D",
    "SpectralGrid2D",
    "build_grid_1d",
    "build_grid_2d",
    "apply_diff_1d",
    "apply_diff_2d_x",
    "apply_diff_2d_y",
]


def _diff_matrix(n, length):
    # D_jk = (pi/L) (-1)^(j+k) cot(pi (j-k)/n), built from index differences so
    # that D = -D^T holds bit for bit
    m = np.arange(1, n)
    col = (np.pi / length) * (-1.0) ** m / np.tan(np.pi * m / n)
    col[n // 2 - 1] = 0.0  # cot(pi/2)
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    D = np.zeros((n, n))
    pos = diff > 0
    D[pos] = col[diff[pos] - 1]
    D[~pos & (diff != 0)] = -col[-diff[~pos & (diff != 0)] - 1]
    return D


@dataclass(frozen=True)
class SpectralGrid1D:
    """Uniform periodic grid ``x_j = x0 + j L / n`` and its matrix ``D``."""

    x0: float
    length: float
    n: int

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @cached_property
    def points(self) -> np.ndarray:
        return self.x0 + np.arange(self.n) * self.spacing

    @cached_property
    def diff_matrix(self) -> np.ndarray:
        D = _diff_matrix(self.n, self.length)
        D.flags.writeable = False
        return D

    def apply(self, field):
        """``D @ field`` along the first axis."""
        return self.diff_matrix @ field


def build_grid_1d(x0: float, length: float, n: int) -> SpectralGrid1D:
    """Validated constructor for :class:`SpectralGrid1D`.

    ``n`` must be even and at least 4.
    """
    check_positive(length, "length")
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 4 or n % 2:
        raise ValueError(f"grid count must be an even integer >= 4, got {n!r}")
    return SpectralGrid1D(float(x0), float(length), int(n))


def apply_diff_1d(grid: SpectralGrid1D, field):
    field = check_vector(field, grid.n)
    return grid.diff_matrix @ field


@dataclass(frozen=True)
class SpectralGrid2D:
    """Tensor grid; fields are stored lexicographically with x as the slow index.

    Entry ``(j, l)`` of an ``(N, M)`` array sits at position ``j*M + l`` of
    the flat vector, so ``D_x (x) I_M`` and ``I_N (x) D_y`` act as
    ``Dx @ F`` and ``F @ Dy.T`` on the reshaped field.
    """

    grid_x: SpectralGrid1D
    grid_y: SpectralGrid1D

    @property
    def shape(self):
        return (self.grid_x.n, self.grid_y.n)

    @property
    def size(self) -> int:
        return self.grid_x.n * self.grid_y.n

    @property
    def cell_area(self) -> float:
        return self.grid_x.spacing * self.grid_y.spacing

    @cached_property
    def mesh(self):
        return np.meshgrid(self.grid_x.points, self.grid_y.points, indexing="ij")

    def index(self, j, l):
        return j * self.grid_y.n + l

    def unindex(self, k):
        return divmod(k, self.grid_y.n)

    def dx(self, field):
        """x-derivative of an ``(N, M)`` array."""
        return self.grid_x.diff_matrix @ field

    def dy(self, field):
        """y-derivative of an ``(N, M)`` array."""
        return field @ self.grid_y.diff_matrix.T


def build_grid_2d(x0, length_x, n, y0, length_y, m) -> SpectralGrid2D:
    return SpectralGrid2D(build_grid_1d(x0, length_x, n), build_grid_1d(y0, length_y, m))


def apply_diff_2d_x(grid: SpectralGrid2D, field):
    field = check_vector(field, grid.size)
    return grid.dx(field.reshape(grid.shape)).ravel()


def apply_diff_2d_y(grid: SpectralGrid2D, field):
    field = check_vector(field, grid.size)
    return grid.dy(field.reshape(grid.shape)).ravel()
