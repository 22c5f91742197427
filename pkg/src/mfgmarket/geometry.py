"""Uniform space-time grid and the discrete calculus shared by all solvers.

Fields are plain numpy arrays. A time slice has shape ``(nx + 1,)``; a
space-time field has shape ``(nt + 1, nx + 1)`` with row ``k`` holding the
values at ``t_k``. Every function below operates along the last axis, so it
accepts either a single slice or a whole field.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatchError, GridTooSmallError, InvalidParameterError, MassMismatchError, NegativeDensityError

MASS_TOL = 1e-8
NEGATIVE_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform lattice on ``[0, T] x [0, L]``."""

    nx: int
    nt: int
    L: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 1:
            raise InvalidParameterError(f"nx must be a positive integer, got {self.nx}")
        if int(self.nt) != self.nt or self.nt < 1:
            raise InvalidParameterError(f"nt must be a positive integer, got {self.nt}")
        if not (self.L > 0 and self.T > 0):
            raise InvalidParameterError(f"L and T must be positive, got L={self.L}, T={self.T}")

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.dx

    @cached_property
    def t(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.nx + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights, equal to the finite-volume cell widths."""
        w = np.full(self.nx + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def refined(self, factor: int = 2) -> Grid:
        return Grid(self.nx * factor, self.nt * factor, self.L, self.T)

    def check_slice(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.nx + 1:
            raise GridMismatchError(f"expected {self.nx + 1} space nodes, got {values.shape[-1]}")
        return values

    def check_field(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise GridMismatchError(f"expected field of shape {self.shape}, got {values.shape}")
        return values


def trapezoid(values: np.ndarray, grid: Grid) -> np.ndarray | float:
    """Trapezoid rule over ``[0, L]`` along the last axis."""
    values = grid.check_slice(values)
    out = values @ grid.weights
    return float(out) if np.ndim(out) == 0 else out


def derivative(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Centered differences inside, one-sided second order at both ends."""
    values = grid.check_slice(values)
    if grid.nx < 2:
        raise GridTooSmallError("derivative needs at least 3 space nodes (nx >= 2)")
    return np.gradient(values, grid.dx, axis=-1, edge_order=2)


def cdf(density: np.ndarray, grid: Grid) -> np.ndarray:
    """Cumulative trapezoid integral ``F_i`` of ``density`` over ``[0, x_i]``."""
    density = grid.check_slice(density)
    if np.any(density < -NEGATIVE_TOL):
        raise NegativeDensityError(f"density has entries down to {density.min():.3e}")
    increments = 0.5 * grid.dx * (density[..., 1:] + density[..., :-1])
    out = np.zeros_like(density)
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


def wasserstein1(m1: np.ndarray, m2: np.ndarray, grid: Grid) -> np.ndarray | float:
    """Kantorovich-Rubinstein distance of two equal-mass densities on ``[0, L]``.

    In one dimension the optimal coupling is monotone, so the distance is the
    L1 norm of the difference of the cumulative distribution functions.
    """
    f1, f2 = cdf(m1, grid), cdf(m2, grid)
    gap = np.abs(f1[..., -1] - f2[..., -1])
    if np.any(gap > MASS_TOL):
        raise MassMismatchError(f"masses differ by {np.max(gap):.3e}")
    return trapezoid(np.abs(f1 - f2), grid)


def space_time_integral(field: np.ndarray, grid: Grid, discount: float = 0.0) -> float:
    """Left-point rule in time, trapezoid in space, with optional ``exp(-r t)``.

    ``field`` may have ``nt + 1`` rows (the last one is ignored) or exactly
    ``nt`` rows.
    """
    field = grid.check_slice(field)
    rows = field[: grid.nt]
    if rows.shape[0] != grid.nt:
        raise GridMismatchError(f"need at least {grid.nt} time rows, got {field.shape[0]}")
    weights = grid.dt * np.exp(-discount * grid.t[: grid.nt])
    return float(weights @ trapezoid(rows, grid))


def time_integral(series: np.ndarray, grid: Grid, discount: float = 0.0) -> float:
    """Left-point rule for a time series of length ``nt`` or ``nt + 1``."""
    series = np.asarray(series, dtype=float)[: grid.nt]
    weights = grid.dt * np.exp(-discount * grid.t[: grid.nt])
    return float(weights @ series)


def smooth_test_functions(grid: Grid):
    """Battery of ten nonnegative smooth test functions for weak forms.

    Each function is ``(1 + cos(j pi t / T)) (1 + cos(k pi x / L)) / 4`` with
    ``j`` in {1, 3} and ``k`` in {0, ..., 4}. They vanish with their time
    derivative at ``t = T`` and satisfy ``phi_x = 0`` at ``x = 0`` and
    ``x = L``. Yields tuples ``(phi, phi_t, phi_x, phi_xx)`` of lattice arrays.
    """
    t = grid.t[:, None]
    x = grid.x[None, :]
    for j in (1, 3):
        a = j * np.pi / grid.T
        time = 0.5 * (1.0 + np.cos(a * t))
        time_t = -0.5 * a * np.sin(a * t)
        for k in range(5):
            w = k * np.pi / grid.L
            space = 0.5 * (1.0 + np.cos(w * x))
            space_x = -0.5 * w * np.sin(w * x)
            space_xx = -0.5 * w * w * np.cos(w * x)
            yield time * space, time_t * space, time * space_x, time * space_xx
