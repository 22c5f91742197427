"""Named initial densities and terminal values.

Every family satisfies the boundary compatibility the solvers expect: the
densities vanish together with their derivative at both ends, and the
terminal values have zero slope at both ends.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InvalidDataError, InvalidParameterError
from .geometry import Grid, trapezoid


def normalize(density: np.ndarray, grid: Grid) -> np.ndarray:
    mass = trapezoid(density, grid)
    if not mass > 0:
        raise InvalidDataError("density has no mass to normalize")
    return density / mass


def bump(grid: Grid, center: float = 0.5, width: float = 0.2) -> np.ndarray:
    """Raised-cosine bump supported on ``[center - width, center + width]``."""
    if width <= 0 or center - width < 0 or center + width > grid.L:
        raise InvalidParameterError(f"bump [{center - width}, {center + width}] must lie inside [0, {grid.L}]")
    z = (grid.x - center) / width
    shape = np.where(np.abs(z) < 1.0, 0.5 * (1.0 + np.cos(np.pi * z)), 0.0)
    return normalize(shape, grid)


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


def uniform_interior(grid: Grid, margin: float = 0.1) -> np.ndarray:
    """Flat density with C1 shoulders of length ``margin`` at both ends."""
    if not 0 < margin <= grid.L / 2:
        raise InvalidParameterError(f"margin must lie in (0, L/2], got {margin}")
    shape = _smoothstep(grid.x / margin) * _smoothstep((grid.L - grid.x) / margin)
    return normalize(shape, grid)


def constant(grid: Grid, value: float = 0.5) -> np.ndarray:
    return np.full(grid.nx + 1, float(value))


def ramp(grid: Grid, slope: float = 0.25) -> np.ndarray:
    """Increasing terminal value ``slope * (x - L/(2 pi) sin(2 pi x / L))``.

    Its derivative ``slope * (1 - cos(2 pi x / L))`` vanishes at both ends and
    peaks at ``2 * slope`` in the middle.
    """
    x = grid.x
    return slope * (x - grid.L / (2 * np.pi) * np.sin(2 * np.pi * x / grid.L))


def read_table(path: str | Path, grid: Grid) -> np.ndarray:
    """Two-column CSV ``x,value`` (header optional), interpolated onto the grid."""
    xs, vals = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                xs.append(float(row[0]))
                vals.append(float(row[1]))
            except (ValueError, IndexError):
                if xs:
                    raise InvalidDataError(f"malformed row {row!r} in {path}") from None
    if len(xs) < 2:
        raise InvalidDataError(f"table {path} needs at least two rows")
    order = np.argsort(xs)
    return np.interp(grid.x, np.asarray(xs)[order], np.asarray(vals)[order])


def initial_density(spec: dict, grid: Grid) -> np.ndarray:
    kind = spec.get("kind", "bump")
    if kind == "bump":
        return bump(grid, spec.get("center", 0.5), spec.get("width", 0.2))
    if kind == "uniform-interior":
        return uniform_interior(grid, spec.get("margin", 0.1))
    if kind == "table":
        values = read_table(spec["path"], grid)
        if values.min() < 0:
            raise InvalidDataError("tabulated density has negative entries")
        return normalize(values, grid)
    raise InvalidParameterError(f"unknown initial density kind {kind!r}")


def terminal_value(spec: dict, grid: Grid) -> np.ndarray:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        values = constant(grid, spec.get("value", 0.5))
    elif kind == "ramp":
        values = ramp(grid, spec.get("slope", 0.25))
    elif kind == "table":
        values = read_table(spec["path"], grid)
    else:
        raise InvalidParameterError(f"unknown terminal value kind {kind!r}")
    if values.min() < 0:
        raise InvalidDataError(f"terminal value must be nonnegative, min is {values.min():.3e}")
    return values
