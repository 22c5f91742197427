"""Convex-optimization view of the equilibrium.

In the variables ``(m, w)`` with momentum ``w = q m`` the producers'
equilibrium minimizes

    J(m, w) = int int e^{-rt} (Psi(m, w) - b_bar w) + c_bar int e^{-rt} (int w dx)^2
              - int e^{-rT} u_T m(T)

over density/momentum pairs that solve ``m_t - sigma^2/2 m_xx - w_x = 0`` from
``m_0``, where ``Psi(m, w) = w^2 / m`` is the jointly convex kinetic energy.
Quadrature everywhere is left-point in time and trapezoid in space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasiblePairError, NegativeDensityError
from .fp import FpOptions, solve_fp
from .geometry import Grid, derivative, space_time_integral, time_integral, trapezoid
from .market import Boundary, MarketParams, coupling_G

TINY_M = 1e-14
# |w| above this at a node with 0 < m < TINY_M would overflow into a huge but finite cost
TINY_W = 1e-14 * math.sqrt(1e14)


@dataclass(frozen=True)
class ControlPair:
    """Density ``m`` and momentum ``w = q m`` on the full lattice."""

    m: np.ndarray
    w: np.ndarray
    source: str = "competitor"  # or "equilibrium"

    @property
    def q(self) -> np.ndarray:
        """Control recovered from the momentum, zero where the density vanishes."""
        return np.divide(self.w, self.m, out=np.zeros_like(self.w), where=self.m > 0)


def psi(m, w):
    """Kinetic energy ``w^2 / m``; ``0`` at ``(0, 0)`` and ``inf`` at ``(0, w != 0)``.

    Works elementwise on arrays. Nodes with a vanishing but positive density
    and a non-negligible momentum count as infeasible too.
    """
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(m < 0):
        raise NegativeDensityError(f"psi needs m >= 0, got {np.min(m):.3e}")
    m, w = np.broadcast_arrays(m, w)
    with np.errstate(over="ignore"):
        out = np.divide(w * w, m, out=np.zeros(m.shape), where=m > 0)
    infeasible = ((m == 0) & (w != 0)) | ((m < TINY_M) & (np.abs(w) > TINY_W))
    out[infeasible] = math.inf
    return float(out) if out.ndim == 0 else out


def _check_pair(pair: ControlPair, grid: Grid):
    if pair.m.shape != grid.shape or pair.w.shape != grid.shape:
        raise InfeasiblePairError(f"pair must live on the lattice {grid.shape}, got {pair.m.shape} and {pair.w.shape}")
    if not (np.all(np.isfinite(pair.m)) and np.all(np.isfinite(pair.w))):
        raise InfeasiblePairError("pair has non-finite entries")
    if np.any(pair.m < 0):
        raise InfeasiblePairError(f"density of the pair is negative down to {pair.m.min():.3e}")


def evaluate_J(pair: ControlPair, u_T: np.ndarray, params: MarketParams, grid: Grid) -> float:
    """Objective value of a feasible pair, ``math.inf`` if some node has infinite cost."""
    _check_pair(pair, grid)
    u_T = grid.check_slice(u_T)
    if np.any(u_T < 0):
        raise InfeasiblePairError("terminal value must be nonnegative")
    kinetic = psi(pair.m[: grid.nt], pair.w[: grid.nt])
    if np.any(np.isinf(kinetic)):
        return math.inf
    running = space_time_integral(kinetic - params.b_bar * pair.w[: grid.nt], grid, discount=params.r)
    crowd = params.c_bar * time_integral(trapezoid(pair.w, grid) ** 2, grid, discount=params.r)
    terminal = math.exp(-params.r * grid.T) * trapezoid(u_T * pair.m[-1], grid)
    return running + crowd - terminal


def competitor_from_control(
    q_tilde: np.ndarray,
    m0: np.ndarray,
    params: MarketParams,
    grid: Grid,
    bc: Boundary = Boundary.NEUMANN,
    opts: FpOptions | None = None,
) -> ControlPair:
    """Feasible pair obtained by pushing ``m0`` forward with the control ``q_tilde``."""
    q_tilde = grid.check_field(np.broadcast_to(np.asarray(q_tilde, dtype=float), grid.shape))
    m = solve_fp(q_tilde, m0, params, grid, bc, opts)
    return ControlPair(m, q_tilde * m, "competitor")


def equilibrium_pair(sol) -> ControlPair:
    return ControlPair(sol.m, sol.q * sol.m, "equilibrium")


def first_order_residual(sol, params: MarketParams, grid: Grid) -> float:
    """Max over the lattice of ``|b_bar - 2q - 2 c_bar int q m - u_x|``."""
    u_x = derivative(sol.u, grid)
    qm = trapezoid(sol.q * sol.m, grid)
    res = params.b_bar - 2.0 * sol.q - 2.0 * params.c_bar * qm[:, None] - u_x
    return float(np.max(np.abs(res)))


def optimality_gap(equilibrium: ControlPair, competitor: ControlPair, u: np.ndarray, params: MarketParams, grid: Grid) -> float:
    """``int int e^{-rt} m~ (q~ - q)^2 + c_bar int e^{-rt} (int (w~ - w))^2``.

    ``q`` is the equilibrium control rebuilt from ``u``; the first term is
    evaluated as ``Psi(m~, w~) - 2 w~ q + m~ q^2`` so no division by ``m~``
    is needed.
    """
    _check_pair(equilibrium, grid)
    _check_pair(competitor, grid)
    u = grid.check_field(u)
    q, _ = coupling_G(derivative(u, grid), equilibrium.m, params, grid, check_mass=False)
    rows = slice(0, grid.nt)
    kinetic = psi(competitor.m[rows], competitor.w[rows])
    if np.any(np.isinf(kinetic)):
        return math.inf
    spread = kinetic - 2.0 * competitor.w[rows] * q[rows] + competitor.m[rows] * q[rows] ** 2
    term1 = space_time_integral(spread, grid, discount=params.r)
    dw = trapezoid(competitor.w - equilibrium.w, grid)
    term2 = params.c_bar * time_integral(dw**2, grid, discount=params.r)
    return float(term1 + term2)


def competitor_controls(q_star: np.ndarray, grid: Grid, max_rate: float | None = None) -> list[tuple[str, np.ndarray]]:
    """Twenty named controls around the equilibrium control ``q_star``.

    Constants, single-frequency perturbations in space and in time, shifts,
    rescalings and sign flips. Every control is clipped to ``|q| <= max_rate``
    (the upwind stability limit by default).
    """
    if max_rate is None:
        max_rate = 0.5 * grid.dx / grid.dt
    t = grid.t[:, None] / grid.T
    x = grid.x[None, :] / grid.L
    ones = np.ones(grid.shape)
    controls = [
        ("zero", 0.0 * ones),
        ("const 0.25", 0.25 * ones),
        ("const 0.5", 0.5 * ones),
        ("const -0.25", -0.25 * ones),
        ("sin2pi +0.2", q_star + 0.2 * np.sin(2 * np.pi * x)),
        ("sin2pi -0.2", q_star - 0.2 * np.sin(2 * np.pi * x)),
        ("sinpi 0.1", q_star + 0.1 * np.sin(np.pi * x)),
        ("sin3pi 0.1", q_star + 0.1 * np.sin(3 * np.pi * x)),
        ("cos4pi 0.3", q_star + 0.3 * np.cos(4 * np.pi * x)),
        ("cos6pi 0.05", q_star + 0.05 * np.cos(6 * np.pi * x)),
        ("time cos 0.1", q_star + 0.1 * np.cos(np.pi * t)),
        ("time sin 0.2", q_star + 0.2 * np.sin(2 * np.pi * t)),
        ("time decay", q_star + 0.15 * np.exp(-3 * t)),
        ("shift +0.1", q_star + 0.1),
        ("shift -0.1", q_star - 0.1),
        ("scale 0.5", 0.5 * q_star),
        ("scale 1.5", 1.5 * q_star),
        ("flip", -q_star),
        ("half flip", -0.5 * q_star),
        ("mixed", q_star + 0.1 * np.sin(2 * np.pi * x) * np.cos(np.pi * t)),
    ]
    return [(name, np.clip(q, -max_rate, max_rate)) for name, q in controls]


def competitor_corpus(sol, opts: FpOptions | None = None) -> list[tuple[str, ControlPair]]:
    """Feasible competitors for a solved equilibrium, one per :func:`competitor_controls` entry."""
    out = []
    for name, q in competitor_controls(sol.q, sol.grid):
        out.append((name, competitor_from_control(q, sol.m0, sol.params, sol.grid, sol.bc, opts)))
    return out
