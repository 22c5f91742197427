"""Forward conservative solver for the producer density.

Solves ``m_t - sigma^2/2 m_xx - (q m)_x = 0`` as a finite-volume scheme on the
nodes: node ``i`` owns a cell of width ``dx`` (``dx / 2`` at the ends), so the
discrete mass is exactly the trapezoid integral. A producer at node ``i``
sells at rate ``q_i`` and therefore drifts left when ``q_i > 0``; the drift
flux is donor-cell (upwind) and explicit, the diffusion implicit. Interface
fluxes at ``x = 0`` and ``x = L`` are zero, so mass telescopes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import CflViolationError, InvalidDataError, InvalidParameterError, NegativeDensityError
from .geometry import Grid, trapezoid
from .market import Boundary, MarketParams

INITIAL_MASS_TOL = 1e-10
FLUX_FORMS = ("upwind",)


@dataclass(frozen=True)
class FpOptions:
    positivity_clip: bool = False
    flux_form: str = "upwind"

    def __post_init__(self):
        if self.flux_form not in FLUX_FORMS:
            raise InvalidParameterError(f"flux_form must be one of {FLUX_FORMS}, got {self.flux_form!r}")


def drift_flux(m: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rightward advective mass flux through the ``nx`` interior interfaces.

    Mass leaves node ``i`` to the right at rate ``max(-q_i, 0)`` and leaves
    node ``i + 1`` to the left at rate ``max(q_{i+1}, 0)``.
    """
    return np.maximum(-q[:-1], 0.0) * m[:-1] - np.maximum(q[1:], 0.0) * m[1:]


def fp_flux(m: np.ndarray, q: np.ndarray, params: MarketParams, grid: Grid) -> np.ndarray:
    """Discrete ``sigma^2/2 m_x + q m`` on the ``nx + 2`` cell faces.

    Entry 0 is the face at ``x = 0``, entry ``nx + 1`` the face at ``x = L``;
    both are zero by construction. Entry ``j`` is the face between nodes
    ``j - 1`` and ``j``.
    """
    m, q = grid.check_slice(m), grid.check_slice(q)
    out = np.zeros(grid.nx + 2)
    out[1:-1] = 0.5 * params.sigma**2 * np.diff(m) / grid.dx - drift_flux(m, q)
    return out


class FpStepper:
    """One forward time step, with the implicit diffusion matrix assembled once."""

    def __init__(self, params: MarketParams, grid: Grid, bc: Boundary = Boundary.NEUMANN, opts: FpOptions | None = None):
        self.grid = grid
        self.bc = Boundary.parse(bc)
        self.opts = opts or FpOptions()
        self.sigma = params.sigma
        n, dx, dt = grid.nx + 1, grid.dx, grid.dt
        k = dt * 0.5 * params.sigma**2 / dx
        ab = np.zeros((3, n))
        ab[1] = grid.weights + 2.0 * k
        ab[1, 0] -= k
        ab[1, -1] -= k
        ab[0, 1:] = -k
        ab[2, :-1] = -k
        if self.bc is Boundary.DIRICHLET_LEFT:
            # node 0 is the absorbing exit: m = 0 there
            ab[1, 0] = 1.0
            ab[0, 1] = 0.0
        self._bands = ab
        self._k = k
        self._diagonal_only = params.sigma == 0.0 and self.bc is Boundary.NEUMANN
        # cells at the ends are half as wide, so outflow there is capped at dx / (2 dt)
        self.max_rate = 0.5 * dx / dt

    def check_cfl(self, q: np.ndarray):
        rate = np.max(np.abs(q))
        if rate > self.max_rate * (1.0 + 1e-12):
            raise CflViolationError(
                f"upwind drift needs dt <= dx / max|2 q| = {self.grid.dx / (2 * rate):.4g}, got dt = {self.grid.dt:.4g}"
            )

    def step(self, m: np.ndarray, q: np.ndarray) -> np.ndarray:
        self.check_cfl(q)
        # solve for the increment: roundoff then scales with the update, not with m
        face = -self.grid.dt * drift_flux(m, q) + self._k * np.diff(m)
        rhs = np.zeros_like(m)
        rhs[:-1] += face
        rhs[1:] -= face
        if self.bc is Boundary.DIRICHLET_LEFT:
            rhs[0] = -m[0]
        if self._diagonal_only:
            delta = rhs / self._bands[1]
        else:
            delta = solve_banded((1, 1), self._bands, rhs, check_finite=False)
        new = m + delta
        if self.bc is Boundary.DIRICHLET_LEFT:
            new[0] = 0.0
        if self.opts.positivity_clip:
            np.maximum(new, 0.0, out=new)
        return new


def check_initial_density(m0: np.ndarray, grid: Grid, bc: Boundary = Boundary.NEUMANN) -> np.ndarray:
    m0 = grid.check_slice(m0)
    if m0.ndim != 1 or not np.all(np.isfinite(m0)):
        raise InvalidDataError("initial density must be a finite 1-d slice")
    if m0.min() < 0:
        raise NegativeDensityError(f"initial density has entries down to {m0.min():.3e}")
    mass = trapezoid(m0, grid)
    if Boundary.parse(bc) is Boundary.NEUMANN and abs(mass - 1.0) > INITIAL_MASS_TOL:
        raise InvalidDataError(f"initial density must have unit mass, got {mass!r}")
    return m0


def solve_fp(
    q: np.ndarray,
    m0: np.ndarray,
    params: MarketParams,
    grid: Grid,
    bc: Boundary = Boundary.NEUMANN,
    opts: FpOptions | None = None,
) -> np.ndarray:
    """Density on the full lattice for a given control field ``q``.

    The step from ``t_k`` to ``t_{k+1}`` uses the control row ``q[k]``.
    """
    q = grid.check_field(q)
    m0 = check_initial_density(m0, grid, bc)
    stepper = FpStepper(params, grid, bc, opts)
    m = np.empty(grid.shape)
    m[0] = m0
    for k in range(grid.nt):
        m[k + 1] = stepper.step(m[k], q[k])
    return m


def weak_form_residuals(m: np.ndarray, q: np.ndarray, m0: np.ndarray, sigma: float, grid: Grid) -> np.ndarray:
    """Distributional residual of the Fokker-Planck equation per test function.

    For each ``phi`` in :func:`geometry.smooth_test_functions` returns
    ``int int (-phi_t - sigma^2/2 phi_xx + q phi_x) m - int phi(0) m0``.
    """
    from .geometry import smooth_test_functions, space_time_integral

    out = []
    for phi, phi_t, phi_x, phi_xx in smooth_test_functions(grid):
        integrand = (-phi_t - 0.5 * sigma**2 * phi_xx + q * phi_x) * m
        out.append(space_time_integral(integrand, grid) - trapezoid(phi[0] * m0, grid))
    return np.array(out)


def uniform_integrability_check(m: np.ndarray, m0: np.ndarray, K: float, grid: Grid) -> bool:
    """Compare the mass sitting above ``2K`` with twice the excess of ``m0`` over ``K``."""
    if K < 0:
        raise InvalidParameterError(f"K must be >= 0, got {K}")
    m = grid.check_field(m)
    upper = trapezoid(np.where(m >= 2 * K, m, 0.0), grid)
    bound = 2.0 * trapezoid(np.maximum(m0 - K, 0.0), grid)
    return bool(np.all(upper <= bound + 1e-8))
