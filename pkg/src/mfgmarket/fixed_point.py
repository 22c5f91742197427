"""Mean-field equilibrium by damped Picard iteration on the market level.

The system couples the value function ``u`` and the density ``m`` only
through the scalar time series ``f(t) = b + c * int u_x m dx``. Each sweep
solves the HJB equation for the current ``f``, then marches the density
forward while recomputing ``f(t_k)`` and the control ``q = G(u_x, m)`` from
the current slice, so the returned ``(m, q)`` satisfy the coupling exactly.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, InvalidParameterError, NoConvergenceError
from .fp import FpOptions, FpStepper, check_initial_density, weak_form_residuals
from .geometry import Grid, derivative, space_time_integral, time_integral, trapezoid
from .hjb import HjbOptions, hjb_residual, solve_hjb
from .market import (
    Boundary,
    MarketParams,
    MarketPath,
    check_terminal_value,
    coupling,
    coupling_G,
    coupling_G_dirichlet,
    market_price,
)

log = logging.getLogger(__name__)

MASS_TOL = 1e-12
U_MIN_TOL = 1e-8
GRAD_SLACK = 0.05
ENERGY_GAP_TOL = 1e-6


@dataclass(frozen=True)
class FixedPointOptions:
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    initial_f: np.ndarray | float | None = None  # None starts from f = b
    hjb: HjbOptions = field(default_factory=HjbOptions)
    fp: FpOptions = field(default_factory=FpOptions)

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise InvalidParameterError(f"damping must lie in (0, 1], got {self.damping}")
        if self.tol <= 0 or self.max_iter < 1:
            raise InvalidParameterError("tol and max_iter must be positive")


@dataclass
class SolveReport:
    iterations: int
    residual_history: list[float]
    converged: bool
    invariant_flags: dict[str, bool] = field(default_factory=dict)
    measurements: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class MfgSolution:
    u: np.ndarray
    m: np.ndarray
    q: np.ndarray
    path: MarketPath
    report: SolveReport
    params: MarketParams
    grid: Grid
    bc: Boundary
    m0: np.ndarray
    u_T: np.ndarray


def forward_coupled(u: np.ndarray, m0: np.ndarray, params: MarketParams, grid: Grid, bc: Boundary, opts: FpOptions):
    """March the density with the control recomputed from each slice.

    Returns ``(m, q, f)`` where ``q[k] = G(u_x[k], m[k])`` and ``f[k]`` is the
    nonlocal level of that slice.
    """
    stepper = FpStepper(params, grid, bc, opts)
    u_x = derivative(u, grid)
    m = np.empty(grid.shape)
    q = np.empty(grid.shape)
    f = np.empty(grid.nt + 1)
    m[0] = m0
    for k in range(grid.nt + 1):
        q[k], f[k] = coupling(u_x[k], m[k], params, grid, bc)
        if k < grid.nt:
            m[k + 1] = stepper.step(m[k], q[k])
    return m, q, f


def _gradient_bound(u_T: np.ndarray, params: MarketParams, grid: Grid) -> float:
    return float(np.exp(params.r * params.T) * np.max(np.abs(derivative(u_T, grid))))


def measure_invariants(sol: MfgSolution, previous: MfgSolution | None = None) -> tuple[dict, dict]:
    """Measured values and pass/fail flags for the invariants of one solve."""
    grid, params = sol.grid, sol.params
    mass = trapezoid(sol.m, grid)
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}
    if sol.bc is Boundary.NEUMANN:
        values["mass_error_max"] = float(np.max(np.abs(mass - 1.0)))
        flags["mass-conserved"] = values["mass_error_max"] <= MASS_TOL
    else:
        values["mass_increase_max"] = float(np.max(np.diff(mass), initial=0.0))
        flags["mass-nonincreasing"] = values["mass_increase_max"] <= MASS_TOL
    values["u_min"] = float(sol.u.min())
    flags["u-nonnegative"] = values["u_min"] >= -U_MIN_TOL
    grad_max = float(np.max(np.abs(derivative(sol.u, grid))))
    values["grad_max"] = grad_max
    if sol.bc is Boundary.NEUMANN:
        bound = _gradient_bound(sol.u_T, params, grid)
        if bound > 0:
            values["grad_bound_ratio"] = grad_max / bound
        else:
            values["grad_bound_ratio"] = 0.0 if grad_max <= 1e-10 else float("inf")
        flags["gradient-bound"] = values["grad_bound_ratio"] <= 1.0 + GRAD_SLACK
    if previous is not None:
        gap = energy_gap(sol, previous, params, grid)
        values["energy_gap_term1"], values["energy_gap_term2"] = gap
        flags["energy-gap-zero"] = max(gap) <= ENERGY_GAP_TOL
    return values, flags


def solve_mfg(
    params: MarketParams,
    m0: np.ndarray,
    u_T: np.ndarray,
    grid: Grid,
    bc: Boundary = Boundary.NEUMANN,
    opts: FixedPointOptions | None = None,
) -> MfgSolution:
    """Equilibrium ``(u, m, q, f)`` of the coupled system.

    Raises :class:`NoConvergenceError` (with the last iterate attached as
    ``.solution``) when the sup-norm change of ``f`` stays above ``opts.tol``
    after ``opts.max_iter`` sweeps.
    """
    opts = opts or FixedPointOptions()
    bc = Boundary.parse(bc)
    if not (np.isclose(grid.L, params.L) and np.isclose(grid.T, params.T)):
        raise GridMismatchError(f"grid covers [0,{grid.T}]x[0,{grid.L}], params say T={params.T}, L={params.L}")
    m0 = check_initial_density(m0, grid, bc)
    u_T = check_terminal_value(u_T, grid)
    start = time.perf_counter()

    if opts.initial_f is None:
        f = np.full(grid.nt + 1, params.b)
    else:
        f = np.array(np.broadcast_to(np.asarray(opts.initial_f, dtype=float), (grid.nt + 1,)))

    history: list[float] = []
    converged = False
    previous = None
    for it in range(1, opts.max_iter + 1):
        u = solve_hjb(f, u_T, params, grid, bc, opts.hjb)
        m, q, f_new = forward_coupled(u, m0, params, grid, bc, opts.fp)
        residual = float(np.max(np.abs(f_new - f)))
        history.append(residual)
        log.debug("picard iteration %d: residual %.3e", it, residual)
        previous = (u, m, q, f_new)
        if residual <= opts.tol:
            converged = True
            break
        f = opts.damping * f_new + (1.0 - opts.damping) * f

    f_final = previous[3]
    u = solve_hjb(f_final, u_T, params, grid, bc, opts.hjb)
    m, q, f_path = forward_coupled(u, m0, params, grid, bc, opts.fp)
    p_bar = market_price(derivative(u, grid), m, params, grid)
    report = SolveReport(iterations=len(history), residual_history=history, converged=converged)
    sol = MfgSolution(u, m, q, MarketPath(f_path, np.asarray(p_bar)), report, params, grid, bc, m0, u_T)
    prev_sol = dataclasses.replace(sol, u=previous[0], m=previous[1], q=previous[2])
    report.measurements, report.invariant_flags = measure_invariants(sol, prev_sol)
    report.wall_time = time.perf_counter() - start
    if not converged:
        raise NoConvergenceError(
            f"Picard iteration did not reach tol={opts.tol:g} in {opts.max_iter} sweeps "
            f"(last residual {history[-1]:.3e})",
            solution=sol,
        )
    return sol


def _check_pair(sol1: MfgSolution, sol2: MfgSolution, grid: Grid):
    for sol in (sol1, sol2):
        if sol.u.shape != grid.shape or sol.m.shape != grid.shape:
            raise GridMismatchError(f"solution of shape {sol.u.shape} does not live on grid {grid.shape}")


def energy_gap(sol1: MfgSolution, sol2: MfgSolution, params: MarketParams, grid: Grid) -> tuple[float, float]:
    """The two nonnegative terms of the uniqueness energy identity.

    ``term1 = int int e^{-rt} (G1 - G2)^2 (m1 + m2)`` and
    ``term2 = 2c/(1-c) int e^{-rt} (Gbar1 - Gbar2)^2`` with ``Gbar = int G m``.
    Both vanish when the two solutions coincide.
    """
    _check_pair(sol1, sol2, grid)
    G1, _ = coupling_G(derivative(sol1.u, grid), sol1.m, params, grid, check_mass=False)
    G2, _ = coupling_G(derivative(sol2.u, grid), sol2.m, params, grid, check_mass=False)
    return _gap_terms(G1, G2, sol1.m, sol2.m, 2 * params.c / (1 - params.c), params.r, grid)


def energy_gap_dirichlet(sol1: MfgSolution, sol2: MfgSolution, params: MarketParams, grid: Grid) -> tuple[float, float]:
    """Energy identity terms for the absorbing model (second weight is ``eps``)."""
    _check_pair(sol1, sol2, grid)
    G1, _ = coupling_G_dirichlet(derivative(sol1.u, grid), sol1.m, params.epsilon, grid)
    G2, _ = coupling_G_dirichlet(derivative(sol2.u, grid), sol2.m, params.epsilon, grid)
    return _gap_terms(G1, G2, sol1.m, sol2.m, params.epsilon, params.r, grid)


def _gap_terms(G1, G2, m1, m2, weight, r, grid):
    term1 = space_time_integral((G1 - G2) ** 2 * (m1 + m2), grid, discount=r)
    gbar = trapezoid(G1 * m1, grid) - trapezoid(G2 * m2, grid)
    term2 = weight * time_integral(gbar**2, grid, discount=r)
    return float(term1), float(term2)


def system_residuals(sol: MfgSolution, params: MarketParams, grid: Grid) -> tuple[float, float]:
    """``(HJB residual, max Fokker-Planck weak-form residual over the test battery)``."""
    hjb = hjb_residual(sol.u, sol.path.f, params, grid)
    weak = weak_form_residuals(sol.m, sol.q, sol.m0, params.sigma, grid)
    return hjb, float(np.max(np.abs(weak)))
