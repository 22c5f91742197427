"""Backward solver for the value function of a single producer.

Solves ``u_t + sigma^2/2 u_xx - r u + (f(t) - u_x)^2 / 4 = 0`` with
``u(T) = u_T`` for a given market level ``f``. Time runs backward with a
backward-Euler step; diffusion and discounting are implicit. The Hamiltonian
is discretized with the Godunov flux for the convex function
``H(p) = (f - p)^2 / 4``:

    H_num(p-, p+) = max((f - p-)_+^2, (p+ - f)_+^2) / 4

which is nonincreasing in the backward difference and nondecreasing in the
forward one, so the scheme is monotone (comparison principle, ``u >= 0``,
no growth of the Lipschitz constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import CflViolationError, InvalidParameterError, NewtonDivergenceError
from .geometry import Grid
from .market import Boundary, MarketParams, MarketPath, check_terminal_value

SCHEMES = ("semi-implicit", "fully-implicit-newton")


@dataclass(frozen=True)
class HjbOptions:
    scheme: str = "semi-implicit"
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidParameterError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise InvalidParameterError("Newton tolerance and iteration cap must be positive")


def _as_series(f, grid: Grid) -> np.ndarray:
    values = f.f if isinstance(f, MarketPath) else f
    values = np.broadcast_to(np.asarray(values, dtype=float), (grid.nt + 1,))
    return values


def one_sided_gradients(v: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward differences with reflected ghost nodes at both ends."""
    padded = np.concatenate(([v[1]], v, [v[-2]]))
    diffs = np.diff(padded) / dx
    return diffs[:-1], diffs[1:]


def numerical_hamiltonian(p_minus: np.ndarray, p_plus: np.ndarray, f: float) -> np.ndarray:
    return 0.25 * np.maximum(np.maximum(f - p_minus, 0.0) ** 2, np.maximum(p_plus - f, 0.0) ** 2)


def _operator_bands(n: int, dx: float, dt: float, params: MarketParams, bc: Boundary) -> np.ndarray:
    """Banded form of ``(1 + r dt) I - dt sigma^2/2 D2`` with the boundary closure."""
    k = dt * 0.5 * params.sigma**2 / dx**2
    ab = np.zeros((3, n))
    ab[1] = 1.0 + params.r * dt + 2.0 * k
    ab[0, 1:] = -k
    ab[2, :-1] = -k
    ab[0, 1] = -2.0 * k  # reflected ghost at x = 0
    ab[2, n - 2] = -2.0 * k  # reflected ghost at x = L
    if bc is Boundary.DIRICHLET_LEFT:
        ab[1, 0] = 1.0
        ab[0, 1] = 0.0
    return ab


def _check_cfl(v: np.ndarray, f: float, dx: float, dt: float, free: slice):
    p_minus, p_plus = one_sided_gradients(v, dx)
    speed = max(np.max(np.abs(f - p_minus[free])), np.max(np.abs(f - p_plus[free])))
    if dt * speed > dx * (1.0 + 1e-12):
        raise CflViolationError(
            f"explicit Hamiltonian step needs dt <= dx / max|f - u_x| = {dx / speed:.4g}, got dt = {dt:.4g}"
        )


def _newton_step(
    u_next: np.ndarray, f: float, ab: np.ndarray, dx: float, dt: float, bc: Boundary, opts: HjbOptions
) -> np.ndarray:
    """Solve the fully implicit step ``A v - dt H_num(v) = u_next`` by Newton's method."""
    n = u_next.size
    dirichlet = bc is Boundary.DIRICHLET_LEFT
    rhs = u_next.copy()
    if dirichlet:
        rhs[0] = 0.0
    v = rhs.copy()
    for _ in range(opts.newton_max_iter):
        p_minus, p_plus = one_sided_gradients(v, dx)
        a = np.maximum(f - p_minus, 0.0)
        b = np.maximum(p_plus - f, 0.0)
        use_a = a * a >= b * b
        ham = 0.25 * np.where(use_a, a * a, b * b)
        # derivative of H_num with respect to the backward / forward neighbour
        left = np.where(use_a, 0.5 * a / dx, 0.0)
        right = np.where(use_a, 0.0, 0.5 * b / dx)

        Av = ab[1] * v
        Av[:-1] += ab[0, 1:] * v[1:]
        Av[1:] += ab[2, :-1] * v[:-1]
        residual = Av - dt * ham - rhs
        jac = ab.copy()
        jac[1] += dt * (left + right)
        jac[2, :-1] -= dt * left[1:]
        jac[0, 1:] -= dt * right[:-1]
        jac[0, 1] -= dt * left[0]  # ghost v_{-1} = v_1
        jac[2, n - 2] -= dt * right[-1]  # ghost v_{n} = v_{n-2}
        if dirichlet:
            residual[0] = v[0]
            jac[1, 0], jac[0, 1] = 1.0, 0.0
        delta = solve_banded((1, 1), jac, -residual, check_finite=False)
        v += delta
        if not np.all(np.isfinite(v)):
            break
        if np.max(np.abs(delta)) <= opts.newton_tol * max(1.0, np.max(np.abs(v))):
            return v
    raise NewtonDivergenceError(f"Newton did not converge in {opts.newton_max_iter} iterations")


def solve_hjb(
    f,
    u_T: np.ndarray,
    params: MarketParams,
    grid: Grid,
    bc: Boundary = Boundary.NEUMANN,
    opts: HjbOptions | None = None,
) -> np.ndarray:
    """Value function on the full lattice, shape ``(nt + 1, nx + 1)``.

    Args:
        f: market level ``f(t_k)``, a :class:`MarketPath`, an array of length
            ``nt + 1`` or a scalar.
        u_T: terminal value, nonnegative.
        bc: ``NEUMANN`` uses reflected ghost nodes at both ends;
            ``DIRICHLET_LEFT`` pins ``u(t, 0) = 0`` for ``t < T``.
        opts: ``semi-implicit`` treats the Hamiltonian explicitly and raises
            :class:`CflViolationError` when ``dt > dx / max|f - u_x|``;
            ``fully-implicit-newton`` has no step restriction.
    """
    opts = opts or HjbOptions()
    bc = Boundary.parse(bc)
    u_T = check_terminal_value(u_T, grid)
    f = _as_series(f, grid)
    dx, dt = grid.dx, grid.dt
    ab = _operator_bands(grid.nx + 1, dx, dt, params, bc)
    free = slice(1, None) if bc is Boundary.DIRICHLET_LEFT else slice(None)

    u = np.empty(grid.shape)
    u[-1] = u_T
    for k in range(grid.nt - 1, -1, -1):
        u_next = u[k + 1]
        if opts.scheme == "semi-implicit":
            _check_cfl(u_next, f[k + 1], dx, dt, free)
            rhs = u_next + dt * numerical_hamiltonian(*one_sided_gradients(u_next, dx), f[k + 1])
            if bc is Boundary.DIRICHLET_LEFT:
                rhs[0] = 0.0
            u[k] = solve_banded((1, 1), ab, rhs, check_finite=False)
        else:
            u[k] = _newton_step(u_next, f[k], ab, dx, dt, bc, opts)
        if bc is Boundary.DIRICHLET_LEFT:
            u[k, 0] = 0.0  # the banded solve leaves roundoff on the pinned row
    return u


def hjb_residual(u: np.ndarray, f, params: MarketParams, grid: Grid) -> float:
    """Max interior residual of the HJB equation, forward differences in time."""
    u = grid.check_field(u)
    f = _as_series(f, grid)
    dx = grid.dx
    now, later = u[:-1], u[1:]
    u_t = (later - now) / grid.dt
    u_x = (now[:, 2:] - now[:, :-2]) / (2 * dx)
    u_xx = (now[:, 2:] - 2 * now[:, 1:-1] + now[:, :-2]) / dx**2
    res = (
        u_t[:, 1:-1]
        + 0.5 * params.sigma**2 * u_xx
        - params.r * now[:, 1:-1]
        + 0.25 * (f[:-1, None] - u_x) ** 2
    )
    return float(np.max(np.abs(res)))
