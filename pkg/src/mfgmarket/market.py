"""Linear-demand market: parameters, best responses, clearing price, coupling.

Producers hold a capacity ``x`` in ``[0, L]``, sell at rate ``q`` and face
the demand schedule ``q = 1/(1+eps) - p + eps/(1+eps) * p_bar``. Solving the
pointwise profit maximization and the market-clearing condition turns the
market price into an integral of ``u_x m`` and gives the coupling

    G(u_x, m) = (b + c * int u_x m dx - u_x) / 2,   b = 2/(2+eps), c = eps/(2+eps).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDataError, InvalidParameterError
from .geometry import Grid, trapezoid

COUPLING_MASS_TOL = 1e-6


class Boundary(enum.Enum):
    """Boundary treatment at ``x = 0``.

    ``NEUMANN``: reflection at both ends, producers never leave and ``m``
    stays a probability density. ``DIRICHLET_LEFT``: exhausted producers exit
    at ``x = 0`` (``u = m = 0`` there), reflection at ``x = L``.
    """

    NEUMANN = "neumann"
    DIRICHLET_LEFT = "dirichlet-left"

    @classmethod
    def parse(cls, value) -> Boundary:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise InvalidParameterError(f"unknown boundary variant {value!r}") from None


@dataclass(frozen=True)
class MarketParams:
    epsilon: float
    r: float
    sigma: float
    T: float
    L: float

    @property
    def b(self) -> float:
        return 2.0 / (2.0 + self.epsilon)

    @property
    def c(self) -> float:
        return self.epsilon / (2.0 + self.epsilon)

    @property
    def b_bar(self) -> float:
        # b / (1 - c) simplifies to exactly 1
        return 1.0

    @property
    def c_bar(self) -> float:
        return self.epsilon / 2.0

    def with_sigma(self, sigma: float) -> MarketParams:
        return derive_params(self.epsilon, self.r, sigma, self.T, self.L)


@dataclass(frozen=True)
class MarketPath:
    """Time series of the nonlocal level ``f(t_k)`` and market price ``p_bar(t_k)``."""

    f: np.ndarray
    p_bar: np.ndarray


def derive_params(epsilon: float, r: float, sigma: float, T: float = 1.0, L: float = 1.0) -> MarketParams:
    """Validate the economic constants and build :class:`MarketParams`."""
    values = dict(epsilon=epsilon, r=r, sigma=sigma, T=T, L=L)
    if not all(np.isfinite(v) for v in values.values()):
        raise InvalidParameterError(f"non-finite parameter in {values}")
    if epsilon < 0:
        raise InvalidParameterError(f"epsilon must be >= 0, got {epsilon}")
    if r < 0:
        raise InvalidParameterError(f"r must be >= 0, got {r}")
    if not 0 <= sigma <= 1:
        raise InvalidParameterError(f"sigma must lie in [0, 1], got {sigma}")
    if T <= 0 or L <= 0:
        raise InvalidParameterError(f"T and L must be positive, got T={T}, L={L}")
    return MarketParams(float(epsilon), float(r), float(sigma), float(T), float(L))


def demand(p, p_bar, epsilon):
    return 1.0 / (1.0 + epsilon) - p + epsilon / (1.0 + epsilon) * p_bar


def equilibrium_price(u_x, p_bar, epsilon):
    """Profit-maximizing price given the marginal value of capacity ``u_x``."""
    return 0.5 * (1.0 / (1.0 + epsilon) + epsilon / (1.0 + epsilon) * p_bar + u_x)


def equilibrium_demand(u_x, p_bar, epsilon):
    return 0.5 * (1.0 / (1.0 + epsilon) + epsilon / (1.0 + epsilon) * p_bar - u_x)


def market_price(u_x: np.ndarray, m: np.ndarray, params: MarketParams, grid: Grid):
    """Market-clearing average price for one slice (or row-wise for a field)."""
    eps = params.epsilon
    return 1.0 / (2.0 + eps) + (1.0 + eps) / (2.0 + eps) * trapezoid(u_x * m, grid)


def market_level(u_x: np.ndarray, m: np.ndarray, params: MarketParams, grid: Grid):
    """The nonlocal term ``f = b + c * int u_x m dx``."""
    return params.b + params.c * trapezoid(u_x * m, grid)


def coupling_G(u_x: np.ndarray, m: np.ndarray, params: MarketParams, grid: Grid, check_mass: bool = True):
    """Coupling ``G`` for the reflecting model; returns ``(G, f)``.

    Works on a single slice (``f`` is a float) or row-wise on a field.
    """
    if check_mass:
        mass = trapezoid(m, grid)
        if np.any(np.abs(np.asarray(mass) - 1.0) > COUPLING_MASS_TOL):
            raise InvalidDataError(f"coupling needs unit mass, got {mass}")
    f = market_level(u_x, m, params, grid)
    return 0.5 * (np.expand_dims(f, -1) - u_x), f


def dirichlet_level(u_x: np.ndarray, m: np.ndarray, epsilon: float, grid: Grid):
    """Nonlocal term of the absorbing model, where the active mass ``eta`` may be < 1."""
    eta = trapezoid(m, grid)
    return (2.0 + epsilon * trapezoid(u_x * m, grid)) / (2.0 + epsilon * eta)


def coupling_G_dirichlet(u_x: np.ndarray, m: np.ndarray, epsilon: float, grid: Grid):
    """Coupling for the absorbing-boundary model; returns ``(G, f)``."""
    f = dirichlet_level(u_x, m, epsilon, grid)
    return 0.5 * (np.expand_dims(f, -1) - u_x), f


def coupling(u_x, m, params: MarketParams, grid: Grid, bc: Boundary):
    if bc is Boundary.NEUMANN:
        return coupling_G(u_x, m, params, grid)
    return coupling_G_dirichlet(u_x, m, params.epsilon, grid)


def check_terminal_value(u_T: np.ndarray, grid: Grid) -> np.ndarray:
    u_T = grid.check_slice(u_T)
    if u_T.ndim != 1 or not np.all(np.isfinite(u_T)):
        raise InvalidDataError("terminal value must be a finite 1-d slice")
    if u_T.min() < 0:
        raise InvalidDataError(f"terminal value must be nonnegative, min is {u_T.min():.3e}")
    return u_T
