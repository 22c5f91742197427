"""Vanishing-viscosity driver and sigma-uniform compactness diagnostics.

The first-order (``sigma = 0``) system is reached by solving along a
decreasing sequence of diffusion levels with the same schemes. The quantities
below are the ones whose boundedness uniformly in ``sigma`` makes the limit
possible; each is a plain post-processing of lattice fields.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InvalidParameterError, NoConvergenceError
from .fixed_point import FixedPointOptions, MfgSolution, solve_mfg
from .geometry import Grid, derivative, smooth_test_functions, space_time_integral, trapezoid, wasserstein1
from .market import Boundary, MarketParams, MarketPath

log = logging.getLogger(__name__)

DEFAULT_PAIRS = 1000
DEFAULT_LAGS = (1, 2, 4, 8)


@dataclass
class SweepResult:
    sigmas: np.ndarray
    solutions: list[MfgSolution]
    converged: list[bool]
    d1_consecutive: np.ndarray
    f_sup_diffs: np.ndarray
    holder_constants: np.ndarray  # d1 Hoelder quotient per entry
    holder_u: np.ndarray
    energy_norms: dict[str, np.ndarray] = field(default_factory=dict)
    d1_to_last: np.ndarray | None = None
    f_sup_to_last: np.ndarray | None = None
    momentum_to_last: np.ndarray | None = None

    @property
    def iterations(self) -> list[int]:
        return [s.report.iterations for s in self.solutions]


def check_sigmas(sigmas) -> np.ndarray:
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim != 1 or sigmas.size == 0:
        raise InvalidParameterError("need at least one sigma")
    if np.any(sigmas < 0) or np.any(sigmas > 1):
        raise InvalidParameterError(f"sigmas must lie in [0, 1], got {sigmas}")
    if np.any(np.diff(sigmas) >= 0):
        raise InvalidParameterError(f"sigmas must be strictly decreasing, got {sigmas}")
    return sigmas


def _solve_one(args):
    params, m0, u_T, grid, bc, opts = args
    try:
        return solve_mfg(params, m0, u_T, grid, bc, opts), True
    except NoConvergenceError as err:
        log.warning("sigma=%g: %s", params.sigma, err)
        return err.solution, False


def sigma_sweep(
    params_base: MarketParams,
    sigmas,
    m0: np.ndarray,
    u_T: np.ndarray,
    grid: Grid,
    opts: FixedPointOptions | None = None,
    bc: Boundary = Boundary.NEUMANN,
    workers: int = 1,
    seed: int = 0,
) -> SweepResult:
    """Solve at every ``sigma`` and collect the compactness diagnostics.

    Entries that fail to converge keep their last Picard iterate and are
    flagged in ``converged``; the sweep carries on. With ``workers > 1`` the
    solves run in separate processes.
    """
    sigmas = check_sigmas(sigmas)
    jobs = [(params_base.with_sigma(s), m0, u_T, grid, bc, opts) for s in sigmas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_one, jobs))
    else:
        results = [_solve_one(job) for job in jobs]
    sols = [r[0] for r in results]
    converged = [r[1] for r in results]

    neumann = Boundary.parse(bc) is Boundary.NEUMANN
    d1_next = np.array([max_d1(a.m, b.m, grid) for a, b in zip(sols, sols[1:])]) if neumann else np.array([])
    f_next = np.array([f_sup_diff(a.path, b.path) for a, b in zip(sols, sols[1:])])
    last = sols[-1]
    out = SweepResult(
        sigmas=sigmas,
        solutions=sols,
        converged=converged,
        d1_consecutive=d1_next,
        f_sup_diffs=f_next,
        holder_constants=np.array([holder_d1_quotient(s.m, grid, seed=seed) for s in sols]) if neumann else np.array([]),
        holder_u=np.array([holder_time_quotient_u(s.u, grid, seed=seed) for s in sols]),
        energy_norms={
            "ut_l2": np.array([ut_l2_norm(s.u, grid) for s in sols]),
            "sigma2_uxx_l2": np.array([sigma2_uxx_l2(s.u, s.params, grid) for s in sols]),
            "fisher_like": np.array([fisher_like_norm(s.m, s.params, grid) for s in sols]),
        },
        f_sup_to_last=np.array([f_sup_diff(s.path, last.path) for s in sols]),
        momentum_to_last=np.array([momentum_weak_distance(s, last) for s in sols]),
    )
    if neumann:
        out.d1_to_last = np.array([max_d1(s.m, last.m, grid) for s in sols])
    return out


def max_d1(m1: np.ndarray, m2: np.ndarray, grid: Grid) -> float:
    """``max_k d1(m1(t_k), m2(t_k))``."""
    return float(np.max(wasserstein1(m1, m2, grid)))


def f_sup_diff(path1: MarketPath, path2: MarketPath) -> float:
    return float(np.max(np.abs(np.asarray(path1.f) - np.asarray(path2.f))))


def momentum_weak_distance(sol1: MfgSolution, sol2: MfgSolution) -> float:
    """Largest gap between ``m u_x`` of two solutions tested against the smooth battery."""
    grid = sol1.grid
    diff = sol1.m * derivative(sol1.u, grid) - sol2.m * derivative(sol2.u, grid)
    return max(abs(space_time_integral(phi * diff, grid)) for phi, *_ in smooth_test_functions(grid))


def ut_l2_norm(u: np.ndarray, grid: Grid) -> float:
    """Discrete L2 norm over the space-time domain of forward time differences."""
    u = grid.check_field(u)
    u_t = np.diff(u, axis=0) / grid.dt
    return math.sqrt(space_time_integral(u_t**2, grid))


def second_difference(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``u_xx`` by the three-point stencil with reflected ghost nodes."""
    u = grid.check_slice(u)
    padded = np.concatenate([u[..., 1:2], u, u[..., -2:-1]], axis=-1)
    return (padded[..., 2:] - 2.0 * u + padded[..., :-2]) / grid.dx**2


def sigma2_uxx_l2(u: np.ndarray, params: MarketParams, grid: Grid) -> float:
    u = grid.check_field(u)
    return params.sigma**2 * math.sqrt(space_time_integral(second_difference(u, grid) ** 2, grid))


def time_pairs(nt: int, n_pairs: int = DEFAULT_PAIRS, seed: int = 0) -> np.ndarray:
    """Index pairs ``i < j`` of time levels used by the Hoelder quotients.

    All pairs when there are at most ``n_pairs`` of them, otherwise a seeded
    random sample that always contains the extreme pair ``(0, nt)``.
    """
    total = nt * (nt + 1) // 2
    if total <= n_pairs:
        return np.array(list(combinations(range(nt + 1), 2)))
    rng = np.random.default_rng(seed)
    i = rng.integers(0, nt + 1, size=2 * n_pairs)
    j = rng.integers(0, nt + 1, size=2 * n_pairs)
    keep = i != j
    pairs = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)[keep]
    pairs = np.unique(pairs, axis=0)
    pairs = pairs[rng.permutation(len(pairs))[: n_pairs - 1]]
    return np.vstack([[0, nt], pairs])


def holder_time_quotient_u(u: np.ndarray, grid: Grid, n_pairs: int = DEFAULT_PAIRS, seed: int = 0) -> float:
    """``max |u(t1, x) - u(t2, x)| / |t1 - t2|^(1/3)`` over sampled time pairs and all nodes."""
    u = grid.check_field(u)
    pairs = time_pairs(grid.nt, n_pairs, seed)
    gaps = np.max(np.abs(u[pairs[:, 0]] - u[pairs[:, 1]]), axis=1)
    lags = (pairs[:, 1] - pairs[:, 0]) * grid.dt
    return float(np.max(gaps / lags ** (1.0 / 3.0)))


def holder_d1_quotient(m: np.ndarray, grid: Grid, n_pairs: int = DEFAULT_PAIRS, seed: int = 0) -> float:
    """``max d1(m(t1), m(t2)) / |t1 - t2|^(1/2)`` over sampled time pairs."""
    m = grid.check_field(m)
    pairs = time_pairs(grid.nt, n_pairs, seed)
    dist = wasserstein1(m[pairs[:, 0]], m[pairs[:, 1]], grid)
    lags = (pairs[:, 1] - pairs[:, 0]) * grid.dt
    return float(np.max(dist / np.sqrt(lags)))


def f_equicontinuity_modulus(path, grid: Grid, lags=DEFAULT_LAGS) -> np.ndarray:
    """Modulus of continuity ``omega(l)`` of the market level for lags of ``l`` steps.

    ``omega(l)`` is the largest change of ``f`` over any lag up to ``l`` steps,
    which makes the returned vector nondecreasing by construction.
    """
    f = np.asarray(path.f if isinstance(path, MarketPath) else path, dtype=float)
    if f.shape != (grid.nt + 1,):
        raise InvalidParameterError(f"path must have {grid.nt + 1} entries, got {f.shape}")
    per_lag = [0.0] + [float(np.max(np.abs(f[lag:] - f[:-lag]))) for lag in range(1, grid.nt + 1)]
    running = np.maximum.accumulate(per_lag)
    return np.array([running[min(lag, grid.nt)] for lag in lags])


def fisher_like_norm(m: np.ndarray, params: MarketParams, grid: Grid) -> float:
    """``sigma^2 (int int m_x^2 / (m + 1))^(1/2)`` with centered ``m_x``."""
    m = grid.check_field(m)
    if params.sigma == 0:
        return 0.0
    m_x = derivative(m, grid)
    return params.sigma**2 * math.sqrt(space_time_integral(m_x**2 / (m + 1.0), grid))


def viscosity_subsolution_check(u: np.ndarray, path, params: MarketParams, grid: Grid, test_functions=None) -> float:
    """Largest weak-form value of ``u_t - r u + (f - u_x)^2 / 4`` over nonnegative test functions.

    For each ``phi`` (with time derivative ``phi_t``) evaluates

        int e^{-rT} u_T phi(T) - int u(0) phi(0) - int int e^{-rt} u phi_t
            + 1/4 int int e^{-rt} (f - u_x)^2 phi

    which is the pairing of ``e^{-rt} (u_t - r u + H)`` with ``phi`` after
    integrating by parts in time. A subsolution gives values ``<= 0`` up to
    discretization error. ``test_functions`` yields ``(phi, phi_t, ...)``
    tuples and defaults to :func:`geometry.smooth_test_functions`.
    """
    u = grid.check_field(u)
    f = np.asarray(path.f if isinstance(path, MarketPath) else path, dtype=float)
    f = np.broadcast_to(f, (grid.nt + 1,))
    if test_functions is None:
        test_functions = smooth_test_functions(grid)
    ham = 0.25 * (f[:, None] - derivative(u, grid)) ** 2
    decay = math.exp(-params.r * grid.T)
    values = []
    for phi, phi_t, *_ in test_functions:
        ends = decay * trapezoid(u[-1] * phi[-1], grid) - trapezoid(u[0] * phi[0], grid)
        values.append(ends + space_time_integral(ham * phi - u * phi_t, grid, discount=params.r))
    return max(values, default=0.0)
