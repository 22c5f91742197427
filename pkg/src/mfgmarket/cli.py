"""Command-line front end: ``mfgmarket solve|sweep|validate <config.json>``.

A config file is one JSON object describing one scenario::

    {
      "params": {"epsilon": 1.0, "r": 0.5, "sigma": 0.5, "T": 1.0, "L": 1.0},
      "grid": {"nx": 200, "nt": 400},
      "bc": "neumann",
      "m0": {"kind": "bump", "center": 0.5, "width": 0.2},
      "uT": {"kind": "ramp", "slope": 0.25},
      "solver": {"damping": 0.5, "tol": 1e-8, "max_iter": 200, "hjb_scheme": "semi-implicit"},
      "output": "runs/example"
    }

A relative ``output`` directory is resolved against ``$MFGMARKET_OUTPUT_ROOT``
when that variable is set, otherwise against the working directory.

Exit codes: 0 success, 2 bad config or rejected data, 3 no convergence,
4 an invariant check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenarios
from .errors import CflViolationError, GridTooSmallError, MfgError, NewtonDivergenceError, NoConvergenceError
from .fixed_point import FixedPointOptions, MfgSolution, energy_gap, energy_gap_dirichlet, solve_mfg
from .geometry import Grid
from .hjb import HjbOptions
from .market import Boundary, MarketParams, derive_params
from .variational import competitor_corpus, equilibrium_pair, evaluate_J, first_order_residual, optimality_gap
from .viscosity import check_sigmas, f_equicontinuity_modulus, sigma_sweep, viscosity_subsolution_check

log = logging.getLogger("mfgmarket")

OUTPUT_ROOT_ENV = "MFGMARKET_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_INVARIANT = 0, 2, 3, 4
FLOAT_FMT = "%.17g"

OPTIMALITY_SLACK = 3.0  # times (dx + dt)
FIRST_ORDER_TOL = 1e-6
FIRST_ORDER_TOL_INVISCID = 1e-4
SUBSOLUTION_TOL = 1e-3


class ConfigError(MfgError, ValueError):
    pass


@dataclass
class Scenario:
    params: MarketParams
    grid: Grid
    bc: Boundary
    m0: np.ndarray
    u_T: np.ndarray
    uT_spec: dict
    opts: FixedPointOptions
    output: Path


def _section(raw: dict, key: str, default=None) -> dict:
    value = raw.get(key, default)
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    return value


def load_config(path: str | Path) -> Scenario:
    """Parse and validate a scenario file; every problem surfaces as an :class:`MfgError`."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        p = _section(raw, "params")
        params = derive_params(
            float(p["epsilon"]), float(p["r"]), float(p["sigma"]), float(p.get("T", 1.0)), float(p.get("L", 1.0))
        )
        g = _section(raw, "grid")
        nx, nt = g["nx"], g["nt"]
        if not (isinstance(nx, int) and isinstance(nt, int)):
            raise ConfigError("grid.nx and grid.nt must be integers")
        grid = Grid(nx, nt, params.L, params.T)
        if grid.nx < 2:
            raise GridTooSmallError(f"nx = {grid.nx} leaves no interior node; need nx >= 2")
        bc = Boundary.parse(raw.get("bc", "neumann"))
        m0 = scenarios.initial_density(_section(raw, "m0", {"kind": "bump"}), grid)
        uT_spec = _section(raw, "uT", {"kind": "constant"})
        u_T = scenarios.terminal_value(uT_spec, grid)
        s = _section(raw, "solver", {})
        opts = FixedPointOptions(
            damping=float(s.get("damping", 0.5)),
            tol=float(s.get("tol", 1e-8)),
            max_iter=int(s.get("max_iter", 200)),
            initial_f=s.get("initial_f"),
            hjb=HjbOptions(scheme=s.get("hjb_scheme", "semi-implicit")),
        )
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, MfgError):
            raise
        raise ConfigError(f"malformed config {path}: {err!r}") from None
    return Scenario(params, grid, bc, m0, u_T, uT_spec, opts, Path(raw.get("output", "output")))


def resolve_output(path: Path, override: str | None = None) -> Path:
    if override:
        path = Path(override)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_lattice(path: Path, field: np.ndarray, grid: Grid):
    """Rows are time slices, first column is ``t``, header lists the space nodes."""
    header = ",".join(["t"] + [FLOAT_FMT % x for x in grid.x])
    np.savetxt(path, np.column_stack([grid.t, field]), fmt=FLOAT_FMT, delimiter=",", header=header, comments="")


def write_path(path: Path, sol: MfgSolution):
    data = np.column_stack([sol.grid.t, sol.path.f, sol.path.p_bar])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header="t,f,p_bar", comments="")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")


def ode_oracle(scn: Scenario) -> np.ndarray | None:
    """Closed-form value for constant terminal data with reflection, ``None`` otherwise.

    With ``u_T`` constant, ``u_x`` vanishes, the market level is ``b`` and
    the HJB equation reduces to ``u' = r u - b^2 / 4``.
    """
    if scn.bc is not Boundary.NEUMANN or scn.uT_spec.get("kind", "constant") != "constant":
        return None
    p, tau = scn.params, scn.grid.T - scn.grid.t
    k = float(scn.u_T[0])
    if p.r == 0:
        return k + p.b**2 / 4 * tau
    decay = np.exp(-p.r * tau)
    return k * decay + p.b**2 / (4 * p.r) * (1 - decay)


def solve_report(sol: MfgSolution, scn: Scenario) -> dict:
    rep = sol.report
    out = {
        "iterations": rep.iterations,
        "converged": rep.converged,
        "residual_history": rep.residual_history,
        "wall_time": rep.wall_time,
        "epsilon": sol.params.epsilon,
        "sigma": sol.params.sigma,
        "bc": sol.bc.value,
    }
    out.update(rep.measurements)
    flags = dict(rep.invariant_flags)
    oracle = ode_oracle(scn)
    if oracle is not None:
        err = float(np.max(np.abs(sol.u - oracle[:, None])))
        tol = 5.0 * (scn.grid.dt + scn.grid.dx**2)
        out["ode_oracle_error"], out["ode_oracle_tol"] = err, tol
        flags["ode-oracle"] = err <= tol
    out["invariant_flags"] = flags
    return out


def _solve(scn: Scenario) -> tuple[MfgSolution, bool]:
    try:
        return solve_mfg(scn.params, scn.m0, scn.u_T, scn.grid, scn.bc, scn.opts), True
    except NoConvergenceError as err:
        log.error("%s", err)
        return err.solution, False


def run_solve(scn: Scenario, out: Path) -> int:
    sol, converged = _solve(scn)
    for name in ("u", "m", "q"):
        write_lattice(out / f"{name}.csv", getattr(sol, name), scn.grid)
    write_path(out / "path.csv", sol)
    report = solve_report(sol, scn)
    write_json(out / "report.json", report)
    if not converged:
        return EXIT_NO_CONVERGENCE
    failed = [k for k, ok in report["invariant_flags"].items() if not ok]
    if failed:
        log.error("invariant checks failed: %s", ", ".join(failed))
        return EXIT_INVARIANT
    return EXIT_OK


def validation_checks(sol: MfgSolution, scn: Scenario) -> tuple[dict, dict]:
    """Measured values and per-check results of the full invariant battery."""
    params, grid = scn.params, scn.grid
    values = solve_report(sol, scn)
    checks = {name: {"pass": ok} for name, ok in values.pop("invariant_flags").items()}

    # uniqueness: restart the Picard loop from a shifted market level
    alt_opts = FixedPointOptions(
        damping=scn.opts.damping, tol=scn.opts.tol, max_iter=scn.opts.max_iter, initial_f=params.b + 0.3, hjb=scn.opts.hjb
    )
    try:
        alt = solve_mfg(params, scn.m0, scn.u_T, grid, scn.bc, alt_opts)
        gap_fn = energy_gap if scn.bc is Boundary.NEUMANN else energy_gap_dirichlet
        t1, t2 = gap_fn(sol, alt, params, grid)
        values["energy_gap_term1"], values["energy_gap_term2"] = t1, t2
        values["uniqueness_sup_diff"] = float(np.max(np.abs(sol.u - alt.u)))
        checks["uniqueness"] = {"pass": max(t1, t2) <= 1e-6, "value": max(t1, t2), "threshold": 1e-6}
    except NoConvergenceError:
        checks["uniqueness"] = {"pass": False, "value": None, "threshold": 1e-6}

    if scn.bc is Boundary.NEUMANN:
        slack = OPTIMALITY_SLACK * (grid.dx + grid.dt)
        eq = equilibrium_pair(sol)
        j_eq = evaluate_J(eq, scn.u_T, params, grid)
        diffs, identity = [], []
        for _, comp in competitor_corpus(sol):
            dj = evaluate_J(comp, scn.u_T, params, grid) - j_eq
            diffs.append(dj)
            identity.append(abs(optimality_gap(eq, comp, sol.u, params, grid) - dj))
        values["j_equilibrium"], values["j_gap_min"] = j_eq, min(diffs)
        values["gap_identity_error"] = max(identity)
        checks["optimality"] = {"pass": min(diffs) >= -slack, "value": min(diffs), "threshold": -slack}
        checks["gap-identity"] = {"pass": max(identity) <= slack, "value": max(identity), "threshold": slack}

        residual = first_order_residual(sol, params, grid)
        tol = FIRST_ORDER_TOL if params.sigma > 0 else FIRST_ORDER_TOL_INVISCID
        values["first_order_residual"] = residual
        checks["first-order"] = {"pass": residual <= tol, "value": residual, "threshold": tol}

    if params.sigma == 0:
        sub = viscosity_subsolution_check(sol.u, sol.path, params, grid)
        values["subsolution_weak_form"] = sub
        checks["subsolution"] = {"pass": sub <= SUBSOLUTION_TOL, "value": sub, "threshold": SUBSOLUTION_TOL}
    values["f_modulus"] = f_equicontinuity_modulus(sol.path, grid)
    return values, checks


def run_validate(scn: Scenario, out: Path) -> int:
    sol, converged = _solve(scn)
    if not converged:
        write_json(out / "validate.json", {"passed": False, "converged": False, **solve_report(sol, scn)})
        return EXIT_NO_CONVERGENCE
    values, checks = validation_checks(sol, scn)
    passed = all(c["pass"] for c in checks.values())
    write_json(out / "validate.json", {"passed": passed, **values, "checks": checks})
    if not passed:
        failed = [k for k, c in checks.items() if not c["pass"]]
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


SWEEP_COLUMNS = ("sigma", "iterations", "d1_to_next", "f_supdiff_to_next", "holder_d1", "holder_u", "ut_l2", "fisher_like")


def parse_sigmas(text: str) -> np.ndarray:
    try:
        values = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sigma list {text!r}") from None
    return check_sigmas(values)


def run_sweep(scn: Scenario, sigmas, out: Path, workers: int = 1, seed: int = 0) -> int:
    result = sigma_sweep(scn.params, sigmas, scn.m0, scn.u_T, scn.grid, scn.opts, scn.bc, workers=workers, seed=seed)
    n = len(result.sigmas)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for i in range(n):
            d1 = FLOAT_FMT % result.d1_consecutive[i] if i < len(result.d1_consecutive) else ""
            fd = FLOAT_FMT % result.f_sup_diffs[i] if i < n - 1 else ""
            hd = FLOAT_FMT % result.holder_constants[i] if len(result.holder_constants) else ""
            writer.writerow(
                [
                    FLOAT_FMT % result.sigmas[i],
                    result.solutions[i].report.iterations,
                    d1,
                    fd,
                    hd,
                    FLOAT_FMT % result.holder_u[i],
                    FLOAT_FMT % result.energy_norms["ut_l2"][i],
                    FLOAT_FMT % result.energy_norms["fisher_like"][i],
                ]
            )
    code = EXIT_OK
    for i, sol in enumerate(result.solutions):
        entry = out / f"sigma_{i:02d}"
        entry.mkdir(exist_ok=True)
        write_path(entry / "path.csv", sol)
        report = solve_report(sol, scn)
        write_json(entry / "report.json", report)
        if not result.converged[i]:
            code = EXIT_NO_CONVERGENCE
        elif code == EXIT_OK and not all(report["invariant_flags"].values()):
            code = EXIT_INVARIANT
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgmarket", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "solve one scenario"), ("validate", "run the invariant battery"), ("sweep", "solve along a sigma list")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("config")
        cmd.add_argument("--output-dir", help="override the output directory of the config")
        cmd.add_argument("--seed", type=int, default=0, help="seed of the Hoelder pair sampler")
        if name == "sweep":
            cmd.add_argument("--sigmas", required=True, help="comma separated, strictly decreasing")
            cmd.add_argument("--parallel", type=int, default=1, metavar="N", help="solve sweep entries in N processes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        scn = load_config(args.config)
        sigmas = parse_sigmas(args.sigmas) if args.command == "sweep" else None
        out = resolve_output(scn.output, args.output_dir)
        if args.command == "solve":
            return run_solve(scn, out)
        if args.command == "validate":
            return run_validate(scn, out)
        return run_sweep(scn, sigmas, out, workers=args.parallel, seed=args.seed)
    except NewtonDivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (MfgError, OSError) as err:
        # CFL violations are a grid choice, so they count as a rejected config
        kind = "step size" if isinstance(err, CflViolationError) else "config"
        print(f"{kind} error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
