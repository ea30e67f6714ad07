"""Sequential simulation driver: steps the coupled pipeline, runs the
invariant monitors and writes snapshot/diagnostics CSV files.

Per accepted step the order is: heat update of the total concentration,
temperature update with the configured scheme, reduced species update with
coefficient fields frozen at the old time, then monitors. Output files are
UTF-8 with LF line endings and shortest round-trip float formatting, so two
identical invocations produce byte-identical files.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import decoupled, reduced, verify
from .algebra import spectral_bounds
from .errors import MsDiffError, ValidationError
from .model import FieldState, Grid, ScenarioConfig, build_initial_state

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_NUMERICAL = 3

#: Absolute slack on the total-concentration bounds monitor.
EXCURSION_TOL = 1e-12
#: Slack on the ellipticity floor monitor.
ELLIPTICITY_TOL = 1e-10


@dataclass
class RunOutputs:
    """Files and end state produced by one scenario run."""

    out_dir: Optional[Path]
    snapshot_paths: list = field(default_factory=list)
    diagnostics_path: Optional[Path] = None
    exit_status: int = EXIT_OK
    message: str = ""
    final_state: Optional[FieldState] = None
    diagnostics: Optional[verify.Diagnostics] = None


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_snapshot(path: Path, state: FieldState, grid: Grid) -> None:
    """One CSV per snapshot: coordinates, every species, total, temperature."""
    n = state.m + 1
    header = ["x"] + (["y"] if grid.d == 2 else [])
    header += [f"c_{i + 1}" for i in range(n)] + ["c_tot", "T"]
    coords = [ax.ravel() for ax in grid.meshes()]
    fields = state.species().reshape(n, -1)
    rows = []
    for idx in range(fields.shape[1]):
        row = [c[idx] for c in coords]
        row += [fields[i, idx] for i in range(n)]
        row += [state.c_tot.ravel()[idx], state.T.ravel()[idx]]
        rows.append(row)
    write_csv(path, header, rows)


def _policy_dt(config: ScenarioConfig, state: FieldState,
               velocity: Optional[decoupled.VelocityField]) -> float:
    """Adaptive step: safety factor times the tightest applicable bound."""
    bounds = []
    if config.concentration_scheme == "explicit":
        bounds.append(reduced.stable_dt(state, config.mixture, config.grid))
        bounds.append(
            decoupled.HEAT_CFL_SAFETY
            * decoupled.heat_cfl_limit(config.mixture.alpha, config.grid)
        )
    if velocity is not None and velocity.max_speed > 0.0:
        bounds.append(
            decoupled.ADVECTIVE_CFL * min(config.grid.spacing) / velocity.max_speed
        )
    if not bounds:
        # Fully implicit concentration path: fall back to the heat-policy
        # step as an accuracy-motivated default.
        bounds.append(
            decoupled.HEAT_CFL_SAFETY
            * decoupled.heat_cfl_limit(config.mixture.alpha, config.grid)
        )
    return config.cfl_safety * min(bounds)


def _cfl_ok(config: ScenarioConfig, state: FieldState, dt: float,
            velocity: decoupled.VelocityField) -> bool:
    grid, mix = config.grid, config.mixture
    if config.concentration_scheme == "explicit":
        if dt > decoupled.heat_cfl_limit(mix.alpha, grid) * (1 + 1e-12):
            return False
        limit = reduced.stable_dt(state, mix, grid) / reduced.DIFFUSION_CFL_SAFETY
        if dt > limit * (1 + 1e-12):
            return False
    if config.temperature_scheme == "upwind" and velocity.max_speed > 0.0:
        if dt * velocity.max_speed / min(grid.spacing) > decoupled.ADVECTIVE_CFL * (
            1 + 1e-12
        ):
            return False
    return True


def run_scenario(
    config: ScenarioConfig,
    out_dir=None,
    strict: bool = False,
    write: bool = True,
) -> RunOutputs:
    """Run one scenario to its final time; see module docstring for the
    per-step order and the meaning of exit statuses (0 clean, 2 invariant
    violation under strict, 3 numerical failure)."""
    grid, mix = config.grid, config.mixture
    alpha = mix.alpha
    _, eta = spectral_bounds(mix)
    ellipticity_floor = mix.bounds.T_min / eta - ELLIPTICITY_TOL
    excursion_cap = EXCURSION_TOL * max(1.0, mix.bounds.c_max)

    out = RunOutputs(out_dir=None)
    if write:
        target = out_dir if out_dir is not None else config.out_dir
        if target is None:
            raise ValidationError(
                "output.dir", "no output directory configured and none passed"
            )
        out.out_dir = Path(target)
        out.out_dir.mkdir(parents=True, exist_ok=True)

    state = build_initial_state(config)
    diag = verify.Diagnostics(n_species=mix.n)
    out.diagnostics = diag
    heat_scheme = (
        "implicit" if config.concentration_scheme == "semi_implicit" else "explicit"
    )
    history = None
    temp_in = state.T
    if config.temperature_scheme == "characteristics":
        history = decoupled.CtotHistory(grid, alpha)
        history.append(0.0, state.c_tot)

    pending = sorted(t for t in config.snapshot_times)
    t_scale = max(1.0, config.t_end)

    def emit_snapshot(label_time: float) -> None:
        if not write:
            return
        path = out.out_dir / f"snap_t{label_time:.6g}.csv"
        write_snapshot(path, state, grid)
        out.snapshot_paths.append(path)

    while pending and pending[0] <= state.t + 1e-12 * t_scale:
        emit_snapshot(pending.pop(0))

    step_no = 0
    status, message = EXIT_OK, ""
    while state.t < config.t_end - 1e-12 * t_scale:
        velocity = decoupled.advection_velocity(state.c_tot, alpha, grid)
        if config.dt is not None:
            dt = config.dt
        else:
            dt = _policy_dt(config, state, velocity)
        dt = min(dt, config.t_end - state.t)
        step_no += 1

        cfl_ok = _cfl_ok(config, state, dt, velocity)
        if not cfl_ok and strict:
            _append_diagnostics(diag, state, dt, config, ellipticity_floor)
            status = EXIT_INVARIANT
            message = f"CFL violation at step {step_no}, t={state.t!r}, dt={dt!r}"
            break

        try:
            new_ctot = decoupled.heat_step(
                state.c_tot, dt, alpha, grid, scheme=heat_scheme, check_cfl=False
            )
            if config.temperature_scheme == "upwind":
                rate = decoupled.dt_log_ctot(state.c_tot, alpha, grid)
                new_temp = decoupled.temperature_step_upwind(
                    state.T, velocity, rate, dt, grid, check_cfl=False
                )
            else:
                history.append(state.t + dt, new_ctot)
                new_temp = decoupled.temperature_characteristics(
                    temp_in, history, state.t + dt
                )
            if config.concentration_scheme == "explicit":
                stepped = reduced.reduced_step_explicit(
                    state, mix, grid, dt, check_cfl=False
                )
            else:
                stepped = reduced.reduced_step_semi_implicit(state, mix, grid, dt)
        except MsDiffError as exc:
            status = EXIT_NUMERICAL
            message = f"solver failure at step {step_no}, t={state.t!r}: {exc}"
            break

        state = FieldState(
            t=stepped.t, c_prime=stepped.c_prime, c_tot=new_ctot, T=new_temp
        )
        if not all(
            np.all(np.isfinite(f)) for f in (state.c_prime, state.c_tot, state.T)
        ):
            status = EXIT_NUMERICAL
            message = f"non-finite fields at step {step_no}, t={state.t!r}"
            break

        row = _append_diagnostics(diag, state, dt, config, ellipticity_floor)

        while pending and pending[0] <= state.t + 1e-12 * t_scale:
            emit_snapshot(pending.pop(0))
        if config.every_n_steps and step_no % config.every_n_steps == 0:
            emit_snapshot(state.t)

        if strict:
            violation = None
            if not cfl_ok:
                violation = "CFL violation"
            elif row["excursion"] > excursion_cap:
                violation = f"max-principle excursion {row['excursion']!r}"
            elif row["neg_events"] > 0:
                violation = f"{row['neg_events']} negativity events"
            elif row["min_re_eig"] < ellipticity_floor:
                violation = f"ellipticity {row['min_re_eig']!r} below floor"
            if violation is not None:
                status = EXIT_INVARIANT
                message = f"{violation} at step {step_no}, t={state.t!r}"
                break

    if write:
        out.diagnostics_path = out.out_dir / "diagnostics.csv"
        write_csv(out.diagnostics_path, diag.header(), diag.rows())
    out.exit_status = status
    out.message = message
    out.final_state = state
    return out


def _append_diagnostics(diag, state, dt, config, ellipticity_floor) -> dict:
    grid, mix = config.grid, config.mixture
    masses = verify.species_masses(state, grid)
    fluxes = reduced.reconstruct_fluxes(state, mix, grid)
    flux_resid, closure_resid = verify.flux_gradient_residual(fluxes, state, mix, grid)
    min_eig = verify.ellipticity_monitor(state, mix)
    neg = verify.negativity_events(state)
    b = mix.bounds
    excursion = max(
        float(b.c_min - state.c_tot.min()), float(state.c_tot.max() - b.c_max), 0.0
    )
    diag.append(
        t=state.t,
        dt=dt,
        mass=masses,
        ctot_min=float(state.c_tot.min()),
        ctot_max=float(state.c_tot.max()),
        temp_min=float(state.T.min()),
        temp_max=float(state.T.max()),
        min_re_eig=min_eig,
        flux_residual=flux_resid,
        closure_residual=closure_resid,
        neg_events=neg,
    )
    return {"excursion": excursion, "neg_events": neg, "min_re_eig": min_eig}


def refine_config(config: ScenarioConfig, factor: int) -> ScenarioConfig:
    """Scenario with every axis refined and a fixed step divided by ``factor``."""
    from dataclasses import replace

    grid = Grid(
        d=config.grid.d,
        cells=tuple(c * factor for c in config.grid.cells),
        lengths=config.grid.lengths,
    )
    dt = config.dt / factor if config.dt is not None else None
    return replace(config, grid=grid, dt=dt)


def convergence_study(config: ScenarioConfig, levels: int) -> verify.ConvergenceTable:
    """Self-convergence of a scenario against its finest refinement.

    Each level halves the spacing (and the fixed step, when given); fields at
    the final time are compared in the sup norm after averaging the finest
    level down to each coarser grid.
    """
    states, grids, dts = [], [], []
    for lev in range(levels):
        refined = refine_config(config, 2**lev)
        result = run_scenario(refined, write=False)
        if result.exit_status != EXIT_OK:
            raise MsDiffError(
                f"refinement level {lev} failed: {result.message or 'non-zero exit'}"
            )
        states.append(result.final_state)
        grids.append(refined.grid)
        n_steps = len(result.diagnostics.t)
        dts.append(config.t_end / n_steps if n_steps else 0.0)
    rows = []
    fine = states[-1]
    for lev in range(levels - 1):
        factor = 2 ** (levels - 1 - lev)
        coarse = states[lev]
        restricted = _restrict(fine.species(), config.grid.d, factor)
        err = float(np.abs(coarse.species() - restricted).max())
        rows.append((grids[lev].spacing[0], dts[lev], err))
    return verify.convergence_order(rows)


def _restrict(fields: np.ndarray, d: int, factor: int) -> np.ndarray:
    """Average fine cells down by ``factor`` along every grid axis."""
    out = fields
    if d == 1:
        k, nx = out.shape[0], out.shape[1] // factor
        return out.reshape(k, nx, factor).mean(axis=2)
    k = out.shape[0]
    nx, ny = out.shape[1] // factor, out.shape[2] // factor
    return out.reshape(k, nx, factor, ny, factor).mean(axis=(2, 4))
