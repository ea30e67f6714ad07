"""Decoupled subsystem: heat equation for the total concentration and the
temperature advection equation, with an upwind stepper and an independent
characteristics (semi-Lagrangian) solver as a second method.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CFLViolation, NumericallySingular, TrajectoryExit
from .model import Grid
from .stencil import (
    _slc,
    face_grad,
    interp_cell_field,
    interp_face_normal,
    laplacian,
    laplacian_matrix,
)

#: Ratio of the advected log-concentration rate entering the temperature source.
SOURCE_FACTOR = 2.0 / 3.0
#: Ratio of the closure diffusivity entering the advecting velocity.
VELOCITY_FACTOR = 5.0 / 3.0
#: Safety factor of the adaptive explicit heat step.
HEAT_CFL_SAFETY = 0.45
#: Advective Courant number allowed for the upwind temperature step.
ADVECTIVE_CFL = 0.9

_implicit_cache: dict = {}


def heat_cfl_limit(alpha: float, grid: Grid) -> float:
    """Largest stable explicit Euler step for the Neumann heat stencil."""
    return 1.0 / (2.0 * alpha * sum(1.0 / h**2 for h in grid.spacing))


def heat_step(
    c_tot: np.ndarray,
    dt: float,
    alpha: float,
    grid: Grid,
    scheme: str = "explicit",
    check_cfl: bool = True,
) -> np.ndarray:
    """One conservative finite-volume step of the heat equation.

    The explicit update telescopes face fluxes, so the discrete integral of
    the field is preserved to round-off; the implicit variant is a direct
    (banded in 1D, sparse LU in 2D) backward Euler solve.
    """
    c_tot = np.asarray(c_tot, dtype=float)
    if scheme == "explicit":
        if check_cfl and dt > heat_cfl_limit(alpha, grid) * (1.0 + 1e-12):
            raise CFLViolation(
                f"dt={dt:.3e} exceeds explicit heat limit "
                f"{heat_cfl_limit(alpha, grid):.3e}"
            )
        return c_tot + dt * alpha * laplacian(c_tot, grid)
    if scheme == "implicit":
        return _heat_step_implicit(c_tot, dt, alpha, grid)
    raise ValueError(f"unknown heat scheme {scheme!r}")


def _cache_put(key, value):
    # Bounded FIFO: adaptive step policies change dt every step and would
    # otherwise grow the factorization cache without limit.
    if len(_implicit_cache) >= 32:
        _implicit_cache.pop(next(iter(_implicit_cache)))
    _implicit_cache[key] = value
    return value


def _heat_step_implicit(
    c_tot: np.ndarray, dt: float, alpha: float, grid: Grid
) -> np.ndarray:
    key = (grid, float(dt), float(alpha))
    if grid.d == 1:
        solver = _implicit_cache.get(key)
        if solver is None:
            lap = laplacian_matrix(grid).toarray()
            a = np.eye(grid.cells[0]) - dt * alpha * lap
            ab = np.zeros((3, grid.cells[0]))
            ab[0, 1:] = np.diag(a, 1)
            ab[1, :] = np.diag(a)
            ab[2, :-1] = np.diag(a, -1)
            solver = _cache_put(key, ("banded", ab))
        _, ab = solver
        return scipy.linalg.solve_banded((1, 1), ab, c_tot)
    solver = _implicit_cache.get(key)
    if solver is None:
        n_cells = int(np.prod(grid.cells))
        a = sp.identity(n_cells, format="csc") - dt * alpha * laplacian_matrix(grid)
        solver = _cache_put(key, spla.splu(a.tocsc()))
    return solver.solve(c_tot.ravel()).reshape(grid.cells)


def dt_log_ctot(c_tot: np.ndarray, alpha: float, grid: Grid) -> np.ndarray:
    """Rate of change of log total concentration via the heat-equation identity.

    Computed as ``alpha * laplacian(c_tot) / c_tot`` rather than by time
    differencing snapshots, which avoids order reduction.
    """
    c_tot = np.asarray(c_tot, dtype=float)
    if np.any(c_tot <= 0.0):
        raise NumericallySingular("total concentration must stay strictly positive")
    return alpha * laplacian(c_tot, grid) / c_tot


@dataclass(frozen=True)
class VelocityField:
    """Advecting velocity stored as face-normal components per axis.

    The normal component on every boundary face is exactly zero, inherited
    from the Neumann mirror ghosts of the generating concentration field.
    """

    grid: Grid
    faces: tuple[np.ndarray, ...]

    @property
    def max_speed(self) -> float:
        return max(float(np.abs(f).max(initial=0.0)) for f in self.faces)

    def cell_centered(self, axis: int) -> np.ndarray:
        """Cell-centered component: mean of the two bounding face values."""
        f = self.faces[axis]
        lo = [slice(None)] * self.grid.d
        hi = [slice(None)] * self.grid.d
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        return 0.5 * (f[tuple(lo)] + f[tuple(hi)])

    def at_points(self, points: np.ndarray) -> np.ndarray:
        """Interpolated velocity vectors at arbitrary points, shape (N, d)."""
        cols = [
            interp_face_normal(self.faces[a], self.grid, a, points)
            for a in range(self.grid.d)
        ]
        return np.stack(cols, axis=1)


def advection_velocity(c_tot: np.ndarray, alpha: float, grid: Grid) -> VelocityField:
    """Velocity advecting the temperature: minus closure-scaled grad(log c_tot)."""
    c_tot = np.asarray(c_tot, dtype=float)
    if np.any(c_tot <= 0.0):
        raise NumericallySingular("total concentration must stay strictly positive")
    log_c = np.log(c_tot)
    faces = tuple(
        -VELOCITY_FACTOR * alpha * face_grad(log_c, a, grid.spacing[a])
        for a in range(grid.d)
    )
    return VelocityField(grid=grid, faces=faces)


def temperature_step_upwind(
    temp: np.ndarray,
    velocity: VelocityField,
    source: np.ndarray,
    dt: float,
    grid: Grid,
    check_cfl: bool = True,
) -> np.ndarray:
    """First-order donor-cell transport step plus the explicit decay source.

    No boundary data is needed: the velocity has zero normal component on
    the walls and the mirror ghosts make the one-sided boundary differences
    vanish consistently.
    """
    temp = np.asarray(temp, dtype=float)
    vmax = velocity.max_speed
    if check_cfl and dt * vmax / min(grid.spacing) > ADVECTIVE_CFL * (1.0 + 1e-12):
        raise CFLViolation(
            f"advective Courant number {dt * vmax / min(grid.spacing):.3f} "
            f"exceeds {ADVECTIVE_CFL}"
        )
    out = temp * (1.0 + SOURCE_FACTOR * dt * np.asarray(source, dtype=float))
    for a in range(grid.d):
        h = grid.spacing[a]
        v = velocity.cell_centered(a)
        ghosted = np.concatenate(
            [
                temp[_slc(grid.d, a, slice(0, 1))],
                temp,
                temp[_slc(grid.d, a, slice(-1, None))],
            ],
            axis=a,
        )
        back = (
            ghosted[_slc(grid.d, a, slice(1, -1))]
            - ghosted[_slc(grid.d, a, slice(0, -2))]
        ) / h
        fwd = (
            ghosted[_slc(grid.d, a, slice(2, None))]
            - ghosted[_slc(grid.d, a, slice(1, -1))]
        ) / h
        out = out - dt * (np.maximum(v, 0.0) * back + np.minimum(v, 0.0) * fwd)
    return out


class CtotHistory:
    """Chronological buffer of total-concentration snapshots.

    Stores one snapshot per accepted step and lazily caches the velocity
    field and the log-concentration rate of each snapshot for interpolation
    along backward trajectories.
    """

    def __init__(self, grid: Grid, alpha: float):
        self.grid = grid
        self.alpha = float(alpha)
        self._times: list[float] = []
        self._fields: list[np.ndarray] = []
        self._velocities: dict[int, VelocityField] = {}
        self._rates: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._times)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times)

    def append(self, t: float, c_tot: np.ndarray) -> None:
        if self._times and t <= self._times[-1]:
            raise ValueError(f"history times must increase, got {t} after {self._times[-1]}")
        self._times.append(float(t))
        self._fields.append(np.array(c_tot, dtype=float, copy=True))

    def velocity(self, i: int) -> VelocityField:
        if i not in self._velocities:
            self._velocities[i] = advection_velocity(self._fields[i], self.alpha, self.grid)
        return self._velocities[i]

    def rate(self, i: int) -> np.ndarray:
        if i not in self._rates:
            self._rates[i] = dt_log_ctot(self._fields[i], self.alpha, self.grid)
        return self._rates[i]

    def bracket(self, s: float) -> tuple[int, int, float]:
        """Snapshot pair surrounding time ``s`` and the interpolation weight."""
        times = self._times
        if s <= times[0]:
            return 0, 0, 0.0
        if s >= times[-1]:
            return len(times) - 1, len(times) - 1, 0.0
        hi = int(np.searchsorted(times, s))
        lo = hi - 1
        w = (s - times[lo]) / (times[hi] - times[lo])
        return lo, hi, float(w)

    def velocity_at(self, s: float, points: np.ndarray) -> np.ndarray:
        lo, hi, w = self.bracket(s)
        v = self.velocity(lo).at_points(points)
        if hi != lo and w != 0.0:
            v = (1.0 - w) * v + w * self.velocity(hi).at_points(points)
        return v

    def rate_at(self, s: float, points: np.ndarray) -> np.ndarray:
        lo, hi, w = self.bracket(s)
        r = interp_cell_field(self.rate(lo), self.grid, points)
        if hi != lo and w != 0.0:
            r = (1.0 - w) * r + w * interp_cell_field(self.rate(hi), self.grid, points)
        return r

    def min_spacing(self) -> float:
        if len(self._times) < 2:
            return float("inf")
        return float(np.diff(self.times).min())

    def max_speed(self) -> float:
        return max(self.velocity(i).max_speed for i in range(len(self._times)))


def temperature_characteristics(
    temp_in: np.ndarray, history: CtotHistory, t_query: float
) -> np.ndarray:
    """Evaluate the temperature by integrating backward along characteristics.

    For every cell center the trajectory of the advecting velocity is traced
    from ``t_query`` back to time zero with midpoint (RK2) substeps, the
    log-concentration rate is accumulated along it by the trapezoid rule,
    and the initial temperature is interpolated at the foot point.
    """
    grid = history.grid
    temp_in = np.asarray(temp_in, dtype=float)
    if len(history) == 0 or history.times[0] > 1e-14:
        raise ValueError("history must start at time zero")
    if t_query < 0.0 or t_query > history.times[-1] + 1e-12 * max(1.0, t_query):
        raise ValueError(f"history does not cover query time {t_query}")
    points = np.stack([ax.ravel() for ax in grid.meshes()], axis=1)
    if t_query == 0.0:
        return temp_in.copy()

    vmax = history.max_speed()
    ds = history.min_spacing()
    if vmax > 0.0:
        ds = min(ds, 0.5 * min(grid.spacing) / vmax)
    n_sub = max(1, int(np.ceil(t_query / ds)))
    ds = t_query / n_sub

    ghost = max(grid.spacing)
    integral = np.zeros(points.shape[0])
    g_here = history.rate_at(t_query, points)
    s = t_query
    for _ in range(n_sub):
        v_here = history.velocity_at(s, points)
        mid = points - 0.5 * ds * v_here
        v_mid = history.velocity_at(s - 0.5 * ds, mid)
        points = points - ds * v_mid
        s -= ds
        for a in range(grid.d):
            if np.any(points[:, a] < -ghost) or np.any(points[:, a] > grid.lengths[a] + ghost):
                raise TrajectoryExit(
                    f"characteristic left the domain by more than one cell at s={s:.3e}"
                )
            points[:, a] = np.clip(points[:, a], 0.0, grid.lengths[a])
        g_prev = g_here
        g_here = history.rate_at(s, points)
        integral += 0.5 * ds * (g_prev + g_here)

    foot = interp_cell_field(temp_in, grid, points)
    return (foot * np.exp(SOURCE_FACTOR * integral)).reshape(grid.cells)
