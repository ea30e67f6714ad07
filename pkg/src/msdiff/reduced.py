"""Reduced system stepper: quasi-linear diffusion for the first n-1 species,
the lower-order coupling term, flux reconstruction and last-species recovery.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .algebra import _invert_many, _reduced_friction_many, spectral_bounds
from .decoupled import ADVECTIVE_CFL, VelocityField
from .errors import CFLViolation, LinearSolveFailure
from .model import FieldState, Grid, MixtureSpec
from .stencil import _slc, div_faces, face_grad, face_mean, laplacian

#: Safety factor of the adaptive explicit diffusion step.
DIFFUSION_CFL_SAFETY = 0.45


def recover_last_species(c_prime: np.ndarray, c_tot: np.ndarray) -> np.ndarray:
    """Last species concentration implied by the closure of the total."""
    return np.asarray(c_tot, dtype=float) - np.asarray(c_prime, dtype=float).sum(axis=0)


def _face_mobility(
    state: FieldState, spec: MixtureSpec, grid: Grid, axis: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face-mean reduced concentrations, face-mean total and stacked inverse
    reduced friction matrices along one axis.

    The inverse is evaluated at face concentrations (arithmetic means), not
    averaged from cell inverses, keeping the operator in divergence form
    with a single evaluation point.
    """
    cp_f = face_mean(state.c_prime, axis + 1)
    ct_f = face_mean(state.c_tot, axis)
    m = state.m
    flat_cp = cp_f.reshape(m, -1).T
    f0 = _reduced_friction_many(flat_cp, ct_f.ravel(), spec)
    mob = _invert_many(f0)
    return cp_f, ct_f, mob


def _total_face_flux(
    state: FieldState, spec: MixtureSpec, grid: Grid, axis: int
) -> tuple[np.ndarray, np.ndarray]:
    """Minus the species fluxes at faces of one axis: diffusive part plus the
    temperature and total-concentration coupling parts. Returns the array
    and its purely lower-order portion (without the diffusive term)."""
    m = state.m
    h = grid.spacing[axis]
    cp_f, ct_f, mob = _face_mobility(state, spec, grid, axis)
    t_f = face_mean(state.T, axis)
    grad_cp = face_grad(state.c_prime, axis + 1, h)
    grad_t = face_grad(state.T, axis, h)
    grad_ct = face_grad(state.c_tot, axis, h)

    fshape = ct_f.shape
    flat = lambda arr: arr.reshape(m, -1)
    scaled = spec.k_last.reshape((m,) + (1,) * grid.d) * cp_f

    drive_lo = flat(cp_f) * grad_t.ravel() + spec.alpha * flat(scaled) * grad_ct.ravel()
    lower = np.einsum("fij,jf->if", mob, drive_lo).reshape((m,) + fshape)
    diff = np.einsum("fij,jf->if", mob, flat(grad_cp)).reshape((m,) + fshape)
    total = t_f[None] * diff + lower
    return total, lower


def lower_order_term(
    c_prime: np.ndarray,
    temp: np.ndarray,
    c_tot: np.ndarray,
    grid: Grid,
    spec: MixtureSpec,
) -> np.ndarray:
    """Zeroth-order coupling of the reduced system.

    Divergence of the mobility-weighted temperature and total-concentration
    drives, minus the rate of change of the total concentration (evaluated
    through the heat equation) broadcast to every component.
    """
    state = FieldState(t=0.0, c_prime=c_prime, c_tot=c_tot, T=temp)
    out = np.zeros_like(state.c_prime)
    for a in range(grid.d):
        _, lower = _total_face_flux(state, spec, grid, a)
        out += div_faces(lower, a + 1, grid.spacing[a])
    dt_ctot = spec.alpha * laplacian(state.c_tot, grid)
    return out - dt_ctot[None]


def stable_dt(
    state: FieldState,
    spec: MixtureSpec,
    grid: Grid,
    velocity: VelocityField | None = None,
) -> float:
    """Adaptive explicit step for the reduced diffusion, optionally capped by
    the advective Courant bound of the coupled temperature stepper.

    Uses the guaranteed bound on the largest mobility eigenvalue (inverse of
    the lower spectral bound) instead of per-cell eigensolves.
    """
    delta, _ = spectral_bounds(spec)
    t_max = float(np.asarray(state.T).max())
    h_min = min(grid.spacing)
    dt = DIFFUSION_CFL_SAFETY * h_min**2 * delta / (2.0 * grid.d * t_max)
    if velocity is not None and velocity.max_speed > 0.0:
        dt = min(dt, ADVECTIVE_CFL * h_min / velocity.max_speed)
    return dt


def reduced_step_explicit(
    state: FieldState,
    spec: MixtureSpec,
    grid: Grid,
    dt: float,
    check_cfl: bool = True,
) -> FieldState:
    """One conservative explicit Euler step of the reduced species system.

    The total concentration and temperature fields are coefficients here and
    are left untouched; only the reduced concentrations and time advance.
    """
    if check_cfl and dt > stable_dt(state, spec, grid) / DIFFUSION_CFL_SAFETY * (
        1.0 + 1e-12
    ):
        raise CFLViolation(
            f"dt={dt:.3e} exceeds the explicit reduced-diffusion limit"
        )
    update = np.zeros_like(state.c_prime)
    for a in range(grid.d):
        total, _ = _total_face_flux(state, spec, grid, a)
        update += div_faces(total, a + 1, grid.spacing[a])
    update -= spec.alpha * laplacian(state.c_tot, grid)[None]
    return FieldState(
        t=state.t + dt,
        c_prime=state.c_prime + dt * update,
        c_tot=state.c_tot,
        T=state.T,
    )


def reduced_step_semi_implicit(
    state: FieldState, spec: MixtureSpec, grid: Grid, dt: float
) -> FieldState:
    """Backward Euler in the diffusion with coefficients lagged at the old
    state; the lower-order term stays explicit. Direct sparse solve."""
    m = state.m
    n_cells = int(np.prod(grid.cells))
    size = m * n_cells
    idx = np.arange(n_cells).reshape(grid.cells)
    rows, cols, vals = [], [], []
    for a in range(grid.d):
        h = grid.spacing[a]
        _, _, mob = _face_mobility(state, spec, grid, a)
        t_f = face_mean(state.T, a)
        fshape = t_f.shape
        mob = mob.reshape(fshape + (m, m))
        inner = _slc(grid.d, a, slice(1, -1))
        w = (t_f[inner][..., None, None] * mob[inner]) / h**2  # (..., m, m)
        w = w.reshape(-1, m, m)
        left = idx[_slc(grid.d, a, slice(0, -1))].ravel()
        right = idx[_slc(grid.d, a, slice(1, None))].ravel()
        p = np.arange(m)
        pp, qq = np.meshgrid(p, p, indexing="ij")
        pp, qq = pp.ravel(), qq.ravel()
        for cell_r, cell_c, sign in (
            (left, right, 1.0),
            (left, left, -1.0),
            (right, left, 1.0),
            (right, right, -1.0),
        ):
            rows.append((pp[:, None] * n_cells + cell_r[None, :]).ravel())
            cols.append((qq[:, None] * n_cells + cell_c[None, :]).ravel())
            vals.append(sign * w[:, pp, qq].T.ravel())
    op = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsc()
    lhs = sp.identity(size, format="csc") - dt * op
    rhs = (
        state.c_prime
        + dt * lower_order_term(state.c_prime, state.T, state.c_tot, grid, spec)
    ).reshape(size)
    try:
        sol = spla.spsolve(lhs, rhs)
    except Exception as exc:  # scipy raises several types here
        raise LinearSolveFailure(f"semi-implicit solve failed: {exc}")
    if not np.all(np.isfinite(sol)):
        raise LinearSolveFailure("semi-implicit solve produced non-finite values")
    return FieldState(
        t=state.t + dt,
        c_prime=sol.reshape((m,) + grid.cells),
        c_tot=state.c_tot,
        T=state.T,
    )


@dataclass(frozen=True)
class FluxSet:
    """Per-axis face fluxes of every species plus closure diagnostics."""

    grid: Grid
    j_prime: tuple[np.ndarray, ...]  # per axis, shape (n-1, faces...)
    j_last: tuple[np.ndarray, ...]  # per axis, shape (faces...)
    closure_residual: float  # scaled; zero by construction up to round-off

    def species_flux(self, axis: int) -> np.ndarray:
        """All n face-flux components along one axis, shape (n, faces...)."""
        return np.concatenate(
            [self.j_prime[axis], self.j_last[axis][None]], axis=0
        )


def reconstruct_fluxes(
    state: FieldState, spec: MixtureSpec, grid: Grid
) -> FluxSet:
    """Face-centered species fluxes using the same face averaging as the
    stepper, with the last species fixed by the closure relation."""
    j_prime, j_last = [], []
    closure_num, closure_den = 0.0, 0.0
    for a in range(grid.d):
        h = grid.spacing[a]
        total, _ = _total_face_flux(state, spec, grid, a)
        jp = -total
        grad_ct = face_grad(state.c_tot, a, h)
        jl = -spec.alpha * grad_ct - jp.sum(axis=0)
        j_prime.append(jp)
        j_last.append(jl)
        resid = jp.sum(axis=0) + jl + spec.alpha * grad_ct
        closure_num = max(closure_num, float(np.abs(resid).max(initial=0.0)))
        closure_den = max(
            closure_den,
            float(np.abs(jp).max(initial=0.0)),
            float(np.abs(spec.alpha * grad_ct).max(initial=0.0)),
        )
    scaled = closure_num / closure_den if closure_den > 0.0 else 0.0
    return FluxSet(
        grid=grid,
        j_prime=tuple(j_prime),
        j_last=tuple(j_last),
        closure_residual=scaled,
    )
