"""Brute-force full-system oracle, invariant monitors and convergence studies.

The oracle steps the original n-species system directly through per-face
constrained flux solves and is kept discretely independent of the reduced
path: the singular friction system is solved with the friction matrix of
each neighbouring cell and the two flux solutions are averaged at the face,
whereas the reduced stepper evaluates mobilities at face-mean concentrations.
Both are consistent, so their states converge to each other under joint
space-time refinement; agreement is the equivalence check.

All monitors are pure observers: they never mutate simulation state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    TOL_COMPAT,
    _constrained_solve_many,
    _friction_many,
    _invert_many,
    _reduced_friction_many,
    conjugation_blocks,
    eigen_check,
    friction_matrix,
    reduced_friction_matrix,
    spectral_bounds,
)
from .decoupled import heat_step
from .errors import CFLViolation, IncompatibleRHS
from .model import TOL_NEG, Bounds, FieldState, Grid, MixtureSpec, validate_mixture
from .reduced import (
    FluxSet,
    reconstruct_fluxes,
    reduced_step_explicit,
    stable_dt,
)
from .stencil import _slc, div_faces, face_grad, face_mean


def _oracle_axis_fluxes(
    c_fields: np.ndarray,
    temp: np.ndarray,
    c_tot: np.ndarray,
    grid: Grid,
    spec: MixtureSpec,
    axis: int,
) -> np.ndarray:
    """Species fluxes (n, faces...) along one axis from per-side constrained
    solves of the flux-gradient relation, averaged at each interior face."""
    n = spec.n
    h = grid.spacing[axis]
    d_ct = face_grad((c_fields * temp[None]), axis + 1, h)  # grad of c_i T
    grad_ct = face_grad(c_tot, axis, h)

    inner = _slc(grid.d, axis, slice(1, -1))
    d_in = d_ct[(slice(None),) + inner]
    g_in = grad_ct[inner]
    fshape = g_in.shape
    n_f = int(np.prod(fshape))
    rhs_base = d_in.reshape(n, n_f).T[:, :, None]  # (Nf, n, 1)

    scale = float(np.abs(rhs_base).max(initial=0.0))
    solves = []
    for side in (slice(0, -1), slice(1, None)):
        c_side = c_fields[(slice(None),) + _slc(grid.d, axis, side)]
        fric = _friction_many(c_side.reshape(n, n_f).T, spec.K)
        # Flux correction that makes the right-hand side kernel-compatible:
        # the last friction column scaled by the closure gradient.
        corr = spec.alpha * fric[:, :, n - 1] * g_in.ravel()[:, None]
        rhs = rhs_base + corr[:, :, None]
        defect = np.abs(rhs.sum(axis=1)).max(initial=0.0) / np.sqrt(n)
        if scale > 0.0 and defect > TOL_COMPAT * scale:
            raise IncompatibleRHS(
                f"face right-hand side has ones-component {defect:.3e} "
                f"(allowed {TOL_COMPAT * scale:.3e}); the state violates the "
                "uniform-pressure compatibility of the flux-gradient relations"
            )
        solves.append(_constrained_solve_many(rhs, fric)[:, :, 0])
    j_tilde = 0.5 * (solves[0] + solves[1])
    j = j_tilde.T.reshape((n,) + fshape)
    j[n - 1] -= spec.alpha * g_in

    zshape = list(j.shape)
    zshape[axis + 1] = 1
    z = np.zeros(zshape)
    return np.concatenate([z, j, z], axis=axis + 1)


def oracle_fluxes(
    c_fields: np.ndarray,
    temp: np.ndarray,
    c_tot: np.ndarray,
    grid: Grid,
    spec: MixtureSpec,
) -> FluxSet:
    """FluxSet produced by the oracle's per-face constrained solves."""
    j_prime, j_last = [], []
    worst, scale = 0.0, 0.0
    for a in range(grid.d):
        j = _oracle_axis_fluxes(c_fields, temp, c_tot, grid, spec, a)
        j_prime.append(j[: spec.n - 1])
        j_last.append(j[spec.n - 1])
        resid = j.sum(axis=0) + spec.alpha * face_grad(c_tot, a, grid.spacing[a])
        worst = max(worst, float(np.abs(resid).max(initial=0.0)))
        scale = max(scale, float(np.abs(j).max(initial=0.0)))
    return FluxSet(
        grid=grid,
        j_prime=tuple(j_prime),
        j_last=tuple(j_last),
        closure_residual=worst / scale if scale > 0.0 else 0.0,
    )


def full_system_step_oracle(
    c_fields: np.ndarray,
    temp: np.ndarray,
    c_tot: np.ndarray,
    dt: float,
    grid: Grid,
    spec: MixtureSpec,
    check_cfl: bool = True,
) -> np.ndarray:
    """Advance all n species by one conservative step of the original system.

    Per interior face the flux matrix is obtained from the constrained
    (kernel-deflated) solve of the flux-gradient relations, then every
    species is updated by the divergence of its face fluxes.
    """
    c_fields = np.asarray(c_fields, dtype=float)
    if c_fields.shape[0] != spec.n:
        raise ValueError(f"need {spec.n} species fields, got {c_fields.shape[0]}")
    if check_cfl:
        probe = FieldState(
            t=0.0, c_prime=c_fields[: spec.n - 1], c_tot=c_tot, T=temp
        )
        limit = stable_dt(probe, spec, grid) / 0.45
        if dt > limit * (1.0 + 1e-12):
            raise CFLViolation(
                f"dt={dt:.3e} exceeds the explicit stability estimate {limit:.3e}"
            )
    out = c_fields.copy()
    for a in range(grid.d):
        j = _oracle_axis_fluxes(c_fields, temp, c_tot, grid, spec, a)
        out = out - dt * div_faces(j, a + 1, grid.spacing[a])
    return out


@dataclass
class Diagnostics:
    """Per-step invariant report accumulated over a run."""

    n_species: int
    t: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    mass: list = field(default_factory=list)  # per step, length n
    ctot_min: list = field(default_factory=list)
    ctot_max: list = field(default_factory=list)
    temp_min: list = field(default_factory=list)
    temp_max: list = field(default_factory=list)
    min_re_eig: list = field(default_factory=list)
    flux_residual: list = field(default_factory=list)
    closure_residual: list = field(default_factory=list)
    neg_events: list = field(default_factory=list)

    def append(self, t, dt, mass, ctot_min, ctot_max, temp_min, temp_max,
               min_re_eig, flux_residual, closure_residual, neg_events) -> None:
        if self.t and t <= self.t[-1]:
            raise ValueError("diagnostic times must strictly increase")
        self.t.append(float(t))
        self.dt.append(float(dt))
        self.mass.append([float(v) for v in mass])
        self.ctot_min.append(float(ctot_min))
        self.ctot_max.append(float(ctot_max))
        self.temp_min.append(float(temp_min))
        self.temp_max.append(float(temp_max))
        self.min_re_eig.append(float(min_re_eig))
        self.flux_residual.append(float(flux_residual))
        self.closure_residual.append(float(closure_residual))
        self.neg_events.append(int(neg_events))

    def header(self) -> list[str]:
        return (
            ["t", "dt"]
            + [f"mass_{i + 1}" for i in range(self.n_species)]
            + [
                "ctot_min",
                "ctot_max",
                "T_min",
                "T_max",
                "min_re_eig_TB",
                "flux_residual",
                "closure_residual",
                "neg_events",
            ]
        )

    def rows(self):
        for i in range(len(self.t)):
            yield (
                [self.t[i], self.dt[i]]
                + self.mass[i]
                + [
                    self.ctot_min[i],
                    self.ctot_max[i],
                    self.temp_min[i],
                    self.temp_max[i],
                    self.min_re_eig[i],
                    self.flux_residual[i],
                    self.closure_residual[i],
                    self.neg_events[i],
                ]
            )


def species_masses(state: FieldState, grid: Grid) -> np.ndarray:
    """Discrete integral of every species field, the last one recovered."""
    return state.species().reshape(state.m + 1, -1).sum(axis=1) * grid.cell_volume


def mass_drift(states, grid: Grid) -> np.ndarray:
    """Worst relative drift of each species mass over a state history."""
    masses = np.stack([species_masses(s, grid) for s in states], axis=0)
    ref = masses[0]
    denom = np.where(np.abs(ref) > 0.0, np.abs(ref), 1.0)
    return np.abs(masses - ref[None]).max(axis=0) / denom


def max_principle_report(states, spec: MixtureSpec) -> tuple[bool, float]:
    """Worst excursion of the total concentration outside its bounds."""
    b = spec.bounds
    worst = 0.0
    for s in states:
        worst = max(worst, float(b.c_min - s.c_tot.min()), float(s.c_tot.max() - b.c_max))
    worst = max(worst, 0.0)
    return worst <= 1e-12 * max(1.0, b.c_max), worst


def negativity_events(state: FieldState) -> int:
    """Cells where any species, including the recovered one, dips below -tol."""
    return int((state.species() < -TOL_NEG).sum())


def ellipticity_monitor(state: FieldState, spec: MixtureSpec) -> float:
    """Smallest real part over cells of the temperature-weighted mobility spectrum."""
    m = state.m
    flat_cp = state.c_prime.reshape(m, -1).T
    f0 = _reduced_friction_many(flat_cp, state.c_tot.ravel(), spec)
    mob = _invert_many(f0)
    eig = np.linalg.eigvals(state.T.ravel()[:, None, None] * mob)
    return float(eig.real.min())


def flux_gradient_residual(
    fluxes: FluxSet, state: FieldState, spec: MixtureSpec, grid: Grid
) -> tuple[float, float]:
    """Scaled residual of the flux-gradient relations and of the closure.

    The relation is assembled independently of the flux producer: gradients
    of the concentration-temperature products on the left, the friction
    matrix at face-mean concentrations applied to the fluxes on the right.
    """
    n = spec.n
    c_fields = state.species()
    worst, scale = 0.0, 1e-300
    closure_worst, closure_scale = 0.0, 1e-300
    for a in range(grid.d):
        h = grid.spacing[a]
        inner = _slc(grid.d, a, slice(1, -1))
        d_ct = face_grad(c_fields * state.T[None], a + 1, h)[(slice(None),) + inner]
        c_face = face_mean(c_fields, a + 1)[(slice(None),) + inner]
        n_f = int(np.prod(c_face.shape[1:]))
        fric = _friction_many(c_face.reshape(n, n_f).T, spec.K)
        j = fluxes.species_flux(a)[(slice(None),) + inner]
        fj = np.einsum("fij,jf->if", fric, j.reshape(n, n_f)).reshape(d_ct.shape)
        worst = max(worst, float(np.abs(fj - d_ct).max(initial=0.0)))
        scale = max(scale, float(np.abs(d_ct).max(initial=0.0)))
        grad_ct = face_grad(state.c_tot, a, h)
        resid = fluxes.species_flux(a).sum(axis=0) + spec.alpha * grad_ct
        closure_worst = max(closure_worst, float(np.abs(resid).max(initial=0.0)))
        closure_scale = max(
            closure_scale,
            float(np.abs(fluxes.species_flux(a)).max(initial=0.0)),
            float(np.abs(spec.alpha * grad_ct).max(initial=0.0)),
        )
    return worst / scale, closure_worst / closure_scale


@dataclass
class ConvergenceTable:
    """(dx, dt, error) rows sorted by decreasing dx plus observed orders."""

    rows: list[tuple[float, float, float]]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: -r[0])

    @property
    def orders(self) -> list[float]:
        out = []
        for (dx0, _, e0), (dx1, _, e1) in zip(self.rows, self.rows[1:]):
            if e0 <= 0.0 or e1 <= 0.0:
                out.append(float("nan"))
            else:
                out.append(float(np.log(e0 / e1) / np.log(dx0 / dx1)))
        return out

    def header(self) -> list[str]:
        return ["dx", "dt", "error", "observed_order"]

    def csv_rows(self):
        orders = [float("nan")] + self.orders
        for (dx, dt, err), order in zip(self.rows, orders):
            yield [dx, dt, err, order]


def convergence_order(rows) -> ConvergenceTable:
    """Wrap (dx, dt, error) samples into a table with observed orders."""
    return ConvergenceTable(rows=[tuple(map(float, r)) for r in rows])


# ----------------------------------------------------------------------------
# Verification batteries (used by the CLI `verify` command and acceptance).


@dataclass
class SuiteReport:
    name: str
    passed: bool
    lines: list[str]


def _r(value) -> str:
    return repr(float(value))


def _sample_admissible(rng: np.random.Generator, n: int, bounds: Bounds):
    """Random friction table and strictly positive admissible concentration."""
    raw = rng.uniform(0.3, 4.0, size=(n, n))
    table = np.triu(raw, k=1)
    table = table + table.T
    spec = validate_mixture(
        MixtureSpec(n=n, K=table, alpha=1.0, bounds=bounds)
    )
    weights = rng.uniform(0.05, 1.0, size=n)
    c_tot = rng.uniform(bounds.c_min, bounds.c_max)
    c = weights / weights.sum() * c_tot
    return spec, c


def spectra_suite(seed: int = 0, samples: int = 1000) -> SuiteReport:
    """Eigenvalue inclusions of the friction family over random samples."""
    rng = np.random.default_rng(seed)
    bounds = Bounds(c_min=0.5, c_max=2.0, T_min=0.5, T_max=2.0)
    sizes = (2, 3, 4, 6)
    fails = 0
    worst = {"friction": 0.0, "reduced": 0.0, "mobility": 0.0}
    zero_count_bad = 0
    for i in range(samples):
        n = sizes[i % len(sizes)]
        spec, c = _sample_admissible(rng, n, bounds)
        delta, eta = spectral_bounds(spec)
        tol = 1e-8 * eta
        rep_f = eigen_check(
            -friction_matrix(c, spec), delta, eta, tol, include_zero=True, tag="-F"
        )
        if not rep_f.passed:
            fails += 1
        if rep_f.n_near_zero != 1:
            zero_count_bad += 1
        worst["friction"] = max(worst["friction"], rep_f.worst_margin)
        f0 = reduced_friction_matrix(c[: n - 1], float(c.sum()), spec)
        rep_r = eigen_check(f0, delta, eta, tol, tag="F0")
        if not rep_r.passed:
            fails += 1
        worst["reduced"] = max(worst["reduced"], rep_r.worst_margin)
        mob = np.linalg.inv(f0)
        rep_b = eigen_check(mob, 1.0 / eta, 1.0 / delta, 1e-8 / delta, tag="B")
        if not rep_b.passed:
            fails += 1
        worst["mobility"] = max(worst["mobility"], rep_b.worst_margin)
    passed = fails == 0 and zero_count_bad == 0
    lines = [
        f"samples,{samples}",
        f"inclusion_failures,{fails}",
        f"near_zero_miscounts,{zero_count_bad}",
        f"worst_margin_friction,{_r(worst['friction'])}",
        f"worst_margin_reduced,{_r(worst['reduced'])}",
        f"worst_margin_mobility,{_r(worst['mobility'])}",
    ]
    return SuiteReport(name="spectra", passed=passed, lines=lines)


def conjugation_suite(seed: int = 0, samples: int = 1000) -> SuiteReport:
    """Kernel and block-structure identities over random samples."""
    rng = np.random.default_rng(seed)
    bounds = Bounds(c_min=0.5, c_max=2.0, T_min=0.5, T_max=2.0)
    sizes = (2, 3, 4, 6)
    worst_kernel, worst_block, fails = 0.0, 0.0, 0
    for i in range(samples):
        n = sizes[i % len(sizes)]
        spec, c = _sample_admissible(rng, n, bounds)
        fric = friction_matrix(c, spec)
        scale = max(np.abs(fric).max(), 1e-300)
        worst_kernel = max(worst_kernel, float(np.abs(fric.sum(axis=0)).max()) / scale)
        try:
            topleft, _ = conjugation_blocks(fric, c[: n - 1], float(c.sum()), spec)
        except Exception:
            fails += 1
            continue
        f0 = reduced_friction_matrix(c[: n - 1], float(c.sum()), spec)
        worst_block = max(
            worst_block,
            float(np.abs(topleft + f0).max()) / max(np.abs(f0).max(), 1e-300),
        )
    passed = fails == 0 and worst_kernel <= 1e-14 and worst_block <= 1e-12
    lines = [
        f"samples,{samples}",
        f"structure_failures,{fails}",
        f"worst_kernel_relative,{_r(worst_kernel)}",
        f"worst_block_relative,{_r(worst_block)}",
    ]
    return SuiteReport(name="conjugation", passed=passed, lines=lines)


def equivalence_scenario() -> tuple[MixtureSpec, dict]:
    """Three-species scenario with unequal coefficients on a uniform
    background, the regime where the flux-gradient relations are exactly
    kernel-compatible at every face."""
    spec = validate_mixture(
        MixtureSpec(
            n=3,
            K=np.array([[0.0, 2.0, 4.0], [0.0, 0.0, 6.0], [0.0, 0.0, 0.0]]),
            alpha=0.8,
            bounds=Bounds(c_min=0.5, c_max=1.5, T_min=0.5, T_max=2.0),
        )
    )
    profile = {
        "c1": (0.30, 0.10, 1),  # mean, amplitude, mode
        "c2": (0.25, 0.05, 2),
        "c_tot": 1.0,
        "T": 1.0,
    }
    return spec, profile


def _equivalence_state(spec: MixtureSpec, profile: dict, cells: int):
    grid = Grid(d=1, cells=(cells,), lengths=(1.0,))
    x = grid.centers(0)
    m1, a1, k1 = profile["c1"]
    m2, a2, k2 = profile["c2"]
    c1 = m1 + a1 * np.cos(k1 * np.pi * x)
    c2 = m2 + a2 * np.cos(k2 * np.pi * x)
    state = FieldState(
        t=0.0,
        c_prime=np.stack([c1, c2]),
        c_tot=np.full(cells, profile["c_tot"]),
        T=np.full(cells, profile["T"]),
    )
    return grid, state


def equivalence_study(
    levels: int = 3,
    base_cells: int = 64,
    t_end: float = 0.05,
    track_ellipticity: bool = False,
) -> tuple[ConvergenceTable, float, float | None]:
    """Distance between the reduced stepper and the full-system oracle under
    joint space-time refinement, plus the worst closure residual seen and,
    optionally, the smallest temperature-weighted mobility eigenvalue."""
    spec, profile = equivalence_scenario()
    grid0, state0 = _equivalence_state(spec, profile, base_cells)
    dt0_limit = stable_dt(state0, spec, grid0) / 4.0
    n_steps0 = int(np.ceil(t_end / dt0_limit))
    rows = []
    worst_closure = 0.0
    min_ell = np.inf if track_ellipticity else None
    for lev in range(levels):
        cells = base_cells * 2**lev
        n_steps = n_steps0 * 2**lev
        dt = t_end / n_steps
        grid, state = _equivalence_state(spec, profile, cells)
        c_oracle = state.species().copy()
        s_red = state
        for _ in range(n_steps):
            fx = reconstruct_fluxes(s_red, spec, grid)
            worst_closure = max(worst_closure, fx.closure_residual)
            s_red = reduced_step_explicit(s_red, spec, grid, dt)
            c_oracle = full_system_step_oracle(
                c_oracle, state.T, state.c_tot, dt, grid, spec, check_cfl=False
            )
            if track_ellipticity:
                min_ell = min(min_ell, ellipticity_monitor(s_red, spec))
        gap = float(np.abs(s_red.species() - c_oracle).max())
        rows.append((grid.spacing[0], dt, gap))
    return convergence_order(rows), worst_closure, min_ell


def equivalence_suite(levels: int = 3, base_cells: int = 64) -> SuiteReport:
    table, worst_closure, _ = equivalence_study(levels=levels, base_cells=base_cells)
    ratios = [
        e0 / e1 for (_, _, e0), (_, _, e1) in zip(table.rows, table.rows[1:])
    ]
    passed = all(r >= 3.5 for r in ratios) and worst_closure <= 1e-12
    lines = ["dx,dt,gap"] + [
        f"{_r(dx)},{_r(dt)},{_r(err)}" for dx, dt, err in table.rows
    ] + [
        f"contraction_ratios,{'/'.join(f'{r:.2f}' for r in ratios)}",
        f"worst_closure_residual,{_r(worst_closure)}",
    ]
    return SuiteReport(name="equivalence", passed=passed, lines=lines)


def heat_order_study(
    levels=(32, 64, 128), t_end: float = 0.1, alpha: float = 1.0, eps: float = 0.05
) -> ConvergenceTable:
    """Amplitude error of the decaying cosine eigenmode of the heat equation."""
    from .decoupled import heat_cfl_limit

    rows = []
    for cells in levels:
        grid = Grid(d=1, cells=(cells,), lengths=(1.0,))
        x = grid.centers(0)
        c = 1.0 + eps * np.cos(np.pi * x)
        dt = 0.45 * heat_cfl_limit(alpha, grid) / 4.0
        n_steps = int(np.ceil(t_end / dt))
        dt = t_end / n_steps
        for _ in range(n_steps):
            c = heat_step(c, dt, alpha, grid)
        amp = 2.0 * float(np.mean((c - 1.0) * np.cos(np.pi * x)))
        exact = eps * np.exp(-alpha * np.pi**2 * t_end)
        rows.append((grid.spacing[0], dt, abs(amp - exact) / exact))
    return convergence_order(rows)


def temperature_gap_study(
    levels=(32, 64, 128, 256), t_end: float = 0.25, alpha: float = 1.0
) -> ConvergenceTable:
    """Sup-norm gap between the upwind and characteristics temperature
    solvers on the cosine scenario under joint refinement."""
    from .decoupled import (
        CtotHistory,
        advection_velocity,
        dt_log_ctot,
        temperature_characteristics,
        temperature_step_upwind,
    )

    rows = []
    for cells in levels:
        grid = Grid(d=1, cells=(cells,), lengths=(1.0,))
        x = grid.centers(0)
        c = 1.0 + 0.05 * np.cos(np.pi * x)
        temp_in = 1.0 + 0.2 * np.cos(np.pi * x)
        dt = grid.spacing[0]
        n_steps = int(round(t_end / dt))
        dt = t_end / n_steps
        history = CtotHistory(grid, alpha)
        history.append(0.0, c)
        temp = temp_in.copy()
        t = 0.0
        for _ in range(n_steps):
            vel = advection_velocity(c, alpha, grid)
            rate = dt_log_ctot(c, alpha, grid)
            temp = temperature_step_upwind(temp, vel, rate, dt, grid)
            c = heat_step(c, dt, alpha, grid, scheme="implicit")
            t += dt
            history.append(t, c)
        temp_ch = temperature_characteristics(temp_in, history, t_end)
        rows.append((grid.spacing[0], dt, float(np.abs(temp - temp_ch).max())))
    return convergence_order(rows)


def convergence_suite() -> SuiteReport:
    heat = heat_order_study()
    temp = temperature_gap_study()
    heat_ok = all(o >= 1.9 for o in heat.orders)
    temp_ok = all(o >= 0.9 for o in temp.orders)
    lines = (
        ["study,dx,dt,error,observed_order"]
        + [
            f"heat,{_r(dx)},{_r(dt)},{_r(err)},{_r(o)}"
            for (dx, dt, err), o in zip(heat.rows, [float("nan")] + heat.orders)
        ]
        + [
            f"temperature,{_r(dx)},{_r(dt)},{_r(err)},{_r(o)}"
            for (dx, dt, err), o in zip(temp.rows, [float("nan")] + temp.orders)
        ]
    )
    return SuiteReport(name="convergence", passed=heat_ok and temp_ok, lines=lines)
