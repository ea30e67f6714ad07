"""Problem description: mixture coefficients, grid, fields and scenarios.

All types are immutable after construction (arrays are flagged read-only)
and safe to share between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AsymmetricTable,
    BadBounds,
    DimensionMismatch,
    NonPositiveCoefficient,
    ProfileOutOfBounds,
    ValidationError,
)

# Threshold separating round-off from genuine positivity loss in the
# recovered last species.
TOL_NEG = 1e-12


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=float))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Bounds:
    """Admissible ranges for the total concentration and temperature."""

    c_min: float
    c_max: float
    T_min: float
    T_max: float


@dataclass(frozen=True)
class MixtureSpec:
    """Species count, symmetric friction table, closure diffusivity, bounds.

    ``K`` has zero diagonal and strictly positive symmetric off-diagonal
    entries once validated; construct through :func:`validate_mixture`.
    """

    n: int
    K: np.ndarray
    alpha: float
    bounds: Bounds

    def __post_init__(self):
        object.__setattr__(self, "K", _freeze(self.K))

    @property
    def k_last(self) -> np.ndarray:
        """Friction coefficients against the last species, k_in for i < n."""
        return self.K[: self.n - 1, self.n - 1]


def validate_mixture(spec: MixtureSpec) -> MixtureSpec:
    """Return a validated copy of ``spec`` with a symmetrized, zero-diagonal table.

    The raw table may populate only the upper triangle (lower entries zero,
    NaN or omitted); a populated lower triangle must match the upper one
    exactly.
    """
    n = int(spec.n)
    if n < 2:
        raise BadBounds(f"species count must be >= 2, got {n}")
    raw = np.array(spec.K, dtype=float)
    if raw.shape != (n, n):
        raise DimensionMismatch(f"K must be {n}x{n}, got {raw.shape}")

    lower = raw[np.tril_indices(n, k=-1)]
    upper_only = bool(np.all(np.isnan(lower) | (lower == 0.0)))
    table = np.where(np.isnan(raw), 0.0, raw)
    if upper_only:
        table = np.triu(table, k=1)
        table = table + table.T
    else:
        for i in range(n):
            for j in range(i + 1, n):
                if table[i, j] != table[j, i]:
                    raise AsymmetricTable(
                        f"K[{i}][{j}]={table[i, j]!r} != K[{j}][{i}]={table[j, i]!r}"
                    )
    np.fill_diagonal(table, 0.0)

    off = table[~np.eye(n, dtype=bool)]
    if np.any(off <= 0.0) or not np.all(np.isfinite(off)):
        bad = int(np.argmax(off <= 0.0))
        raise NonPositiveCoefficient(
            f"off-diagonal friction coefficients must be strictly positive "
            f"(offending value {off[bad]!r})"
        )

    b = spec.bounds
    if not (0.0 < b.c_min <= b.c_max) or not math.isfinite(b.c_max):
        raise BadBounds(f"need 0 < c_min <= c_max, got [{b.c_min}, {b.c_max}]")
    if not (0.0 < b.T_min <= b.T_max) or not math.isfinite(b.T_max):
        raise BadBounds(f"need 0 < T_min <= T_max, got [{b.T_min}, {b.T_max}]")
    if not (spec.alpha > 0.0 and math.isfinite(spec.alpha)):
        raise BadBounds(f"alpha must be strictly positive, got {spec.alpha}")

    return MixtureSpec(n=n, K=table, alpha=float(spec.alpha), bounds=b)


@dataclass(frozen=True)
class Grid:
    """Uniform structured mesh on a rectangular box, d in {1, 2}.

    Boundary treatment everywhere in this package is homogeneous Neumann
    through mirror ghost cells.
    """

    d: int
    cells: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValidationError("grid.d", f"dimension must be 1 or 2, got {self.d}")
        if len(self.cells) != self.d or len(self.lengths) != self.d:
            raise ValidationError(
                "grid", f"cells/lengths must have {self.d} entries each"
            )
        if any(int(c) < 2 for c in self.cells):
            raise ValidationError("grid.cells", "need at least 2 cells per axis")
        if any(not (float(L) > 0.0) for L in self.lengths):
            raise ValidationError("grid.lengths", "domain extents must be positive")
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / c for L, c in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def meshes(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays broadcast to the full grid shape."""
        axes = [self.centers(a) for a in range(self.d)]
        if self.d == 1:
            return (axes[0],)
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass(frozen=True)
class FieldState:
    """Evolving unknowns: reduced concentrations, total concentration, temperature."""

    t: float
    c_prime: np.ndarray  # (n-1, *cells)
    c_tot: np.ndarray  # (*cells)
    T: np.ndarray  # (*cells)

    def __post_init__(self):
        object.__setattr__(self, "c_prime", _freeze(self.c_prime))
        object.__setattr__(self, "c_tot", _freeze(self.c_tot))
        object.__setattr__(self, "T", _freeze(self.T))

    @property
    def m(self) -> int:
        """Number of independently evolved species, n - 1."""
        return self.c_prime.shape[0]

    def species(self) -> np.ndarray:
        """All n concentration fields, the last one recovered from c_tot."""
        c_last = self.c_tot - self.c_prime.sum(axis=0)
        return np.concatenate([self.c_prime, c_last[None]], axis=0)


@dataclass(frozen=True)
class Preset:
    """Named initial-profile generator evaluated at cell centers."""

    kind: str
    params: tuple[tuple[str, float], ...]

    def __getitem__(self, key: str) -> float:
        for k, v in self.params:
            if k == key:
                return v
        raise KeyError(key)

    def get(self, key: str, default: float) -> float:
        for k, v in self.params:
            if k == key:
                return v
        return default

    def evaluate(self, grid: Grid) -> np.ndarray:
        xs = grid.meshes()
        if self.kind == "uniform":
            return np.full(grid.cells, self["value"])
        if self.kind == "cosine":
            mode = self.get("mode", 1.0)
            out = np.full(grid.cells, self["mean"])
            bump = np.ones(grid.cells)
            for a in range(grid.d):
                bump = bump * np.cos(mode * np.pi * xs[a] / grid.lengths[a])
            return out + self["amplitude"] * bump
        if self.kind == "gaussian":
            center = [self.get("center", 0.5 * grid.lengths[a]) for a in range(grid.d)]
            if grid.d == 2:
                center = [
                    self.get("center_x", center[0]),
                    self.get("center_y", center[1]),
                ]
            r2 = np.zeros(grid.cells)
            for a in range(grid.d):
                r2 = r2 + (xs[a] - center[a]) ** 2
            w = self["width"]
            return self["floor"] + (self["peak"] - self["floor"]) * np.exp(
                -r2 / (2.0 * w * w)
            )
        if self.kind == "step":
            return np.where(xs[0] < self["interface"], self["left"], self["right"])
        raise ValidationError("preset", f"unknown preset kind {self.kind!r}")


PRESET_PARAMS = {
    "uniform": ({"value"}, set()),
    "cosine": ({"mean", "amplitude"}, {"mode"}),
    "gaussian": ({"width", "floor", "peak"}, {"center", "center_x", "center_y"}),
    "step": ({"left", "right", "interface"}, set()),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Full simulation description: mixture, grid, initial data, schemes, output."""

    mixture: MixtureSpec
    grid: Grid
    species_presets: tuple[Preset, ...]
    temperature_preset: Preset
    t_end: float
    dt: Optional[float] = None
    cfl_safety: Optional[float] = None
    concentration_scheme: str = "explicit"
    temperature_scheme: str = "characteristics"
    out_dir: Optional[str] = None
    snapshot_times: tuple[float, ...] = ()
    every_n_steps: Optional[int] = None
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.species_presets) != self.mixture.n:
            raise ValidationError(
                "initial.species",
                f"need {self.mixture.n} species presets, got {len(self.species_presets)}",
            )
        if self.concentration_scheme not in ("explicit", "semi_implicit"):
            raise ValidationError(
                "schemes.concentration", f"unknown scheme {self.concentration_scheme!r}"
            )
        if self.temperature_scheme not in ("upwind", "characteristics"):
            raise ValidationError(
                "schemes.temperature", f"unknown scheme {self.temperature_scheme!r}"
            )
        if not (self.t_end > 0.0):
            raise ValidationError("time.t_end", "final time must be positive")
        if (self.dt is None) == (self.cfl_safety is None):
            raise ValidationError("time", "give exactly one of dt or cfl_safety")
        if self.dt is not None and not (self.dt > 0.0):
            raise ValidationError("time.dt", "time step must be positive")
        if self.cfl_safety is not None and not (0.0 < self.cfl_safety <= 1.0):
            raise ValidationError("time.cfl_safety", "safety factor must be in (0, 1]")


def build_initial_state(config: ScenarioConfig) -> FieldState:
    """Sample every preset at cell centers and assemble the t = 0 state.

    The total concentration is the sum over all n species presets; the state
    keeps the first n - 1 fields. Deterministic: identical configs produce
    bit-identical states.
    """
    grid, mix = config.grid, config.mixture
    fields = np.stack([p.evaluate(grid) for p in config.species_presets], axis=0)
    if np.any(fields < 0.0):
        i = int(np.argmax(np.min(fields.reshape(mix.n, -1), axis=1) < 0.0))
        raise ProfileOutOfBounds(f"species preset {i} produces negative concentrations")
    c_tot = fields.sum(axis=0)
    b = mix.bounds
    if np.any(c_tot < b.c_min) or np.any(c_tot > b.c_max):
        raise ProfileOutOfBounds(
            f"total concentration leaves [{b.c_min}, {b.c_max}]: "
            f"range [{c_tot.min()!r}, {c_tot.max()!r}]"
        )
    temp = config.temperature_preset.evaluate(grid)
    if np.any(temp < b.T_min) or np.any(temp > b.T_max):
        raise ProfileOutOfBounds(
            f"temperature preset leaves [{b.T_min}, {b.T_max}]: "
            f"range [{temp.min()!r}, {temp.max()!r}]"
        )
    return FieldState(t=0.0, c_prime=fields[: mix.n - 1], c_tot=c_tot, T=temp)
