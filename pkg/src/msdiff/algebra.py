"""Friction-matrix algebra: assembly, spectra, reduction and constrained solves.

All operations are pure functions of their inputs and safe to call from
per-cell parallel loops. The ``*_many`` variants run the same algebra on
stacked inputs for per-face vectorization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BlockStructureViolation,
    DimensionMismatch,
    EigenFailure,
    IncompatibleRHS,
    LinearSolveFailure,
    NumericallySingular,
)
from .model import MixtureSpec

#: Relative slack for the compatibility of constrained right-hand sides.
TOL_COMPAT = 1e-10
#: Relative residual allowed for the constrained flux solve.
TOL_SOLVE = 1e-10
#: Relative residual allowed when inverting the reduced friction matrix.
TOL_INVERT = 1e-12


def friction_matrix(c: np.ndarray, spec: MixtureSpec) -> np.ndarray:
    """Assemble the n-by-n friction matrix at one concentration vector.

    Off-diagonal entries are ``K[i, j] * c[i]``; each diagonal entry balances
    its column so the transpose kernel is spanned by the all-ones vector.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (spec.n,):
        raise DimensionMismatch(f"expected concentration vector of length {spec.n}")
    return _friction_many(c[None, :], spec.K)[0]


def _friction_many(cs: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Stacked friction matrices for ``cs`` of shape (N, n)."""
    fric = table[None, :, :] * cs[:, :, None]  # F_ij = k_ij c_i for j != i
    diag = -np.einsum("ir,Nr->Ni", table, cs)  # -sum_r k_ir c_r
    idx = np.arange(table.shape[0])
    fric[:, idx, idx] = diag
    return fric


def reduced_friction_matrix(
    c_prime: np.ndarray, c_tot: float, spec: MixtureSpec
) -> np.ndarray:
    """Assemble the (n-1)-square matrix governing the reduced flux relation."""
    c_prime = np.asarray(c_prime, dtype=float)
    if c_prime.shape != (spec.n - 1,):
        raise DimensionMismatch(f"expected reduced vector of length {spec.n - 1}")
    return _reduced_friction_many(c_prime[None, :], np.array([float(c_tot)]), spec)[0]


def _reduced_friction_many(
    cps: np.ndarray, ctots: np.ndarray, spec: MixtureSpec
) -> np.ndarray:
    """Stacked reduced matrices for ``cps`` (N, n-1) and ``ctots`` (N,)."""
    m = spec.n - 1
    diff = spec.K[:m, :m] - spec.k_last[:, None]  # k_ij - k_in, zero-diag row shift
    out = -diff[None, :, :] * cps[:, :, None]  # off-diagonal -(k_ij - k_in) c_i
    # Row sums over j != i; the diagonal of ``diff`` is -k_in, remove its term.
    rowsum = np.einsum("ij,Nj->Ni", diff, cps) + spec.k_last[None, :] * cps
    idx = np.arange(m)
    out[:, idx, idx] = rowsum + ctots[:, None] * spec.k_last[None, :]
    return out


def invert_reduced_friction(f0: np.ndarray) -> np.ndarray:
    """Dense inverse of the reduced friction matrix with a residual guard."""
    f0 = np.asarray(f0, dtype=float)
    try:
        inv = np.linalg.inv(f0)
    except np.linalg.LinAlgError as exc:
        raise NumericallySingular(f"reduced friction matrix not invertible: {exc}")
    resid = np.abs(f0 @ inv - np.eye(f0.shape[0])).max()
    cond_scale = max(
        1.0, np.abs(f0).sum(axis=1).max() * np.abs(inv).sum(axis=1).max()
    )
    if not np.isfinite(resid) or resid > TOL_INVERT * cond_scale:
        raise NumericallySingular(
            f"inverse residual {resid:.3e} exceeds {TOL_INVERT:.1e}*cond; "
            "state is likely outside the admissible set"
        )
    return inv


def _invert_many(f0s: np.ndarray) -> np.ndarray:
    try:
        out = np.linalg.inv(f0s)
    except np.linalg.LinAlgError as exc:
        raise NumericallySingular(f"stacked inversion failed: {exc}")
    if not np.all(np.isfinite(out)):
        raise NumericallySingular("stacked inversion produced non-finite entries")
    return out


def scaled_concentration(c_prime: np.ndarray, spec: MixtureSpec) -> np.ndarray:
    """Reduced concentrations scaled by the friction against the last species."""
    c_prime = np.asarray(c_prime, dtype=float)
    if c_prime.shape[0] != spec.n - 1:
        raise DimensionMismatch(f"expected {spec.n - 1} reduced components")
    shape = (spec.n - 1,) + (1,) * (c_prime.ndim - 1)
    return spec.k_last.reshape(shape) * c_prime


def spectral_bounds(spec: MixtureSpec) -> tuple[float, float]:
    """Lower/upper bounds (delta, eta) framing the friction spectra.

    delta = c_min * min off-diagonal coefficient; eta = 2 * c_max * sum of
    all off-diagonal coefficients (ordered pairs, each unordered pair twice).
    """
    off = spec.K[~np.eye(spec.n, dtype=bool)]
    delta = spec.bounds.c_min * float(off.min())
    eta = 2.0 * spec.bounds.c_max * float(off.sum())
    return delta, eta


@dataclass(frozen=True)
class SpectralReport:
    """Outcome of one eigenvalue-inclusion check."""

    tag: str
    eigenvalues: np.ndarray
    lo: float
    hi: float
    include_zero: bool
    tol: float
    passed: bool
    worst_margin: float
    n_near_zero: int


def eigen_check(
    mat: np.ndarray,
    lo: float,
    hi: float,
    tol: float,
    include_zero: bool = False,
    tag: str = "",
) -> SpectralReport:
    """Full dense eigendecomposition checked against [lo, hi] (plus {0}).

    An eigenvalue passes when its real part lies in [lo - tol, hi + tol] and
    its imaginary part is below tol, or, with ``include_zero``, when its
    modulus is below tol. ``worst_margin`` is the largest distance by which
    any eigenvalue leaves the target set (0 when the check passes).
    """
    mat = np.asarray(mat, dtype=float)
    try:
        eig = np.linalg.eigvals(mat)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigensolver did not converge: {exc}")
    near_zero = np.abs(eig) <= tol
    re, im = eig.real, np.abs(eig.imag)
    dist = np.maximum(np.maximum(lo - re, re - hi), 0.0)
    dist = np.maximum(dist, im)
    if include_zero:
        dist = np.where(near_zero, 0.0, dist)
    worst = float(dist.max(initial=0.0))
    return SpectralReport(
        tag=tag,
        eigenvalues=eig,
        lo=float(lo),
        hi=float(hi),
        include_zero=include_zero,
        tol=float(tol),
        passed=bool(worst <= tol),
        worst_margin=worst,
        n_near_zero=int(near_zero.sum()),
    )


def constrained_flux_solve(rhs: np.ndarray, fric: np.ndarray) -> np.ndarray:
    """Solve ``fric @ J = rhs`` with every column of J orthogonal to ones.

    The right-hand side columns must be orthogonal to the all-ones vector up
    to ``TOL_COMPAT`` (relative); the residual round-off component is
    projected out before the deflated (n-1)-dimensional solve, which fixes
    the one-dimensional kernel ambiguity.
    """
    rhs = np.asarray(rhs, dtype=float)
    fric = np.asarray(fric, dtype=float)
    n = fric.shape[0]
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    if rhs.shape[0] != n:
        raise DimensionMismatch(f"rhs has {rhs.shape[0]} rows, friction matrix is {n}x{n}")
    scale = float(np.abs(rhs).max(initial=0.0))
    if scale == 0.0:
        out = np.zeros_like(rhs)
        return out[:, 0] if squeeze else out
    defect = rhs.sum(axis=0) / np.sqrt(n)  # component along the unit ones vector
    if np.abs(defect).max() > TOL_COMPAT * scale:
        raise IncompatibleRHS(
            f"rhs column has ones-component {np.abs(defect).max():.3e} "
            f"(allowed {TOL_COMPAT * scale:.3e})"
        )
    sol = _constrained_solve_many(rhs[None], fric[None])[0]
    resid = np.abs(fric @ sol - rhs).max()
    if resid > TOL_SOLVE * scale:
        raise LinearSolveFailure(
            f"constrained solve residual {resid:.3e} exceeds tolerance"
        )
    return sol[:, 0] if squeeze else sol


def _constrained_solve_many(rhs: np.ndarray, fric: np.ndarray) -> np.ndarray:
    """Stacked constrained solves: rhs (N, n, d), fric (N, n, n) -> (N, n, d).

    Deflates through the similarity that eliminates the last species: the
    top-left block ``F[:m, :m] - F[:m, n-1]`` is minus the reduced friction
    matrix, and the last flux row is fixed by the zero-column-sum constraint.
    """
    n = fric.shape[-1]
    m = n - 1
    proj = rhs - rhs.sum(axis=1, keepdims=True) / n
    top = fric[:, :m, :m] - fric[:, :m, m:]
    try:
        j_prime = np.linalg.solve(top, proj[:, :m, :])
    except np.linalg.LinAlgError as exc:
        raise NumericallySingular(f"deflated constrained solve failed: {exc}")
    j_last = -j_prime.sum(axis=1, keepdims=True)
    return np.concatenate([j_prime, j_last], axis=1)


def conjugation_blocks(
    fric: np.ndarray, c_prime: np.ndarray, c_tot: float, spec: MixtureSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate the friction matrix by the species-elimination similarity.

    Returns the top-left (n-1)-square block and the top-right column of the
    conjugated matrix and verifies the expected structure: zero bottom row,
    top-left equal to minus the reduced friction matrix and top-right equal
    to the scaled concentration vector.
    """
    fric = np.asarray(fric, dtype=float)
    n = spec.n
    if fric.shape != (n, n):
        raise DimensionMismatch(f"friction matrix must be {n}x{n}")
    x = np.eye(n)
    x[n - 1, : n - 1] = -1.0
    x_inv = np.eye(n)
    x_inv[n - 1, : n - 1] = 1.0
    conj = x_inv @ fric @ x
    topleft = conj[: n - 1, : n - 1]
    topright = conj[: n - 1, n - 1]
    scale = max(np.abs(fric).max(), 1e-300)
    bottom = np.abs(conj[n - 1, :]).max()
    if bottom > 1e-13 * scale:
        raise BlockStructureViolation(
            f"bottom row of conjugated matrix is {bottom:.3e}, "
            f"expected zero to 1e-13*|F|"
        )
    f0 = reduced_friction_matrix(c_prime, c_tot, spec)
    f0_scale = max(np.abs(f0).max(), 1e-300)
    if np.abs(topleft + f0).max() > 1e-12 * f0_scale:
        raise BlockStructureViolation(
            "top-left block does not match minus the reduced friction matrix"
        )
    if np.abs(topright - scaled_concentration(np.asarray(c_prime, float), spec)).max() > 1e-12 * max(
        np.abs(topright).max(), 1e-300
    ):
        raise BlockStructureViolation(
            "top-right column does not match the scaled concentration vector"
        )
    return topleft, topright
