"""Finite-volume stencil helpers on uniform grids with Neumann mirror ghosts.

Face arrays include the two boundary faces of each axis, so a field with
``cells[a]`` entries along axis ``a`` maps to ``cells[a] + 1`` face values.
Boundary faces carry zero normal gradient (mirror ghosts) by construction.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .model import Grid


def _slc(ndim: int, axis: int, s: slice) -> tuple:
    out = [slice(None)] * ndim
    out[axis] = s
    return tuple(out)


def face_mean(field: np.ndarray, axis: int) -> np.ndarray:
    """Arithmetic face means; boundary faces take the adjacent cell value."""
    lo = field[_slc(field.ndim, axis, slice(0, 1))]
    hi = field[_slc(field.ndim, axis, slice(-1, None))]
    inner = 0.5 * (
        field[_slc(field.ndim, axis, slice(1, None))]
        + field[_slc(field.ndim, axis, slice(0, -1))]
    )
    return np.concatenate([lo, inner, hi], axis=axis)


def face_grad(field: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Normal gradient at faces; exactly zero on the boundary faces."""
    inner = np.diff(field, axis=axis) / dx
    zshape = list(field.shape)
    zshape[axis] = 1
    z = np.zeros(zshape)
    return np.concatenate([z, inner, z], axis=axis)


def div_faces(flux: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Divergence contribution of one axis from its face values."""
    return np.diff(flux, axis=axis) / dx


def laplacian(field: np.ndarray, grid: Grid, axis_offset: int = 0) -> np.ndarray:
    """Neumann Laplacian; ``axis_offset`` skips leading non-grid axes."""
    out = np.zeros_like(field)
    for a in range(grid.d):
        h = grid.spacing[a]
        out += div_faces(face_grad(field, a + axis_offset, h), a + axis_offset, h)
    return out


@lru_cache(maxsize=16)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse Neumann Laplacian over flattened (C-order) cell indices."""
    n_cells = int(np.prod(grid.cells))
    idx = np.arange(n_cells).reshape(grid.cells)
    rows, cols, vals = [], [], []
    for a in range(grid.d):
        h = grid.spacing[a]
        left = idx[_slc(grid.d, a, slice(0, -1))].ravel()
        right = idx[_slc(grid.d, a, slice(1, None))].ravel()
        w = 1.0 / (h * h)
        rows.extend([left, right, left, right])
        cols.extend([right, left, left, right])
        vals.extend(
            [
                np.full(left.size, w),
                np.full(left.size, w),
                np.full(left.size, -w),
                np.full(left.size, -w),
            ]
        )
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_cells, n_cells)).tocsr()


def interp_cell_field(field: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a cell-centered field at arbitrary points.

    Points beyond the outermost cell centers use the flat (zero-gradient)
    extension implied by mirror ghosts. ``points`` has shape (N, d).
    """
    # Per-axis lower index and fraction, then gather the 2^d corners.
    los, fracs = [], []
    for a in range(grid.d):
        h = grid.spacing[a]
        u = points[:, a] / h - 0.5  # fractional cell-center coordinate
        u = np.clip(u, 0.0, grid.cells[a] - 1.0)
        lo = np.floor(u).astype(np.intp)
        lo = np.minimum(lo, grid.cells[a] - 2) if grid.cells[a] > 1 else lo * 0
        los.append(lo)
        fracs.append(u - lo)
    if grid.d == 1:
        lo, f = los[0], fracs[0]
        return field[lo] * (1.0 - f) + field[lo + 1] * f
    lox, fx = los[0], fracs[0]
    loy, fy = los[1], fracs[1]
    v00 = field[lox, loy]
    v10 = field[lox + 1, loy]
    v01 = field[lox, loy + 1]
    v11 = field[lox + 1, loy + 1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )


def interp_face_normal(
    face_field: np.ndarray, grid: Grid, axis: int, points: np.ndarray
) -> np.ndarray:
    """Interpolate the axis-``axis`` face-normal component at arbitrary points.

    Along the face axis the samples live at face coordinates 0, h, ..., L
    (piecewise linear, exactly zero at the walls); transverse axes use the
    cell-center interpolation with flat extension.
    """
    h = grid.spacing[axis]
    u = np.clip(points[:, axis] / h, 0.0, float(grid.cells[axis]))
    lo = np.minimum(np.floor(u).astype(np.intp), grid.cells[axis] - 1)
    f = u - lo
    if grid.d == 1:
        return face_field[lo] * (1.0 - f) + face_field[lo + 1] * f
    other = 1 - axis
    ho = grid.spacing[other]
    v = np.clip(points[:, other] / ho - 0.5, 0.0, grid.cells[other] - 1.0)
    lo2 = np.minimum(np.floor(v).astype(np.intp), grid.cells[other] - 2)
    g = v - lo2
    if axis == 0:
        v00 = face_field[lo, lo2]
        v10 = face_field[lo + 1, lo2]
        v01 = face_field[lo, lo2 + 1]
        v11 = face_field[lo + 1, lo2 + 1]
    else:
        v00 = face_field[lo2, lo]
        v10 = face_field[lo2, lo + 1]
        v01 = face_field[lo2 + 1, lo]
        v11 = face_field[lo2 + 1, lo + 1]
    return (
        v00 * (1 - f) * (1 - g)
        + v10 * f * (1 - g)
        + v01 * (1 - f) * g
        + v11 * f * g
    )
