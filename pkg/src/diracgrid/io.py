"""Operator and field import/export.

Operators travel as Matrix Market files written with 17 significant digits,
which round-trips IEEE doubles exactly.  Fields travel as CSV with columns
(grid index, fiber index, re, im).
"""

from __future__ import annotations

import csv

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ArgumentError
from .exterior import FiberLayout
from .gridops import Field, GridSpec, LinearOperator

MM_PRECISION = 17


def export_matrix_market(matrix, path):
    """Write a (sparse or dense) complex matrix as a Matrix Market file."""
    if isinstance(matrix, LinearOperator):
        matrix = matrix.matrix
    if not sp.issparse(matrix):
        matrix = sp.coo_matrix(np.asarray(matrix, dtype=complex))
    scipy.io.mmwrite(str(path), matrix.tocoo(), field="complex",
                     precision=MM_PRECISION)


def _locate_parse_error(path):
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if lineno == 1:
                if not line.startswith("%%MatrixMarket"):
                    return lineno, "missing MatrixMarket banner"
                continue
            if line.startswith("%") or not line.strip():
                continue
            for token in line.split():
                try:
                    float(token)
                except ValueError:
                    return lineno, f"unparsable token {token!r}"
    return None, None


def import_matrix_market(path) -> sp.csr_matrix:
    """Read a Matrix Market file; malformed input reports the offending line."""
    try:
        matrix = scipy.io.mmread(str(path))
    except Exception as exc:
        lineno, detail = _locate_parse_error(path)
        where = f" at line {lineno} ({detail})" if lineno else ""
        raise ArgumentError(f"malformed Matrix Market file {path}{where}: {exc}") from exc
    if sp.issparse(matrix):
        return matrix.tocsr().astype(complex)
    return sp.csr_matrix(np.atleast_2d(matrix).astype(complex))


def export_field_csv(field: Field, path):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["grid_index", "fiber_index", "re", "im"])
        for p in range(field.grid.npoints):
            for s in range(field.layout.fiber_dim):
                v = field.values[p, s]
                writer.writerow([p, s, f"{v.real:.17g}", f"{v.imag:.17g}"])


def import_field_csv(path, grid: GridSpec, layout: FiberLayout) -> Field:
    values = np.zeros((grid.npoints, layout.fiber_dim), dtype=complex)
    seen = np.zeros((grid.npoints, layout.fiber_dim), dtype=bool)
    with open(path, "r", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != \
                ["grid_index", "fiber_index", "re", "im"]:
            raise ArgumentError(f"{path}: expected header grid_index,fiber_index,re,im")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                p, s = int(row[0]), int(row[1])
                values[p, s] = float(row[2]) + 1j * float(row[3])
                seen[p, s] = True
            except (ValueError, IndexError) as exc:
                raise ArgumentError(f"{path}: bad row at line {lineno}: {row}") from exc
    if not seen.all():
        raise ArgumentError(f"{path}: missing entries for some (point, fiber) pairs")
    return Field(grid, layout, values)


def matrix_field_from_csv(path, grid: GridSpec, fiber_dim: int) -> np.ndarray:
    """Read a pointwise matrix field stored as fiber_dim^2 columns per point.

    Rows are (grid_index, row, col, re, im); every entry must be present.
    """
    values = np.zeros((grid.npoints, fiber_dim, fiber_dim), dtype=complex)
    seen = np.zeros((grid.npoints, fiber_dim, fiber_dim), dtype=bool)
    with open(path, "r", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:5]] != \
                ["grid_index", "row", "col", "re", "im"]:
            raise ArgumentError(f"{path}: expected header grid_index,row,col,re,im")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                p, r, c = int(row[0]), int(row[1]), int(row[2])
                values[p, r, c] = float(row[3]) + 1j * float(row[4])
                seen[p, r, c] = True
            except (ValueError, IndexError) as exc:
                raise ArgumentError(f"{path}: bad row at line {lineno}: {row}") from exc
    if not seen.all():
        raise ArgumentError(f"{path}: missing matrix entries")
    return values


def matrix_field_to_csv(values: np.ndarray, path):
    values = np.asarray(values, dtype=complex)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["grid_index", "row", "col", "re", "im"])
        for p in range(values.shape[0]):
            for r in range(values.shape[1]):
                for c in range(values.shape[2]):
                    v = values[p, r, c]
                    writer.writerow([p, r, c, f"{v.real:.17g}", f"{v.imag:.17g}"])


def field_from_block_diagonal(matrix, npoints: int, fiber_dim: int) -> np.ndarray:
    """Extract the pointwise field of a block-diagonal multiplication matrix."""
    dense = matrix.todense() if sp.issparse(matrix) else np.asarray(matrix)
    dense = np.asarray(dense, dtype=complex)
    expected = npoints * fiber_dim
    if dense.shape != (expected, expected):
        raise ArgumentError(f"multiplier matrix must be {expected}x{expected}")
    out = np.zeros((npoints, fiber_dim, fiber_dim), dtype=complex)
    for p in range(npoints):
        sl = slice(p * fiber_dim, (p + 1) * fiber_dim)
        out[p] = dense[sl, sl]
    off = dense.copy()
    for p in range(npoints):
        sl = slice(p * fiber_dim, (p + 1) * fiber_dim)
        off[sl, sl] = 0.0
    if np.linalg.norm(off) > 1e-12 * max(np.linalg.norm(dense), 1.0):
        raise ArgumentError("matrix is not block diagonal per grid point")
    return out
