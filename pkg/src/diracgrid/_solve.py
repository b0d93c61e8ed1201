"""Shifted linear solves with a residual contract.

Every resolvent in the package goes through :func:`shifted_solver`, which
factorizes ``a*I + b*M`` once and solves against many right-hand sides.
Dense factorization is used below ``DENSE_LIMIT`` unknowns, sparse LU above;
both must meet ``RESIDUAL_RTOL`` or the solve is rejected as a spectral
collision.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SpectralCollisionError

DENSE_LIMIT = 4096
RESIDUAL_RTOL = 1e-10


def as_dense(m):
    """Return a dense complex ndarray view of a matrix-like object."""
    if sp.issparse(m):
        return np.asarray(m.todense(), dtype=complex)
    return np.asarray(m, dtype=complex)


class ShiftedSolver:
    """Factorization of ``a*I + b*M`` reusable across right-hand sides."""

    def __init__(self, m, a=1.0, b=1.0, shift_label=None):
        self.shape = m.shape
        self.shift_label = shift_label if shift_label is not None else (a, b)
        n = m.shape[0]
        if sp.issparse(m) and n > DENSE_LIMIT:
            system = (b * m + a * sp.identity(n, dtype=complex, format="csc")).tocsc()
            self._system = system
            try:
                lu = spla.splu(system)
            except RuntimeError as exc:  # singular factorization
                raise SpectralCollisionError(self.shift_label, str(exc)) from exc
            self._solve_raw = lu.solve
        else:
            system = a * np.eye(n, dtype=complex) + b * as_dense(m)
            self._system = system
            try:
                self._lu = sla.lu_factor(system)
            except (ValueError, sla.LinAlgError) as exc:
                raise SpectralCollisionError(self.shift_label, str(exc)) from exc
            self._solve_raw = lambda rhs: sla.lu_solve(self._lu, rhs)

    def solve(self, rhs):
        """Solve against ``rhs`` (vector or matrix of columns), checked."""
        rhs = np.asarray(rhs, dtype=complex)
        x = self._solve_raw(rhs)
        system = self._system
        res = system @ x - rhs
        rhs_scale = np.linalg.norm(rhs)
        if rhs_scale == 0.0:
            return x
        if np.linalg.norm(res) > RESIDUAL_RTOL * rhs_scale:
            # one step of iterative refinement before giving up
            x = x + self._solve_raw(rhs - system @ x)
            res = system @ x - rhs
            if np.linalg.norm(res) > RESIDUAL_RTOL * rhs_scale:
                raise SpectralCollisionError(
                    self.shift_label,
                    f"shifted solve residual {np.linalg.norm(res) / rhs_scale:.3e} "
                    f"exceeds contract {RESIDUAL_RTOL:.1e} at shift {self.shift_label}",
                )
        return x

    def solve_identity(self):
        """Return the full inverse of the shifted system."""
        return self.solve(np.eye(self.shape[0], dtype=complex))


def spectral_norm(m, tol=1e-8):
    """2-norm of a (possibly sparse) matrix; exact for dense sizes in use."""
    if sp.issparse(m):
        if m.nnz == 0:
            return 0.0
        if m.shape[0] <= DENSE_LIMIT:
            return float(np.linalg.norm(as_dense(m), 2))
        # power iteration on M M^H with deterministic start
        x = np.ones(m.shape[1], dtype=complex) / np.sqrt(m.shape[1])
        mh = m.getH()
        prev = 0.0
        for _ in range(200):
            y = m @ x
            x = mh @ y
            norm = np.linalg.norm(x)
            if norm == 0.0:
                return 0.0
            x = x / norm
            est = np.sqrt(norm)
            if abs(est - prev) <= tol * max(est, 1.0):
                return float(est)
            prev = est
        return float(prev)
    arr = np.asarray(m)
    if arr.size == 0:
        return 0.0
    return float(np.linalg.norm(arr, 2))
