"""Hodge projections P0, P1, P2 and the auxiliary pair P~1, P~2.

The direct method builds orthonormal bases of N(Pi_B), R(Gamma*_B), R(Gamma)
and solves for the oblique projections; the resolvent-limit method evaluates
the representation of the projections as limits of resolvents at a finite
parameter and exists to validate those formulas, not for production use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._solve import as_dense
from .errors import ArgumentError, DecompositionError
from .funcalc import resolvent
from .gridops import (DiracTriple, build_pi_b, field_of_values_bounds,
                      multiplier_matrix, orthonormal_nullspace, orthonormal_range)

RANK_RTOL = 1e-10
BASIS_COND_LIMIT = 1e12


@dataclass
class HodgeProjections:
    """The three projections with bookkeeping on how they were obtained."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    method: str
    defect: float
    dims: tuple
    angles: dict = field(default_factory=dict)
    rank_ambiguous: bool = False

    def partition_defect(self) -> float:
        dim = self.p0.shape[0]
        return float(np.linalg.norm(self.p0 + self.p1 + self.p2 - np.eye(dim), 2))

    def idempotency_defects(self) -> tuple:
        return tuple(float(np.linalg.norm(p @ p - p, 2)) for p in (self.p0, self.p1, self.p2))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dims": list(self.dims),
            "defect": self.defect,
            "idempotency": list(self.idempotency_defects()),
            "angles": {k: float(v) for k, v in self.angles.items()},
            "rankAmbiguous": self.rank_ambiguous,
        }


def _subspace_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Minimal principal angle between two orthonormal column spans."""
    if a.shape[1] == 0 or b.shape[1] == 0:
        return float(np.pi / 2)
    s = np.linalg.svd(a.conj().T @ b, compute_uv=False)
    return float(np.arccos(min(1.0, s[0])))


def direct_projections(triple: DiracTriple, rank_rtol: float = RANK_RTOL) -> HodgeProjections:
    """Oblique projections onto N(Pi_B), R(Gamma*_B) and R(Gamma).

    Also verifies N(Pi_B) = N(Gamma*_B) ∩ N(Gamma) by dimension and residual.
    Rank decisions within a factor 10 of the tolerance are flagged
    rank-ambiguous instead of silently resolved.
    """
    pib = as_dense(triple.pi_b)
    dim = pib.shape[0]
    v0 = orthonormal_nullspace(pib, rank_rtol)
    v1, s1 = orthonormal_range(triple.gamma_star_b, rank_rtol)
    v2, s2 = orthonormal_range(triple.gamma_mat, rank_rtol)

    ambiguous = False
    for s in (s1, s2):
        if len(s) and np.any((s > rank_rtol * s[0]) & (s < 10 * rank_rtol * s[0])):
            ambiguous = True

    angles = {
        "N-R1": _subspace_angle(v0, v1),
        "N-R2": _subspace_angle(v0, v2),
        "R1-R2": _subspace_angle(v1, v2),
    }
    dims = (v0.shape[1], v1.shape[1], v2.shape[1])
    if sum(dims) != dim:
        raise DecompositionError(
            f"Hodge pieces have dimensions {dims} which do not sum to {dim}; "
            f"minimal subspace angles {angles}")
    basis = np.hstack([v0, v1, v2])
    cond = np.linalg.cond(basis)
    if not np.isfinite(cond) or cond > BASIS_COND_LIMIT:
        raise DecompositionError(
            f"concatenated Hodge basis has condition number {cond:.3e}; "
            f"minimal subspace angles {angles}", basis_condition=cond)
    inv = np.linalg.inv(basis)
    d0, d1 = dims[0], dims[0] + dims[1]
    p0 = basis[:, :d0] @ inv[:d0]
    p1 = basis[:, d0:d1] @ inv[d0:d1]
    p2 = basis[:, d1:] @ inv[d1:]

    # kernel characterization: N(Pi_B) = N(Gamma*_B) ∩ N(Gamma)
    joint = np.vstack([as_dense(triple.gamma_mat), as_dense(triple.gamma_star_b)])
    joint_null = orthonormal_nullspace(joint, rank_rtol)
    if joint_null.shape[1] != dims[0]:
        raise DecompositionError(
            f"dim N(Gamma*_B) ∩ N(Gamma) = {joint_null.shape[1]} but "
            f"dim N(Pi_B) = {dims[0]}")
    if dims[0]:
        scale = max(np.linalg.norm(pib, 2), 1.0)
        residual = np.linalg.norm(pib @ v0, 2)
        if residual > 1e-8 * scale:
            raise DecompositionError(f"kernel basis residual {residual:.3e}")

    defect = float(np.linalg.norm(p0 + p1 + p2 - np.eye(dim), 2))
    return HodgeProjections(p0=p0, p1=p1, p2=p2, method="direct", defect=defect,
                            dims=dims, angles=angles, rank_ambiguous=ambiguous)


def limit_projections(triple: DiracTriple, n_limit: float) -> HodgeProjections:
    """The projections evaluated from their resolvent-limit representations.

    P0 = (I + i n Pi_B)^{-1}, P1 = i n Gamma*_B (I + i n Pi_B)^{-1} and
    P2 = i n Gamma (I + i n Pi_B)^{-1}, at n = n_limit; the discrepancy
    against the direct method decays first-order in 1/n.
    """
    if not n_limit > 0:
        raise ArgumentError("n_limit must be positive")
    r = resolvent(triple, 1j * n_limit)
    p0 = r
    p1 = 1j * n_limit * as_dense(triple.gamma_star_b @ r)
    p2 = 1j * n_limit * as_dense(triple.gamma_mat @ r)
    dim = p0.shape[0]
    defect = float(np.linalg.norm(p0 + p1 + p2 - np.eye(dim), 2))
    return HodgeProjections(p0=p0, p1=p1, p2=p2, method=f"resolventLimit({n_limit:g})",
                            defect=defect, dims=(-1, -1, -1))


def group_inverse(triple: DiracTriple, p0: np.ndarray) -> np.ndarray:
    """Inverse of Pi_B on R(Pi_B), zero on N(Pi_B)."""
    pib = as_dense(triple.pi_b)
    dim = pib.shape[0]
    core = np.linalg.solve(pib + p0, np.eye(dim))
    return (np.eye(dim) - p0) @ core


@dataclass
class PtildePair:
    p1_tilde: np.ndarray
    p2_tilde: np.ndarray
    method: str
    factorization_defects: tuple = (float("nan"), float("nan"))


def ptilde(triple: DiracTriple, n_limit: float,
           projections: HodgeProjections | None = None) -> PtildePair:
    """P~1 = i n Gamma* B2 (I + i n Pi_B)^{-1} and
    P~2 = (I + i n Pi_B)^{-1} i n B1 Gamma*, evaluated at n = n_limit.

    The factorization identities P1 = B1 P~1 and P2 = P~2 B2 are verified
    against the supplied (or freshly computed) direct projections.
    """
    if not n_limit > 0:
        raise ArgumentError("n_limit must be positive")
    r = resolvent(triple, 1j * n_limit)
    p1t = 1j * n_limit * as_dense(triple.gamma_star @ (triple.b2_mat @ r))
    p2t = 1j * n_limit * (r @ as_dense(triple.b1_mat @ triple.gamma_star))
    if projections is None:
        projections = direct_projections(triple)
    b1 = as_dense(triple.b1_mat)
    b2 = as_dense(triple.b2_mat)
    defects = (float(np.linalg.norm(projections.p1 - b1 @ p1t, 2)),
               float(np.linalg.norm(projections.p2 - p2t @ b2, 2)))
    return PtildePair(p1_tilde=p1t, p2_tilde=p2t,
                      method=f"resolventLimit({n_limit:g})",
                      factorization_defects=defects)


def ptilde_direct(triple: DiracTriple,
                  projections: HodgeProjections | None = None) -> PtildePair:
    """Exact finite-dimensional evaluation of the limit operators.

    On R(Pi_B) the resolvent expansion collapses to the group inverse, giving
    P~1 = Gamma* B2 Pi_B^# (I - P0) and P~2 = Pi_B^# (I - P0) B1 Gamma*.
    """
    if projections is None:
        projections = direct_projections(triple)
    p0 = projections.p0
    ginv = group_inverse(triple, p0)
    p1t = as_dense(triple.gamma_star @ triple.b2_mat) @ ginv
    p2t = ginv @ as_dense(triple.b1_mat @ triple.gamma_star)
    b1 = as_dense(triple.b1_mat)
    b2 = as_dense(triple.b2_mat)
    defects = (float(np.linalg.norm(projections.p1 - b1 @ p1t, 2)),
               float(np.linalg.norm(projections.p2 - p2t @ b2, 2)))
    return PtildePair(p1_tilde=p1t, p2_tilde=p2t, method="direct",
                      factorization_defects=defects)


@dataclass
class DerivativeCheck:
    """Finite differences of the Hodge projections against the closed formulas."""

    epsilon: float
    discrepancies: tuple          # per projection, operator norm
    max_discrepancy: float
    formula_sum_residual: float   # the three right-hand sides must sum to zero


def _accretivity_margin(triple: DiracTriple) -> float:
    gam = triple.gamma_mat
    v2, _ = orthonormal_range(gam)
    v1, _ = orthonormal_range(triple.gamma_star)
    k1, _ = field_of_values_bounds(v1.conj().T @ as_dense(triple.b1_mat) @ v1)
    k2, _ = field_of_values_bounds(v2.conj().T @ as_dense(triple.b2_mat) @ v2)
    return min(k1, k2)


def projection_derivative_check(triple: DiracTriple, a1, a2, epsilon: float,
                                h3_rtol: float = 1e-8) -> DerivativeCheck:
    """Compare central differences of P0, P1, P2 along the affine family
    B_i(z) = B_i + z A_i with the closed derivative formulas at z = 0.

    The perturbed triples at ±epsilon must stay accretive and keep the
    range-cancellation hypothesis, otherwise the step is rejected.
    """
    a1 = np.asarray(a1, dtype=complex)
    a2 = np.asarray(a2, dtype=complex)
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")

    perturbed = {}
    for sign in (+1.0, -1.0):
        t = build_pi_b(triple.gamma, triple.b1 + sign * epsilon * a1,
                       triple.b2 + sign * epsilon * a2)
        if _accretivity_margin(t) <= 0:
            raise ArgumentError(
                f"step too large: accretivity lost at z = {sign * epsilon:g}")
        scale = max(triple.norm_estimate(), 1.0)
        h3 = np.linalg.norm(as_dense(t.gamma_star @ t.b2_mat @ t.b1_mat @ t.gamma_star), 2)
        if h3 > h3_rtol * scale**2 * max(np.linalg.norm(as_dense(t.b1_mat)), 1.0):
            raise ArgumentError(
                f"perturbed family violates the range-cancellation hypothesis "
                f"at z = {sign * epsilon:g} (residual {h3:.3e})")
        perturbed[sign] = direct_projections(t)

    base = direct_projections(triple)
    tildes = ptilde_direct(triple, base)
    a1m = as_dense(multiplier_matrix(a1))
    a2m = as_dense(multiplier_matrix(a2))

    d_formula = (
        -base.p0 @ a1m @ tildes.p1_tilde - tildes.p2_tilde @ a2m @ base.p0,
        base.p0 @ a1m @ tildes.p1_tilde - tildes.p2_tilde @ a2m @ base.p1,
        -base.p2 @ a1m @ tildes.p1_tilde + tildes.p2_tilde @ a2m @ base.p0,
    )
    fd = tuple((getattr(perturbed[1.0], name) - getattr(perturbed[-1.0], name))
               / (2 * epsilon) for name in ("p0", "p1", "p2"))
    discrepancies = tuple(float(np.linalg.norm(f - g, 2)) for f, g in zip(fd, d_formula))
    total = d_formula[0] + d_formula[1] + d_formula[2]
    return DerivativeCheck(
        epsilon=epsilon,
        discrepancies=discrepancies,
        max_discrepancy=max(discrepancies),
        formula_sum_residual=float(np.linalg.norm(total, 2)),
    )
