"""Desk-scale versions of the headline applications: the Cauchy integral on
Lipschitz curves, Kato square roots, Hodge-Dirac operators on forms,
Lipschitz dependence of the functional calculus, and metric-perturbed
spectral projections on flat tori.

The Cauchy construction uses the skew-adjoint central-difference derivative
(the block structure needs D* = -D); the forward-difference d stays reserved
for the exterior complex.  The principal-value kernel of the Cauchy integral
is documented in the README but is not a computation route here: the
cross-validation is between the eigendecomposition oracle, the resolvent
quadrature for sgn, and the exact flat-case symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._solve import as_dense
from .errors import ArgumentError, PreconditionError
from .exterior import FiberLayout, gram_on_forms
from .funcalc import (HoloFunction, eigen_oracle, principal_sqrt,
                      sgn_function, sgn_via_resolvent_quadrature, sqrt_square,
                      xi_minus, xi_plus)
from .gridops import (DiracTriple, GridSpec, LinearOperator, build_block_triple, build_gamma,
                      build_pi_b, central_difference, field_of_values_bounds,
                      flat_triple, grad_operator, multiplier_matrix,
                      orthonormal_nullspace, orthonormal_range)
from .quadest import TGrid, quad_ratio

ZERO_RTOL = 1e-10


def _xi_zero() -> HoloFunction:
    return HoloFunction(kind="xiZero", fn=lambda z: np.zeros_like(z), f0=1.0,
                        label="xi0")


def _pointwise_angles(values: np.ndarray):
    """Worst accretivity constant and angle over a pointwise matrix field."""
    kappa = np.inf
    omega = 0.0
    for m in values:
        k, o = field_of_values_bounds(m)
        kappa = min(kappa, k)
        omega = max(omega, o)
    return float(kappa), float(omega)


# ---------------------------------------------------------------------------
# Cauchy singular integral on a Lipschitz graph


@dataclass
class LipschitzCurve:
    """A periodic Lipschitz graph sampled on a 1D grid."""

    grid: GridSpec
    g_samples: np.ndarray
    g_prime: np.ndarray
    lipschitz_constant: float

    @property
    def omega(self) -> float:
        return float(np.arctan(self.lipschitz_constant))


def lipschitz_curve(grid: GridSpec, g_samples) -> LipschitzCurve:
    if grid.n != 1:
        raise ArgumentError("Lipschitz curves live over 1D grids")
    g = np.asarray(g_samples, dtype=float)
    if g.shape != (grid.m,):
        raise ArgumentError(f"need {grid.m} samples")
    gp = (np.roll(g, -1) - np.roll(g, 1)) / (2 * grid.h)
    return LipschitzCurve(grid=grid, g_samples=g, g_prime=gp,
                          lipschitz_constant=float(np.max(np.abs(gp))))


@dataclass
class CauchyReport:
    matrix: np.ndarray               # sgn(i D_curve) via the eigen oracle
    quadrature_matrix: np.ndarray    # the same via resolvent quadrature
    route_discrepancy: float
    projection_defect: float         # || C^2 - (I - P0) ||
    omega: float
    small_eigenvalues: list
    warning: str | None = None


def cauchy_operator(curve: LipschitzCurve, s_count: int = 280) -> CauchyReport:
    """sgn(i D_curve) with D_curve = (1 + i g')^{ -1} d/dx, two routes.

    The derivative is the skew-adjoint central difference; near-zero
    eigenvalues of i D_curve are reported as an ill-conditioning warning.
    """
    grid = curve.grid
    layout = FiberLayout(1, 1)
    d = central_difference(grid)
    a = 1.0 / (1.0 + 1j * curve.g_prime)
    op = 1j * (a[:, None] * as_dense(d))

    lam = np.linalg.eigvals(op)
    scale = max(np.max(np.abs(lam)), 1e-300)
    nonzero = np.abs(lam) > ZERO_RTOL * scale
    small = np.sort(np.abs(lam[nonzero]))
    tiny = [complex(z) for z in lam[nonzero & (np.abs(lam) < 1e-6 * scale)]]
    warning = "ill-conditioned: tiny nonzero eigenvalues" if tiny else None

    mu = min(curve.omega + 0.2 * (np.pi / 2 - curve.omega) + 1e-9, np.pi / 2 - 1e-9)
    oracle = eigen_oracle(op, sgn_function(), mu=mu)
    lam_min = float(small[0]) if small.size else 1.0
    quad = sgn_via_resolvent_quadrature(
        op, s_min=1e-5 / scale, s_max=1e6 / lam_min, count=s_count)
    discrepancy = float(np.linalg.norm(oracle.matrix - quad.matrix, 2))

    p0 = eigen_oracle(op, _xi_zero()).matrix
    c = oracle.matrix
    defect = float(np.linalg.norm(c @ c - (np.eye(grid.m) - p0), 2))
    return CauchyReport(matrix=c, quadrature_matrix=quad.matrix,
                        route_discrepancy=discrepancy, projection_defect=defect,
                        omega=curve.omega, small_eigenvalues=tiny, warning=warning)


def cauchy_flat_symbol_defect(matrix: np.ndarray, grid: GridSpec) -> float:
    """Max defect of the flat-curve operator against its exact symbol.

    On the flat line the operator multiplies the Fourier mode of frequency
    xi by -sgn(xi); modes where the discrete derivative symbol vanishes
    (the zero mode, and the Nyquist mode for even m) are annihilated.
    """
    m = grid.m
    j = np.arange(m)
    worst = 0.0
    for k in range(m):
        mode = np.exp(2j * np.pi * k * j / m) / np.sqrt(m)
        sym = np.sin(2 * np.pi * k / m)
        if abs(sym) < 1e-12:
            expected = np.zeros_like(mode)
        else:
            xi = k if k < m / 2 else k - m
            expected = -np.sign(xi) * mode
        worst = max(worst, float(np.linalg.norm(matrix @ mode - expected)))
    return worst


# ---------------------------------------------------------------------------
# Kato square roots


@dataclass
class KatoReport:
    c_low: float
    c_high: float
    kappa: float
    omega: float
    dim: int
    sqrt_residual: float


def kato_sqrt(a_field: np.ndarray, grid: GridSpec) -> KatoReport:
    """Equivalence constants for ||(D* A D)^{1/2} u|| against ||grad u||.

    D is the componentwise forward-difference gradient on scalars; the
    extremes are generalized singular values over u orthogonal to constants.
    The constants compare the quadratic forms, so they square to the extreme
    ratios of ||S u||^2 / ||grad u||^2.
    """
    a_field = np.asarray(a_field, dtype=complex)
    if a_field.shape != (grid.npoints, grid.n, grid.n):
        raise ArgumentError(f"A must be a ({grid.npoints}, {grid.n}, {grid.n}) field")
    kappa, omega = _pointwise_angles(a_field)
    if kappa <= 0:
        raise ArgumentError(f"A is not pointwise accretive (kappa={kappa:.3e})")

    d = grad_operator(grid, FiberLayout(grid.n, 1))
    dmat = as_dense(d.matrix)
    lap = dmat.conj().T @ as_dense(multiplier_matrix(a_field)) @ dmat

    mu = max(2 * omega + 1e-9, 1e-9)
    sqrt_res = eigen_oracle(lap, principal_sqrt(), mu=mu)
    s = sqrt_res.matrix
    residual = float(np.linalg.norm(s @ s - lap, 2) / max(np.linalg.norm(lap, 2), 1e-300))

    npts = grid.npoints
    ones = np.ones((npts, 1)) / np.sqrt(npts)
    basis = orthonormal_nullspace(ones.conj().T)  # complement of constants
    num = s @ basis
    den = dmat @ basis
    import scipy.linalg as sla
    vals = sla.eigh(num.conj().T @ num, den.conj().T @ den, eigvals_only=True)
    return KatoReport(c_low=float(np.sqrt(max(vals[0], 0.0))),
                      c_high=float(np.sqrt(max(vals[-1], 0.0))),
                      kappa=kappa, omega=omega, dim=lap.shape[0],
                      sqrt_residual=residual)


# ---------------------------------------------------------------------------
# Hodge-Dirac operators on the full form bundle


@dataclass
class FormsReport:
    equiv_low: float
    equiv_high: float
    kernel_dim: int
    h3_residual: float
    omega: float
    quad: object


def hodge_dirac_forms(b_field: np.ndarray, grid: GridSpec,
                      tgrid: TGrid | None = None) -> FormsReport:
    """The perturbed Hodge-Dirac operator d + B^{-1} d* B on the form bundle.

    B must be accretive and invertible on the whole fiber; B1 = B^{-1} and
    B2 = B make the range-cancellation hypothesis automatic.  Reports the
    extremes of (||d u||^2 + ||d* B u||^2)^{1/2} / ||sqrt(D_B^2) u|| over u
    orthogonal to the kernel, together with the quadratic-estimate ratios.
    """
    gamma = build_gamma(grid)
    fd = gamma.domain.fiber_dim
    b_field = np.asarray(b_field, dtype=complex)
    if b_field.shape != (grid.npoints, fd, fd):
        raise ArgumentError(f"B must be a ({grid.npoints}, {fd}, {fd}) field")
    kappa, omega = _pointwise_angles(b_field)
    if kappa <= 0:
        raise ArgumentError(f"B is not accretive on the fiber (kappa={kappa:.3e})")
    conds = np.linalg.cond(b_field)
    if not np.all(np.isfinite(conds)):
        raise ArgumentError("B is not invertible within tolerance")

    triple = build_pi_b(gamma, np.linalg.inv(b_field), b_field, label="forms")
    dim = triple.dim
    h3 = float(np.linalg.norm(
        as_dense(triple.gamma_star @ triple.b2_mat @ triple.b1_mat @ triple.gamma_star), 2))

    mu = min(omega + 0.2 * (np.pi / 2 - omega) + 1e-9, np.pi / 2 - 1e-9)
    s = eigen_oracle(triple, sqrt_square(), mu=mu).matrix

    kernel = orthonormal_nullspace(as_dense(triple.pi_b))
    complement = orthonormal_nullspace(kernel.conj().T) if kernel.shape[1] else \
        np.eye(dim, dtype=complex)
    du = as_dense(triple.gamma_mat) @ complement
    dstar_bu = as_dense(triple.gamma_star @ triple.b2_mat) @ complement
    su = s @ complement
    import scipy.linalg as sla
    vals = sla.eigh(du.conj().T @ du + dstar_bu.conj().T @ dstar_bu,
                    su.conj().T @ su, eigvals_only=True)
    if tgrid is None:
        tgrid = TGrid.default(triple)
    quad = quad_ratio(triple, tgrid)
    return FormsReport(equiv_low=float(np.sqrt(max(vals[0], 0.0))),
                       equiv_high=float(np.sqrt(max(vals[-1], 0.0))),
                       kernel_dim=kernel.shape[1], h3_residual=h3,
                       omega=omega, quad=quad)


# ---------------------------------------------------------------------------
# Lipschitz dependence on the multipliers


def sup_norm(field_values: np.ndarray) -> float:
    """Pointwise-sup of spectral norms of a matrix field."""
    field_values = np.asarray(field_values, dtype=complex)
    if not field_values.size:
        return 0.0
    return float(np.max(np.linalg.svd(field_values, compute_uv=False)[:, 0]))


@dataclass
class LipschitzReport:
    samples: list                 # rows {scale, diff, ratio}
    max_ratio: float
    converged: bool
    holomorphy_bound: float
    skipped: list = field(default_factory=list)
    quad_variant: list = field(default_factory=list)


def _triple_accretivity(triple: DiracTriple):
    v1, _ = orthonormal_range(triple.gamma_star)
    v2, _ = orthonormal_range(triple.gamma_mat)
    k1, o1 = field_of_values_bounds(v1.conj().T @ as_dense(triple.b1_mat) @ v1)
    k2, o2 = field_of_values_bounds(v2.conj().T @ as_dense(triple.b2_mat) @ v2)
    return min(k1, k2), 0.5 * (o1 + o2)


def lipschitz_funcalc(triple: DiracTriple, a1, a2, f: HoloFunction, scales,
                      mu: float | None = None, psi: HoloFunction | None = None,
                      u_seed: int = 0, tgrid: TGrid | None = None,
                      convergence_rtol: float = 0.05) -> LipschitzReport:
    """Scale sweep of ||f(Pi_{B+sA}) - f(Pi_B)|| / (s (||A1|| + ||A2||)).

    Scales where the perturbed triple loses accretivity (or the range
    cancellation needed for the Hodge split) are skipped with a note.  With
    ``psi`` given, the quadratic Lipschitz variant
    ∫ ||(psi(t Pi_{B+sA}) - psi(t Pi_B)) u||^2 dt/tper sample u is also
    measured against s^2 ||A||^2 ||u||^2.
    """
    a1 = np.asarray(a1, dtype=complex)
    a2 = np.asarray(a2, dtype=complex)
    denom_scale = sup_norm(a1) + sup_norm(a2)
    if denom_scale == 0:
        raise ArgumentError("zero perturbation direction")
    kappa0, omega0 = _triple_accretivity(triple)
    if mu is None:
        mu = min(np.pi / 2 - 1e-9,
                 max(omega0, 1e-6) + 0.5 * (np.pi / 2 - max(omega0, 1e-6)))
    base = eigen_oracle(triple, f, mu=mu).matrix

    h3_scale = triple.norm_estimate() ** 2 * max(sup_norm(triple.b1) + sup_norm(a1), 1.0)
    samples = []
    skipped = []
    perturbed_cache = {}
    for s in sorted(scales, reverse=True):
        t = build_pi_b(triple.gamma, triple.b1 + s * a1, triple.b2 + s * a2)
        kappa, _ = _triple_accretivity(t)
        if kappa <= 0.05 * kappa0:
            skipped.append({"scale": float(s), "note": "accretivity margin lost"})
            continue
        h3 = np.linalg.norm(
            as_dense(t.gamma_star @ t.b2_mat @ t.b1_mat @ t.gamma_star), 2)
        if h3 > 1e-8 * h3_scale:
            skipped.append({"scale": float(s),
                            "note": f"range cancellation violated ({h3:.3e})"})
            continue
        perturbed_cache[s] = t
        diff = float(np.linalg.norm(eigen_oracle(t, f, mu=mu).matrix - base, 2))
        samples.append({"scale": float(s), "diff": diff,
                        "ratio": diff / (s * denom_scale)})

    converged = False
    if len(samples) >= 2:
        last, prev = samples[-1]["ratio"], samples[-2]["ratio"]
        ref = max(abs(last), abs(prev), 1e-300)
        converged = abs(last - prev) <= convergence_rtol * ref

    holomorphy = float("nan")
    if samples:
        s = samples[0]["scale"]
        minus = build_pi_b(triple.gamma, triple.b1 - s * a1, triple.b2 - s * a2)
        k_minus, _ = _triple_accretivity(minus)
        if k_minus > 0:
            f_plus = eigen_oracle(perturbed_cache[s], f, mu=mu).matrix
            f_minus = eigen_oracle(minus, f, mu=mu).matrix
            holomorphy = float(np.linalg.norm(f_plus - 2 * base + f_minus, 2) / s**2)

    quad_rows = []
    if psi is not None and samples:
        if tgrid is None:
            tgrid = TGrid.default(triple, count=200)
        rng = np.random.default_rng(u_seed)
        dim = triple.dim
        us = rng.standard_normal((dim, 3)) + 1j * rng.standard_normal((dim, 3))
        lam0, v0 = np.linalg.eig(as_dense(triple.pi_b))
        v0i = np.linalg.inv(v0)
        for row in samples:
            s = row["scale"]
            t = perturbed_cache[s]
            lam1, v1 = np.linalg.eig(as_dense(t.pi_b))
            v1i = np.linalg.inv(v1)
            total = np.zeros(us.shape[1])
            for tt, w in zip(tgrid.nodes, tgrid.weights):
                m0 = (v0 * psi(tt * lam0)) @ (v0i @ us)
                m1 = (v1 * psi(tt * lam1)) @ (v1i @ us)
                total += w * np.sum(np.abs(m1 - m0) ** 2, axis=0)
            u_norms = np.sum(np.abs(us) ** 2, axis=0)
            constant = float(np.max(total / (s**2 * denom_scale**2 * u_norms)))
            quad_rows.append({"scale": float(s), "constant": constant})

    return LipschitzReport(samples=samples,
                           max_ratio=max((r["ratio"] for r in samples), default=0.0),
                           converged=converged, holomorphy_bound=holomorphy,
                           skipped=skipped, quad_variant=quad_rows)


# ---------------------------------------------------------------------------
# metric perturbations of the flat torus


@dataclass
class MetricPerturbation:
    """A symmetric perturbation of the flat cotangent Gram matrix."""

    grid: GridSpec
    h: np.ndarray        # (npoints, n, n) symmetric

    @property
    def sup_norm(self) -> float:
        return sup_norm(self.h)


def random_metric_perturbation(grid: GridSpec, target_norm: float,
                               seed) -> MetricPerturbation:
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((grid.npoints, grid.n, grid.n))
    sym = 0.5 * (raw + raw.transpose(0, 2, 1))
    scale = np.max(np.abs(np.linalg.eigvalsh(sym)))
    return MetricPerturbation(grid=grid, h=target_norm * sym / scale)


def metric_dirac_triple(perturbation: MetricPerturbation,
                        scale: float = 1.0) -> DiracTriple:
    """The Hodge-Dirac triple of the metric I + scale*h on the flat torus.

    The fiber map I + A is the form-bundle Gram matrix of the perturbed
    cotangent metric; volume-density changes are folded into it, so the
    operator is d + (I+A)^{-1} d* (I+A).
    """
    grid = perturbation.grid
    gamma = build_gamma(grid)
    fd = gamma.domain.fiber_dim
    iplusa = np.empty((grid.npoints, fd, fd), dtype=complex)
    eye = np.eye(grid.n)
    for p in range(grid.npoints):
        iplusa[p] = gram_on_forms(eye + scale * perturbation.h[p]).full()
    return build_pi_b(gamma, np.linalg.inv(iplusa), iplusa,
                      label=f"metric(scale={scale:g})")


@dataclass
class MetricReport:
    h_norm: float
    rows: list              # {function, scale, diff, ratio}
    max_ratio: float


def metric_perturb(perturbation: MetricPerturbation, funcs=None,
                   scales=(1.0, 0.5, 0.25)) -> MetricReport:
    """Lipschitz ratios ||f(D_{g+sh}) - f(D_g)|| / ||s h|| on the flat torus.

    Enforces the smallness hypothesis ||h|| < 1/4 of the metric-perturbation
    theorem; the calculus angle is arccos(1/4).
    """
    h_norm = perturbation.sup_norm
    if not h_norm < 0.25:
        raise PreconditionError(
            f"metric perturbation needs ||h||_inf < 1/4 (got {h_norm:.4f}); "
            "the Lipschitz bound for spectral projections assumes it")
    if funcs is None:
        funcs = (xi_plus(), xi_minus(), sgn_function())
    mu = float(np.arccos(0.25))
    base = metric_dirac_triple(perturbation, 0.0)
    base_mats = {f.label or f.kind: eigen_oracle(base, f, mu=mu).matrix for f in funcs}
    rows = []
    for s in scales:
        triple = metric_dirac_triple(perturbation, s)
        for f in funcs:
            key = f.label or f.kind
            diff = float(np.linalg.norm(
                eigen_oracle(triple, f, mu=mu).matrix - base_mats[key], 2))
            rows.append({"function": key, "scale": float(s), "diff": diff,
                         "ratio": diff / (s * h_norm)})
    return MetricReport(h_norm=h_norm, rows=rows,
                        max_ratio=max(r["ratio"] for r in rows))
