"""Quadratic-estimate functionals and dyadic harmonic-analysis diagnostics.

The measure dt/t is discretized as a trapezoid rule in log t, which is
exponentially accurate for the resolvent-family integrands once the grid
spans the spectral band; analytic tail bounds are reported alongside every
value so truncation is never silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._solve import ShiftedSolver, as_dense, spectral_norm
from .errors import ArgumentError
from .funcalc import ZERO_EIGENVALUE_RTOL, pi_matrix
from .gridops import DiracTriple, Field, multiplier_matrix, orthonormal_range
from .hodge import HodgeProjections, direct_projections


@dataclass(frozen=True)
class TGrid:
    """Log-spaced quadrature for integrals against dt/t."""

    t_min: float
    t_max: float
    count: int = 400

    def __post_init__(self):
        if not 0 < self.t_min < self.t_max:
            raise ArgumentError("need 0 < t_min < t_max")
        if self.count < 16:
            raise ArgumentError("need at least 16 quadrature nodes")

    @property
    def nodes(self) -> np.ndarray:
        return np.exp(np.linspace(np.log(self.t_min), np.log(self.t_max), self.count))

    @property
    def weights(self) -> np.ndarray:
        x = np.linspace(np.log(self.t_min), np.log(self.t_max), self.count)
        w = np.full(self.count, x[1] - x[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def refined(self, factor: int = 2) -> "TGrid":
        return TGrid(self.t_min, self.t_max, factor * self.count)

    @classmethod
    def default(cls, triple_or_norm, count: int = 400) -> "TGrid":
        norm = (triple_or_norm.norm_estimate()
                if isinstance(triple_or_norm, DiracTriple) else float(triple_or_norm))
        return cls(1e-4 / norm, 1e4 / norm, count)


def _eigenvalue_moduli(triple) -> tuple:
    """(largest, smallest nonzero) eigenvalue modulus of Pi_B."""
    lam = np.abs(np.linalg.eigvals(as_dense(pi_matrix(triple))))
    top = float(lam.max()) if lam.size else 0.0
    nz = lam[lam > ZERO_EIGENVALUE_RTOL * max(top, 1e-300)]
    return top, (float(nz.min()) if nz.size else 0.0)


def _tail_bound(tgrid: TGrid, lam_max: float, lam_min: float) -> float:
    """Missing mass of the scalar profile (t|l|)^2/(1+t^2|l|^2)^2 per dt/t.

    Exact for each eigenmode of a normal operator; reported as the analytic
    truncation estimate in general.
    """
    if lam_max <= 0:
        return 0.0
    s0 = tgrid.t_min * lam_max
    lower = 0.5 * s0 * s0 / (1.0 + s0 * s0)
    if lam_min <= 0:
        return float(lower)
    s1 = tgrid.t_max * lam_min
    upper = 0.5 / (1.0 + s1 * s1)
    return float(lower + upper)


@dataclass
class QuadValue:
    value: float
    truncation_bound: float
    warning: str | None
    curve: list = field(default_factory=list)  # rows (t, ||Q_t u||)


def _q_apply(triple: DiracTriple, t: float, rhs: np.ndarray) -> np.ndarray:
    r_plus = ShiftedSolver(triple.pi_b, a=1.0, b=1j * t, shift_label=1j * t).solve(rhs)
    r_minus = ShiftedSolver(triple.pi_b, a=1.0, b=-1j * t, shift_label=-1j * t).solve(rhs)
    return (-r_plus + r_minus) / 2j


def quad_functional(triple: DiracTriple, u, tgrid: TGrid,
                    truncation_warn: float = 0.01) -> QuadValue:
    """The quadrature value of ∫ ||Q_t^B u||^2 dt/t.

    A truncation bound larger than ``truncation_warn`` of the value raises
    the warning flag rather than an error.
    """
    vec = u.flat() if isinstance(u, Field) else np.asarray(u, dtype=complex)
    if not np.any(vec):
        raise ArgumentError("u must be nonzero")
    weight = triple.grid.h ** triple.grid.n
    value = 0.0
    curve = []
    for t, w in zip(tgrid.nodes, tgrid.weights):
        qu = _q_apply(triple, t, vec)
        sq = weight * float(np.vdot(qu, qu).real)
        value += w * sq
        curve.append((float(t), float(np.sqrt(sq))))
    lam_max, lam_min = _eigenvalue_moduli(triple)
    bound = _tail_bound(tgrid, lam_max, lam_min) * weight * float(np.vdot(vec, vec).real)
    warning = "truncation" if value > 0 and bound > truncation_warn * value else None
    return QuadValue(value=float(value), truncation_bound=bound, warning=warning,
                     curve=curve)


@dataclass
class QuadReport:
    lower: float
    upper: float
    truncation_bound: float
    warning: str | None
    range_dim: int

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper,
                "truncationBound": self.truncation_bound,
                "warning": self.warning, "rangeDim": self.range_dim}


def quad_ratio(triple: DiracTriple, tgrid: TGrid, psi=None) -> QuadReport:
    """Extremes of ∫ ||Q_t u||^2 dt/t / ||u||^2 over u in R(Pi_B).

    Assembles the quadratic form restricted to an orthonormal basis of the
    range and returns its extreme eigenvalues.  With ``psi`` given, Q_t is
    replaced by psi(t Pi_B) (evaluated spectrally) for the equivalent
    seminorm diagnostics.
    """
    basis, _ = orthonormal_range(triple.pi_b)
    if basis.shape[1] == 0:
        raise ArgumentError("R(Pi_B) is trivial")
    form = np.zeros((basis.shape[1], basis.shape[1]), dtype=complex)
    if psi is None:
        for t, w in zip(tgrid.nodes, tgrid.weights):
            qv = _q_apply(triple, t, basis)
            form += w * (qv.conj().T @ qv)
    else:
        lam, vec = np.linalg.eig(as_dense(triple.pi_b))
        vinv = np.linalg.inv(vec)
        vb = vinv @ basis
        scale = max(np.max(np.abs(lam)), 1e-300)
        nz = np.abs(lam) > ZERO_EIGENVALUE_RTOL * scale
        for t, w in zip(tgrid.nodes, tgrid.weights):
            fvals = np.zeros_like(lam)
            fvals[nz] = psi(t * lam[nz])
            qv = vec @ (fvals[:, None] * vb)
            form += w * (qv.conj().T @ qv)
    form = 0.5 * (form + form.conj().T)
    eigs = np.linalg.eigvalsh(form)
    lam_max, lam_min = _eigenvalue_moduli(triple)
    bound = _tail_bound(tgrid, lam_max, lam_min)
    warning = "truncation" if bound > 0.01 * max(eigs[0], 1e-300) else None
    return QuadReport(lower=float(eigs[0]), upper=float(eigs[-1]),
                      truncation_bound=bound, warning=warning,
                      range_dim=basis.shape[1])


def resolution_identity_check(triple: DiracTriple, tgrid: TGrid,
                              projections: HodgeProjections | None = None):
    """Operator-norm defect of Σ w (Q_t)^2 against (I - P0)/2."""
    if projections is None:
        projections = direct_projections(triple)
    dim = triple.dim
    total = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(dim, dtype=complex)
    for t, w in zip(tgrid.nodes, tgrid.weights):
        q = _q_apply(triple, t, eye)
        total += w * (q @ q)
    defect = float(np.linalg.norm(total - 0.5 * (eye - projections.p0), 2))
    lam_max, lam_min = _eigenvalue_moduli(triple)
    bound = _tail_bound(tgrid, lam_max, lam_min)
    warning = "truncation" if defect > max(1e-6, 2 * bound) else None
    return defect, bound, warning


# ---------------------------------------------------------------------------
# dyadic machinery


@dataclass(frozen=True)
class Cube:
    level: int            # sidelength is 2^level * h
    corner: tuple         # corner in units of the cube sidelength

    @property
    def label(self) -> str:
        return f"j{self.level}:" + ",".join(str(c) for c in self.corner)


@dataclass
class DyadicSystem:
    """All dyadic cubes of a grid with m = 2^J points per axis."""

    grid: object

    def __post_init__(self):
        if not self.grid.is_dyadic:
            raise ArgumentError("dyadic diagnostics need m to be a power of 2")
        self.levels = int(np.log2(self.grid.m))

    def sidelength(self, level: int) -> float:
        return (1 << level) * self.grid.h

    def cubes(self, level: int):
        per_axis = self.grid.m >> level
        for corner in np.ndindex(*([per_axis] * self.grid.n)):
            yield Cube(level=level, corner=tuple(int(c) for c in corner))

    def all_cubes(self):
        for level in range(self.levels + 1):
            yield from self.cubes(level)

    def point_cube_index(self, level: int) -> np.ndarray:
        """For each grid point, the flat index of its level cube."""
        m, n = self.grid.m, self.grid.n
        per_axis = m >> level
        axes = np.unravel_index(np.arange(self.grid.npoints), (m,) * n)
        idx = np.zeros(self.grid.npoints, dtype=int)
        for axis_vals in axes:
            idx = idx * per_axis + (axis_vals >> level)
        return idx

    def cube_points(self, cube: Cube) -> np.ndarray:
        idx = self.point_cube_index(cube.level)
        per_axis = self.grid.m >> cube.level
        flat = 0
        for c in cube.corner:
            flat = flat * per_axis + c
        return np.nonzero(idx == flat)[0]

    def level_for_t(self, t: float) -> int:
        """The scale with 2^(j-1) < t/h <= 2^j, clamped to the grid."""
        if not 0 < t <= self.grid.L:
            raise ArgumentError(f"t={t:g} outside (0, L]")
        j = int(np.ceil(np.log2(max(t / self.grid.h, 1e-300))))
        return int(np.clip(j, 0, self.levels))


def dyadic_average(u: Field, t: float) -> Field:
    """Replace u by its average on the dyadic cube of scale matching t."""
    system = DyadicSystem(u.grid)
    level = system.level_for_t(t)
    if level == 0:
        return Field(u.grid, u.layout, u.values.copy())
    m, n = u.grid.m, u.grid.n
    fd = u.layout.fiber_dim
    vals = u.values.reshape((m,) * n + (fd,))
    block = 1 << level
    # average over block x block x ... sub-cubes, then broadcast back
    shape = ()
    for _ in range(n):
        shape += (m // block, block)
    shape += (fd,)
    reshaped = vals.reshape(shape)
    axes = tuple(2 * k + 1 for k in range(n))
    means = reshaped.mean(axis=axes, keepdims=True)
    out = np.broadcast_to(means, shape).reshape((m,) * n + (fd,))
    return Field(u.grid, u.layout, out.reshape(u.grid.npoints, fd).copy())


def averaging_matrix(system: DyadicSystem, level: int, fiber_dim: int) -> sp.csr_matrix:
    """The dyadic averaging operator at one scale as a sparse matrix."""
    idx = system.point_cube_index(level)
    npoints = system.grid.npoints
    count = 1 << (level * system.grid.n)
    indicator = sp.csr_matrix((np.ones(npoints), (idx, np.arange(npoints))),
                              shape=(idx.max() + 1, npoints))
    proj = (indicator.T @ indicator) / count
    return sp.kron(proj, sp.identity(fiber_dim, format="csr"), format="csr")


# ---------------------------------------------------------------------------
# principal part and Carleson diagnostics


@dataclass
class PrincipalPart:
    t: float
    gamma_t: np.ndarray            # (npoints, fd, fd)
    local_l2_bound: float          # max over scale-t cubes of avg |gamma_t|^2
    gamma_at_norm: float           # || gamma_t A_t ||


def principal_part(triple: DiracTriple, t: float,
                   system: DyadicSystem | None = None) -> PrincipalPart:
    """gamma_t(x) w := (Theta_t^B w)(x) on the fiber basis, as a matrix field."""
    if not t > 0:
        raise ArgumentError("t must be positive")
    fd = triple.layout.fiber_dim
    npoints = triple.grid.npoints
    rhs = np.tile(np.eye(fd, dtype=complex), (npoints, 1))
    pib = triple.pi_b
    squared = (pib @ pib).tocsr() if sp.issparse(pib) else pib @ pib
    solver = ShiftedSolver(squared, a=1.0, b=t * t, shift_label=("theta", t))
    theta_cols = t * (triple.gamma_star_b @ solver.solve(rhs))
    gamma_t = theta_cols.reshape(npoints, fd, fd)

    pointwise = np.linalg.svd(gamma_t, compute_uv=False)[:, 0]
    if system is None and triple.grid.is_dyadic:
        system = DyadicSystem(triple.grid)
    if system is not None and t <= triple.grid.L:
        level = system.level_for_t(min(t, triple.grid.L))
        idx = system.point_cube_index(level)
        sums = np.zeros(idx.max() + 1)
        np.add.at(sums, idx, pointwise**2)
        counts = np.bincount(idx, minlength=idx.max() + 1)
        local = float(np.max(sums / counts))
        avg = averaging_matrix(system, level, fd)
        gamma_at = float(spectral_norm(multiplier_matrix(gamma_t) @ avg))
    else:
        local = float(np.max(pointwise**2))
        gamma_at = float(np.max(pointwise))
    return PrincipalPart(t=float(t), gamma_t=gamma_t, local_l2_bound=local,
                         gamma_at_norm=gamma_at)


@dataclass
class CarlesonReport:
    norm: float
    worst_cube: str
    rows: list = field(default_factory=list)   # (cube label, level, mass, mass/|Q|)
    gamma_pointwise: dict = field(default_factory=dict)


def _truncated_log_weights(nodes: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Trapezoid-in-log weights for the selected subsequence of nodes."""
    sel = np.log(nodes[mask])
    w = np.zeros_like(sel)
    if sel.size == 1:
        return np.array([0.0])
    w[1:-1] = 0.5 * (sel[2:] - sel[:-2])
    w[0] = 0.5 * (sel[1] - sel[0])
    w[-1] = 0.5 * (sel[-1] - sel[-2])
    out = np.zeros(len(nodes))
    out[mask] = w
    return out


def carleson_norm(triple: DiracTriple, system: DyadicSystem, tgrid: TGrid,
                  gamma_cache: dict | None = None) -> CarlesonReport:
    """sup over dyadic cubes of |Q|^{-1} ∬_{R_Q} |gamma_t(x)|^2 dx dt/t."""
    grid = triple.grid
    nodes = tgrid.nodes
    usable = nodes <= grid.L
    point_mass = {}
    if gamma_cache is None:
        gamma_cache = {}
    for i, t in enumerate(nodes):
        if not usable[i]:
            continue
        if t not in gamma_cache:
            gamma_cache[t] = principal_part(triple, t, system)
        point_mass[i] = np.linalg.svd(gamma_cache[t].gamma_t, compute_uv=False)[:, 0] ** 2

    weight = grid.h**grid.n
    best = -1.0
    worst = ""
    rows = []
    for level in range(system.levels + 1):
        side = system.sidelength(level)
        mask = usable & (nodes <= side)
        if not mask.any():
            continue
        w = _truncated_log_weights(nodes, mask)
        mass_per_point = np.zeros(grid.npoints)
        for i in np.nonzero(mask)[0]:
            mass_per_point += w[i] * point_mass[i]
        idx = system.point_cube_index(level)
        sums = np.zeros(idx.max() + 1)
        np.add.at(sums, idx, mass_per_point)
        volume = side**grid.n
        per_axis = grid.m >> level
        for cube in system.cubes(level):
            flat = 0
            for c in cube.corner:
                flat = flat * per_axis + c
            mass = weight * sums[flat]
            ratio = mass / volume
            rows.append((cube.label, level, float(mass), float(ratio)))
            if ratio > best:
                best = ratio
                worst = cube.label
    return CarlesonReport(norm=float(max(best, 0.0)), worst_cube=worst, rows=rows)


def carleson_embedding_probe(triple: DiracTriple, system: DyadicSystem, tgrid: TGrid,
                             u, carleson: CarlesonReport | None = None,
                             gamma_cache: dict | None = None):
    """Quadrature of ∬ |A_t u|^2 |gamma_t|^2 dx dt/t and its Carleson bound.

    Returns (lhs, carleson_norm * ||u||^2, report); the embedding constant of
    the dyadic system bounds lhs / (norm * ||u||^2).
    """
    grid = triple.grid
    field_u = u if isinstance(u, Field) else Field.from_flat(grid, triple.layout, u)
    if gamma_cache is None:
        gamma_cache = {}
    if carleson is None:
        carleson = carleson_norm(triple, system, tgrid, gamma_cache)
    nodes = tgrid.nodes
    usable = nodes <= grid.L
    w = _truncated_log_weights(nodes, usable)
    weight = grid.h**grid.n
    lhs = 0.0
    for i, t in enumerate(nodes):
        if not usable[i]:
            continue
        if t not in gamma_cache:
            gamma_cache[t] = principal_part(triple, t, system)
        avg = dyadic_average(field_u, t)
        avg_sq = np.sum(np.abs(avg.values) ** 2, axis=1)
        gam_sq = np.linalg.svd(gamma_cache[t].gamma_t, compute_uv=False)[:, 0] ** 2
        lhs += w[i] * weight * float(np.sum(avg_sq * gam_sq))
    u_sq = weight * float(np.sum(np.abs(field_u.values) ** 2))
    return float(lhs), float(carleson.norm * u_sq), carleson


# ---------------------------------------------------------------------------
# off-diagonal decay


@dataclass
class OffDiagReport:
    rows: list                  # dicts (family, t, d, d_over_t, ratio)
    fitted_exponents: dict      # family -> slope of log ratio vs log(d/t)
    skipped: list
    saturated: bool


def _torus_distances(grid, idx_b: np.ndarray) -> np.ndarray:
    """Per-point periodic sup-norm distance to the point set ``idx_b``."""
    coords = grid.point_coords()
    b = coords[idx_b]
    diff = np.abs(coords[:, None, :] - b[None, :, :])
    diff = np.minimum(diff, grid.L - diff)
    return diff.max(axis=2).min(axis=1)


def off_diag_probe(triple: DiracTriple, t_list, separations, seed: int = 0,
                   support_cells: int = 1) -> OffDiagReport:
    """Decay of ||U_t u||_{L2(E)}/||u|| with supp u in a cube and dist(E, F) >= d.

    U_t runs over the resolvent family {R_t, P_t, Q_t, Theta_t}.  Separations
    below 2t are skipped with a note; the fitted exponents are slopes of
    log ratio against log(d/t).
    """
    grid = triple.grid
    fd = triple.layout.fiber_dim
    rng = np.random.default_rng(seed)
    coords = grid.point_coords()
    inside = np.all(coords < support_cells * grid.h + 1e-12, axis=1)
    support_idx = np.nonzero(inside)[0]
    u = np.zeros((grid.npoints, fd), dtype=complex)
    u[support_idx] = rng.standard_normal((len(support_idx), fd)) \
        + 1j * rng.standard_normal((len(support_idx), fd))
    flat = u.reshape(-1)
    u_norm = np.linalg.norm(flat)

    dist_to_f = _torus_distances(grid, support_idx)

    pib = triple.pi_b
    squared = (pib @ pib).tocsr() if sp.issparse(pib) else pib @ pib
    rows = []
    skipped = []
    for t in t_list:
        r_solver = ShiftedSolver(pib, a=1.0, b=1j * t, shift_label=1j * t)
        rm_solver = ShiftedSolver(pib, a=1.0, b=-1j * t, shift_label=-1j * t)
        p_solver = ShiftedSolver(squared, a=1.0, b=t * t, shift_label=("P", t))
        ru = r_solver.solve(flat)
        rmu = rm_solver.solve(flat)
        pu = p_solver.solve(flat)
        qu = (-ru + rmu) / 2j
        thu = t * (triple.gamma_star_b @ pu)
        fields = {"R": ru, "P": pu, "Q": qu, "Theta": thu}
        for d in separations:
            if d < 2 * t:
                skipped.append({"t": float(t), "d": float(d),
                                "note": "separation below 2t"})
                continue
            mask = np.repeat(dist_to_f >= d - 1e-12, fd)
            for family, vec in fields.items():
                ratio = float(np.linalg.norm(vec[mask]) / u_norm)
                rows.append({"family": family, "t": float(t), "d": float(d),
                             "d_over_t": float(d / t), "ratio": ratio})

    exponents = {}
    floor = 1e-14
    for family in ("R", "P", "Q", "Theta"):
        pts = [(np.log(r["d_over_t"]), np.log(max(r["ratio"], floor)))
               for r in rows if r["family"] == family]
        if len(pts) >= 2:
            x, y = np.array(pts).T
            exponents[family] = float(np.polyfit(x, y, 1)[0])

    saturated = False
    r_rows = sorted((r for r in rows if r["family"] == "R"), key=lambda r: r["d_over_t"])
    if len(r_rows) >= 2 and r_rows[-1]["ratio"] > 0:
        if r_rows[-2]["ratio"] / max(r_rows[-1]["ratio"], floor) < 1.2:
            saturated = True
    return OffDiagReport(rows=rows, fitted_exponents=exponents, skipped=skipped,
                         saturated=saturated)


# ---------------------------------------------------------------------------
# the cutoff test functions


@dataclass
class FwqReport:
    norm_ratio: float            # ||f|| / |Q|^{1/2}
    theta_mass_ratio: float      # eps^2 * ∬_{R_Q} |Theta_t f|^2 dxdt/t / |Q|
    average_defect: float        # |avg_Q f - w| / eps^{1/2}
    f: np.ndarray


def test_function_fwq(triple: DiracTriple, system: DyadicSystem, cube: Cube,
                      w, eps: float, tgrid: TGrid) -> FwqReport:
    """Build f^w_{Q,eps} = w_Q - eps*l*i Gamma (I + eps*l*i Pi_B)^{-1} w_Q and
    report the three bounded quantities of the cutoff-function lemma.

    The cutoff is the piecewise-linear bump equal to 1 on 2Q, vanishing off
    4Q, with gradient at most 1/l; 4Q must fit inside the torus.
    """
    grid = triple.grid
    fd = triple.layout.fiber_dim
    side = system.sidelength(cube.level)
    if 4 * side > grid.L + 1e-12:
        raise ArgumentError("4Q does not fit in the torus")
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    w = np.asarray(w, dtype=complex)
    if w.shape != (fd,):
        raise ArgumentError(f"w must be a fiber vector of length {fd}")

    center = (np.array(cube.corner, dtype=float) + 0.5) * side
    coords = grid.point_coords()
    diff = np.abs(coords - center[None, :])
    diff = np.minimum(diff, grid.L - diff)
    sup_dist = diff.max(axis=1)
    eta = np.clip(2.0 - sup_dist / side, 0.0, 1.0)

    w_q = (eta[:, None] * w[None, :]).reshape(-1)
    scale = eps * side
    solver = ShiftedSolver(triple.pi_b, a=1.0, b=1j * scale, shift_label=1j * scale)
    resolved = solver.solve(w_q)
    f = w_q - 1j * scale * (triple.gamma_mat @ resolved)

    weight = grid.h**grid.n
    volume = side**grid.n
    norm_ratio = float(np.sqrt(weight) * np.linalg.norm(f) / np.sqrt(volume))

    q_points = system.cube_points(cube)
    q_mask = np.repeat(np.isin(np.arange(grid.npoints), q_points), fd)
    nodes = tgrid.nodes
    usable = nodes <= side
    wts = _truncated_log_weights(nodes, usable)
    pib = triple.pi_b
    squared = (pib @ pib).tocsr() if sp.issparse(pib) else pib @ pib
    mass = 0.0
    for i, t in enumerate(nodes):
        if not usable[i]:
            continue
        p_solver = ShiftedSolver(squared, a=1.0, b=t * t, shift_label=("fwq", t))
        theta_f = t * (triple.gamma_star_b @ p_solver.solve(f))
        mass += wts[i] * weight * float(np.linalg.norm(theta_f[q_mask]) ** 2)
    theta_ratio = float(eps**2 * mass / volume)

    avg = f.reshape(grid.npoints, fd)[q_points].mean(axis=0)
    avg_defect = float(np.linalg.norm(avg - w) / np.sqrt(eps))
    return FwqReport(norm_ratio=norm_ratio, theta_mass_ratio=theta_ratio,
                     average_defect=avg_defect, f=f)
