"""Discrete {Gamma, B1, B2} triples on periodic grids.

The exterior derivative is the lowest-order cubical one built from forward
differences, so nilpotency holds exactly in floating point (cancellation of
equal-magnitude terms).  Degrees of freedom are point-major: the flat index
of grid point ``p`` and fiber slot ``s`` is ``p * fiber_dim + s``; grid
points are enumerated in C order over the axis indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._solve import as_dense, spectral_norm
from .errors import ArgumentError, DecompositionError
from .exterior import FiberLayout, insertion_sign

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """A periodic cubical grid: n axes, m points per axis, period L."""

    n: int
    m: int
    L: float = 1.0

    def __post_init__(self):
        if not 1 <= self.n <= 3:
            raise ArgumentError("spatial dimension n must be 1, 2 or 3")
        if self.m < 2:
            raise ArgumentError("need at least 2 points per axis")
        if self.L <= 0:
            raise ArgumentError("period length must be positive")

    @property
    def h(self) -> float:
        return self.L / self.m

    @property
    def npoints(self) -> int:
        return self.m**self.n

    @property
    def is_dyadic(self) -> bool:
        return self.m & (self.m - 1) == 0

    def point_coords(self) -> np.ndarray:
        """(npoints, n) array of grid coordinates in [0, L)."""
        axes = np.unravel_index(np.arange(self.npoints), (self.m,) * self.n)
        return np.stack(axes, axis=1) * self.h


@dataclass
class Field:
    """A section of the fiber bundle: complex values, one row per point."""

    grid: GridSpec
    layout: FiberLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        expected = (self.grid.npoints, self.layout.fiber_dim)
        if self.values.shape != expected:
            raise ArgumentError(f"field values must have shape {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ArgumentError("field values must be finite")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def from_flat(cls, grid, layout, flat) -> "Field":
        return cls(grid, layout, np.asarray(flat).reshape(grid.npoints, layout.fiber_dim))

    def norm(self) -> float:
        """L2 norm with the uniform grid weight h^n."""
        return float(np.sqrt(self.grid.h**self.grid.n) * np.linalg.norm(self.values))


@dataclass
class LinearOperator:
    """A finite-dimensional linear map with grid/fiber metadata."""

    grid: GridSpec
    domain: FiberLayout
    codomain: FiberLayout
    matrix: object  # scipy sparse or ndarray
    tag: str = "Generic"

    def __post_init__(self):
        expected = (self.grid.npoints * self.codomain.fiber_dim,
                    self.grid.npoints * self.domain.fiber_dim)
        if self.matrix.shape != expected:
            raise ArgumentError(f"matrix shape {self.matrix.shape} != layouts {expected}")
        if sp.issparse(self.matrix):
            self.matrix = self.matrix.tocsr()
            self.matrix.eliminate_zeros()

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return as_dense(self.matrix)

    def apply(self, u):
        if isinstance(u, Field):
            return Field.from_flat(self.grid, self.codomain, self.matrix @ u.flat())
        return self.matrix @ np.asarray(u, dtype=complex)

    def __matmul__(self, u):
        return self.apply(u)


def shift_matrix(grid: GridSpec, axis: int) -> sp.csr_matrix:
    """Permutation sending u(x) to u(x + h e_axis), periodic; axis is 1-based."""
    if not 1 <= axis <= grid.n:
        raise ArgumentError(f"axis {axis} out of range")
    idx = np.arange(grid.npoints).reshape((grid.m,) * grid.n)
    rolled = np.roll(idx, -1, axis=axis - 1).reshape(-1)
    data = np.ones(grid.npoints)
    return sp.csr_matrix((data, (np.arange(grid.npoints), rolled)),
                         shape=(grid.npoints, grid.npoints))


def forward_difference(grid: GridSpec, axis: int) -> sp.csr_matrix:
    """(u(x + h e_axis) - u(x)) / h on scalar grid functions."""
    return (shift_matrix(grid, axis) - sp.identity(grid.npoints, format="csr")) / grid.h


def central_difference(grid: GridSpec, axis: int = 1) -> sp.csr_matrix:
    """Skew-adjoint derivative (u(x+h) - u(x-h)) / 2h on scalar functions."""
    s = shift_matrix(grid, axis)
    return (s - s.T) / (2.0 * grid.h)


def _fiber_unit(codim: int, row: int, col: int, value=1.0) -> sp.csr_matrix:
    return sp.csr_matrix(([value], ([row], [col])), shape=(codim, codim))


def build_gamma(grid: GridSpec) -> LinearOperator:
    """Exterior derivative on the full form bundle by forward differences.

    Acts by (d u)_{S ∪ {k}} += sign(k, S) * (u_S(x + h e_k) - u_S(x)) / h with
    periodic wraparound.  The sign antisymmetry together with commuting shifts
    makes d∘d vanish exactly.
    """
    layout = FiberLayout.full(grid.n)
    fd = layout.fiber_dim
    terms = []
    for k in range(1, grid.n + 1):
        dk = forward_difference(grid, k)
        for bits in range(fd):
            sign = insertion_sign(k, bits, grid.n)
            if sign == 0:
                continue
            target = bits | (1 << (k - 1))
            terms.append(sp.kron(dk, _fiber_unit(fd, target, bits, sign), format="csr"))
    matrix = terms[0]
    for t in terms[1:]:
        matrix = matrix + t
    return LinearOperator(grid, layout, layout, matrix, tag="Gamma")


def grad_operator(grid: GridSpec, layout: FiberLayout) -> LinearOperator:
    """Componentwise forward-difference gradient, stacked over axes.

    Maps fiber dimension fd to n*fd; the codomain fiber slot for axis k
    (1-based) and component s is (k-1)*fd + s.
    """
    fd = layout.fiber_dim
    codomain = FiberLayout(layout.n, grid.n * fd)
    terms = []
    for k in range(1, grid.n + 1):
        inj = sp.csr_matrix((np.ones(fd), ((k - 1) * fd + np.arange(fd), np.arange(fd))),
                            shape=(grid.n * fd, fd))
        terms.append(sp.kron(forward_difference(grid, k), inj, format="csr"))
    matrix = terms[0]
    for t in terms[1:]:
        matrix = matrix + t
    return LinearOperator(grid, layout, codomain, matrix, tag="Generic")


def build_adjoint(op: LinearOperator) -> LinearOperator:
    """Hilbert adjoint for the weighted inner product h^n Σ_x <u(x), v(x)>.

    The weight is uniform on both sides, so this is the plain conjugate
    transpose; ``build_adjoint`` is an involution.
    """
    mat = op.matrix.conj().T if not sp.issparse(op.matrix) else op.matrix.getH().tocsr()
    tag = {"Gamma": "GammaStar", "GammaStar": "Gamma"}.get(op.tag, "Generic")
    return LinearOperator(op.grid, op.codomain, op.domain, mat, tag=tag)


def multiplier_matrix(field_values: np.ndarray) -> sp.bsr_matrix:
    """Block-diagonal matrix of a pointwise matrix field (npoints, fd, fd)."""
    b = np.asarray(field_values, dtype=complex)
    npoints, fd, fd2 = b.shape
    if fd != fd2:
        raise ArgumentError("pointwise matrices must be square")
    return sp.bsr_matrix((b, np.arange(npoints), np.arange(npoints + 1)),
                         shape=(npoints * fd, npoints * fd))


def multiplier_operator(grid: GridSpec, layout: FiberLayout, field_values) -> LinearOperator:
    return LinearOperator(grid, layout, layout, multiplier_matrix(field_values).tocsr(),
                          tag="Multiplier")


def constant_field(grid: GridSpec, layout: FiberLayout, w) -> Field:
    """The constant section with fiber value w."""
    return Field(grid, layout, np.tile(np.asarray(w, dtype=complex), (grid.npoints, 1)))


@dataclass
class MultiplierB:
    """Pointwise multiplier pair with measured accretivity data.

    Angles and constants refer to the restrictions to R(Gamma*) and R(Gamma)
    and are filled in by :func:`validate_hypotheses` (or ``measure``); they
    are NaN until measured.
    """

    b1: np.ndarray
    b2: np.ndarray
    kappa1: float = float("nan")
    kappa2: float = float("nan")
    omega1: float = float("nan")
    omega2: float = float("nan")

    @property
    def omega(self) -> float:
        return 0.5 * (self.omega1 + self.omega2)


def random_accretive_field(grid: GridSpec, layout: FiberLayout, target_omega: float,
                           seed, kappa: float = 0.5) -> np.ndarray:
    """Pointwise matrices e^{i phi(x)} (kappa I + W(x) W(x)^*), |phi| <= target.

    Reproducible from the seed; the numerical range of every pointwise matrix
    lies in the closed sector of angle ``target_omega``.
    """
    if not 0 <= target_omega < np.pi / 2:
        raise ArgumentError("target accretivity angle must lie in [0, pi/2)")
    if kappa < 0.1:
        raise ArgumentError("kappa floor is 0.1")
    rng = np.random.default_rng(seed)
    fd = layout.fiber_dim
    phi = rng.uniform(-target_omega, target_omega, size=grid.npoints)
    w = (rng.standard_normal((grid.npoints, fd, fd))
         + 1j * rng.standard_normal((grid.npoints, fd, fd))) / np.sqrt(2 * fd)
    herm = kappa * np.eye(fd)[None, :, :] + w @ w.conj().transpose(0, 2, 1)
    return np.exp(1j * phi)[:, None, None] * herm


def random_accretive(grid: GridSpec, layout: FiberLayout, target_omega: float, seed,
                     kappa: float = 0.5, mode: str = "inverse_pair") -> MultiplierB:
    """Random multiplier pair for test instances.

    ``inverse_pair`` sets B1 = B2^{-1} pointwise, which makes the cancellation
    hypothesis on the ranges automatic.  ``independent`` draws B1 separately
    (useful to demonstrate hypothesis failure).
    """
    b2 = random_accretive_field(grid, layout, target_omega, seed, kappa)
    if mode == "inverse_pair":
        b1 = np.linalg.inv(b2)
    elif mode == "independent":
        rng = np.random.default_rng(seed)
        b1 = random_accretive_field(grid, layout, target_omega, rng.integers(2**63), kappa)
    else:
        raise ArgumentError(f"unknown mode {mode!r}")
    return MultiplierB(b1=b1, b2=b2)


@dataclass
class DiracTriple:
    """An assembled triple {Gamma, B1, B2} with the derived operators.

    ``pi_b = Gamma + B1 Gamma* B2`` and ``pi_b_star = Gamma* + B2* Gamma B1*``
    are cached as sparse matrices; ``pi`` is the unperturbed Gamma + Gamma*.
    """

    gamma: LinearOperator
    b1: np.ndarray
    b2: np.ndarray
    label: str = "triple"

    def __post_init__(self):
        fd = self.gamma.domain.fiber_dim
        npoints = self.gamma.grid.npoints
        for name, b in (("B1", self.b1), ("B2", self.b2)):
            b = np.asarray(b, dtype=complex)
            if b.shape != (npoints, fd, fd):
                raise ArgumentError(f"{name} field must have shape ({npoints}, {fd}, {fd})")
        self.b1 = np.asarray(self.b1, dtype=complex)
        self.b2 = np.asarray(self.b2, dtype=complex)
        gam = self.gamma.matrix
        gam_star = gam.getH().tocsr() if sp.issparse(gam) else gam.conj().T
        b1m = multiplier_matrix(self.b1).tocsr()
        b2m = multiplier_matrix(self.b2).tocsr()
        self._gamma_star = gam_star
        self._b1m = b1m
        self._b2m = b2m
        self._gamma_star_b = (b1m @ (gam_star @ b2m)).tocsr()
        self._gamma_b = (b2m.getH() @ (gam @ b1m.getH())).tocsr()
        self._pi_b = (gam + self._gamma_star_b).tocsr()
        self._pi_b_star = (gam_star + self._gamma_b).tocsr()

    @property
    def grid(self) -> GridSpec:
        return self.gamma.grid

    @property
    def layout(self) -> FiberLayout:
        return self.gamma.domain

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    @property
    def gamma_mat(self):
        return self.gamma.matrix

    @property
    def gamma_star(self):
        return self._gamma_star

    @property
    def gamma_star_b(self):
        return self._gamma_star_b

    @property
    def b1_mat(self):
        return self._b1m

    @property
    def b2_mat(self):
        return self._b2m

    @property
    def pi(self):
        return (self.gamma_mat + self._gamma_star).tocsr()

    @property
    def pi_b(self):
        return self._pi_b

    @property
    def pi_b_star(self):
        return self._pi_b_star

    def pi_b_operator(self) -> LinearOperator:
        return LinearOperator(self.grid, self.layout, self.layout, self._pi_b, tag="PiB")

    def norm_estimate(self) -> float:
        if not hasattr(self, "_norm_cache"):
            self._norm_cache = max(spectral_norm(self._pi_b), 1e-300)
        return self._norm_cache


def build_pi_b(gamma: LinearOperator, b1, b2, label: str = "triple") -> DiracTriple:
    """Assemble Pi_B = Gamma + B1 Gamma* B2 together with its companions."""
    return DiracTriple(gamma=gamma, b1=np.asarray(b1, complex), b2=np.asarray(b2, complex),
                       label=label)


def flat_triple(grid: GridSpec) -> DiracTriple:
    """The unperturbed triple B1 = B2 = I on the full form bundle."""
    gamma = build_gamma(grid)
    fd = gamma.domain.fiber_dim
    eye = np.tile(np.eye(fd, dtype=complex), (grid.npoints, 1, 1))
    return build_pi_b(gamma, eye, eye, label="flat")


def random_triple(grid: GridSpec, target_omega: float, seed,
                  mode: str = "inverse_pair") -> DiracTriple:
    """Full-form-bundle triple with a random accretive inverse pair."""
    gamma = build_gamma(grid)
    mult = random_accretive(grid, gamma.domain, target_omega, seed, mode=mode)
    return build_pi_b(gamma, mult.b1, mult.b2, label=f"random(omega<={target_omega},seed={seed})")


@dataclass
class BlockTriple:
    """The 2x2 block construction from a first-order operator D.

    Gamma = [[0, 0], [D, 0]], B1 = diag(A1, 0), B2 = diag(0, A2); the fiber
    stacks V1 before V2 at every grid point.
    """

    triple: DiracTriple
    d: LinearOperator
    dim_v1: int
    dim_v2: int

    def embed_v1(self, values: np.ndarray) -> np.ndarray:
        """Lift a flat V1 vector into the block fiber."""
        fd = self.dim_v1 + self.dim_v2
        out = np.zeros((self.triple.grid.npoints, fd), dtype=complex)
        out[:, : self.dim_v1] = np.asarray(values).reshape(-1, self.dim_v1)
        return out.reshape(-1)

    def restrict_v1(self, flat: np.ndarray) -> np.ndarray:
        fd = self.dim_v1 + self.dim_v2
        return np.asarray(flat).reshape(-1, fd)[:, : self.dim_v1].reshape(-1)


def build_block_triple(d: LinearOperator, a1: np.ndarray, a2: np.ndarray) -> BlockTriple:
    """Assemble {Gamma, B1, B2} from D: V1 -> V2 and pointwise A1, A2.

    Pi_B then takes the block form [[0, A1 D* A2], [D, 0]] and Pi_B^2 is
    block diagonal with A1 D* A2 D and D A1 D* A2.
    """
    grid = d.grid
    d1 = d.domain.fiber_dim
    d2 = d.codomain.fiber_dim
    a1 = np.asarray(a1, dtype=complex)
    a2 = np.asarray(a2, dtype=complex)
    if a1.shape != (grid.npoints, d1, d1):
        raise ArgumentError(f"A1 must be a ({grid.npoints}, {d1}, {d1}) field")
    if a2.shape != (grid.npoints, d2, d2):
        raise ArgumentError(f"A2 must be a ({grid.npoints}, {d2}, {d2}) field")
    fd = d1 + d2
    layout = FiberLayout(grid.n, fd)
    eye_pts = sp.identity(grid.npoints, format="csr")
    inj1 = sp.kron(eye_pts, sp.csr_matrix((np.ones(d1), (np.arange(d1), np.arange(d1))),
                                          shape=(fd, d1)), format="csr")
    inj2 = sp.kron(eye_pts, sp.csr_matrix((np.ones(d2), (d1 + np.arange(d2), np.arange(d2))),
                                          shape=(fd, d2)), format="csr")
    gamma_mat = (inj2 @ d.matrix @ inj1.T).tocsr()
    gamma = LinearOperator(grid, layout, layout, gamma_mat, tag="Gamma")
    b1 = np.zeros((grid.npoints, fd, fd), dtype=complex)
    b1[:, :d1, :d1] = a1
    b2 = np.zeros((grid.npoints, fd, fd), dtype=complex)
    b2[:, d1:, d1:] = a2
    triple = build_pi_b(gamma, b1, b2, label="block")
    return BlockTriple(triple=triple, d=d, dim_v1=d1, dim_v2=d2)


def orthonormal_range(matrix, rtol: float = RANK_RTOL):
    """Orthonormal basis of the column space by SVD with a relative rank cut."""
    dense = as_dense(matrix)
    if not np.any(dense):
        return np.zeros((dense.shape[0], 0), dtype=complex), np.zeros(0)
    u, s, _ = np.linalg.svd(dense, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0]))
    return u[:, :rank], s


def orthonormal_nullspace(matrix, rtol: float = RANK_RTOL):
    """Orthonormal basis of the null space by SVD with a relative rank cut."""
    dense = as_dense(matrix)
    if not np.any(dense):
        return np.eye(dense.shape[1], dtype=complex)
    u, s, vh = np.linalg.svd(dense)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].conj().T


def field_of_values_bounds(m: np.ndarray, tol: float = 1e-12):
    """(kappa, omega) of the numerical range of a compressed matrix.

    kappa is the smallest eigenvalue of the Hermitian part.  omega is the
    largest |arg z| over the numerical range, located by bisecting for the
    support line through the origin; for kappa <= 0 the angle is reported as
    pi (degenerate input accepted, not rejected).
    """
    m = np.asarray(m, dtype=complex)
    if m.size == 0:
        return float("nan"), float("nan")
    herm = 0.5 * (m + m.conj().T)
    kappa = float(np.linalg.eigvalsh(herm)[0])
    if kappa <= 0:
        return kappa, float(np.pi)

    def support(theta):
        rotated = 0.5 * (np.exp(-1j * theta) * m + np.exp(1j * theta) * m.conj().T)
        return float(np.linalg.eigvalsh(rotated)[-1])

    def extreme_arg(sign):
        # sup of sign*arg(z): f(phi) = support(sign*(phi + pi/2)) is positive
        # exactly for phi below the extreme angle
        lo, hi = 0.0, np.pi / 2
        if support(sign * (lo + np.pi / 2)) <= 0:
            return 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if support(sign * (mid + np.pi / 2)) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol:
                break
        return hi

    omega = max(extreme_arg(+1.0), extreme_arg(-1.0))
    return kappa, float(omega)


@dataclass
class HypothesisReport:
    """Numerical residuals and constants for the structural hypotheses."""

    nilpotency_residual: float
    kappa1: float
    omega1: float
    kappa2: float
    omega2: float
    h3_residuals: tuple
    cancellation_residual: float
    coercivity_constant: float
    localisation_bound: float

    @property
    def omega(self) -> float:
        return 0.5 * (self.omega1 + self.omega2)

    def to_dict(self) -> dict:
        return {
            "nilpotencyResidual": self.nilpotency_residual,
            "accretivity": {"kappa1": self.kappa1, "omega1": self.omega1,
                            "kappa2": self.kappa2, "omega2": self.omega2,
                            "omega": self.omega},
            "h3Residuals": list(self.h3_residuals),
            "cancellationResidual": self.cancellation_residual,
            "coercivityConstant": self.coercivity_constant,
            "localisationBound": self.localisation_bound,
        }


def _random_lipschitz_eta(grid: GridSpec, rng) -> np.ndarray:
    """A real scalar field built from a few low-frequency waves."""
    coords = grid.point_coords()
    eta = np.zeros(grid.npoints)
    for _ in range(3):
        freq = rng.integers(1, max(2, grid.m // 2), size=grid.n)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.2, 1.0)
        eta += amp * np.cos(2 * np.pi * (coords * freq / grid.L).sum(axis=1) + phase)
    return eta


def _max_discrete_gradient(grid: GridSpec, eta: np.ndarray) -> float:
    comps = []
    for k in range(1, grid.n + 1):
        comps.append(forward_difference(grid, k) @ eta)
    stacked = np.stack(comps, axis=1)
    return float(np.max(np.linalg.norm(stacked, axis=1)))


def validate_hypotheses(triple: DiracTriple, sample_count: int = 20,
                        seed: int = 0) -> HypothesisReport:
    """Measure the residuals and constants of the structural hypotheses.

    Accretivity constants are taken on orthonormal bases of R(Gamma*) and
    R(Gamma), exactly as the hypotheses demand; degenerate multipliers are
    reported with kappa <= 0 rather than rejected.
    """
    gam = triple.gamma_mat
    gam_star = triple.gamma_star
    gam_norm = spectral_norm(gam)
    nilpotency = spectral_norm(gam @ gam)

    range_gamma, _ = orthonormal_range(gam)
    range_gamma_star, _ = orthonormal_range(gam_star)
    b1d = as_dense(triple.b1_mat)
    b2d = as_dense(triple.b2_mat)
    kappa1, omega1 = field_of_values_bounds(range_gamma_star.conj().T @ b1d @ range_gamma_star)
    kappa2, omega2 = field_of_values_bounds(range_gamma.conj().T @ b2d @ range_gamma)

    h3a = spectral_norm(gam_star @ triple.b2_mat @ triple.b1_mat @ gam_star)
    h3b = spectral_norm(gam @ triple.b1_mat @ triple.b2_mat @ gam)

    fd = triple.layout.fiber_dim
    grid = triple.grid
    aggregator = sp.kron(sp.csr_matrix(np.ones((1, grid.npoints))),
                         sp.identity(fd, format="csr"), format="csr")
    cancellation = float(np.max(np.abs(as_dense(aggregator @ gam)))) * grid.h**grid.n

    pi = triple.pi
    range_pi, _ = orthonormal_range(pi)
    if range_pi.shape[1] == 0:
        coercivity = float("nan")
    else:
        grad = grad_operator(grid, triple.layout).matrix
        a = as_dense(pi @ range_pi)
        b = as_dense(grad @ range_pi)
        gram_pi = a.conj().T @ a
        gram_grad = b.conj().T @ b
        try:
            vals = sla.eigh(gram_pi, gram_grad, eigvals_only=True)
        except sla.LinAlgError as exc:
            raise DecompositionError(f"coercivity eigenproblem failed: {exc}") from exc
        coercivity = float(np.sqrt(max(vals[0], 0.0)))

    rng = np.random.default_rng(seed)
    loc_bound = 0.0
    dim = triple.dim
    for _ in range(sample_count):
        eta = _random_lipschitz_eta(grid, rng)
        grad_max = _max_discrete_gradient(grid, eta)
        if grad_max == 0:
            continue
        u = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        eta_flat = np.repeat(eta, fd)
        commutator = gam @ (eta_flat * u) - eta_flat * (gam @ u)
        loc_bound = max(loc_bound, np.linalg.norm(commutator)
                        / (grad_max * np.linalg.norm(u)))

    return HypothesisReport(
        nilpotency_residual=float(nilpotency),
        kappa1=kappa1, omega1=omega1, kappa2=kappa2, omega2=omega2,
        h3_residuals=(float(h3a), float(h3b)),
        cancellation_residual=cancellation,
        coercivity_constant=coercivity,
        localisation_bound=float(loc_bound),
    )
