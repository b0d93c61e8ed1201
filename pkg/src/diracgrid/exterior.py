"""Complex exterior algebra over R^n for small n.

Form-basis elements are indexed by bitmasks: bit ``k-1`` set means the axis
``k`` covector is a factor.  The global basis order is by increasing bitmask
value; this order is part of the on-disk format and must not change.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ArgumentError

PD_EIGENVALUE_FLOOR = 1e-12


def degree(bits: int) -> int:
    """Number of factors of the basis element encoded by ``bits``."""
    return int(bits).bit_count()


def basis_masks(n: int):
    """All form-basis bitmasks for dimension ``n``, in global order."""
    return list(range(1 << n))


def masks_of_degree(n: int, k: int):
    """Bitmasks of degree-``k`` basis elements, in global (bitmask) order."""
    return [m for m in range(1 << n) if degree(m) == k]


def axes_of(bits: int):
    """Sorted axis labels (1-based) present in ``bits``."""
    return [k + 1 for k in range(int(bits).bit_length()) if bits >> k & 1]


def insertion_sign(k: int, bits: int, n: int) -> int:
    """Sign of wedging the axis-``k`` covector onto the element ``bits``.

    Returns ``+1`` or ``-1``, and ``0`` when the factor is absorbed
    (``k`` already present, so the wedge vanishes).  The sign is
    ``(-1)**#{j in bits : j < k}``, which places the new factor in sorted
    position.
    """
    if not 1 <= k <= n:
        raise ArgumentError(f"axis {k} out of range 1..{n}")
    if bits >> (k - 1) & 1:
        return 0
    below = bits & ((1 << (k - 1)) - 1)
    return -1 if degree(below) % 2 else 1


@dataclass(frozen=True)
class FiberLayout:
    """Shape of the fiber over each grid point.

    ``fiber_dim`` is ``2**n`` for the full form bundle, or the dimension of a
    designated sub-bundle for block constructions.
    """

    n: int
    fiber_dim: int

    def __post_init__(self):
        if self.fiber_dim < 1:
            raise ArgumentError("fiber_dim must be >= 1")

    @classmethod
    def full(cls, n: int) -> "FiberLayout":
        return cls(n, 1 << n)

    @property
    def is_full_bundle(self) -> bool:
        return self.fiber_dim == 1 << self.n


def _minor_det(g: np.ndarray, rows, cols) -> complex:
    if not rows:
        return 1.0
    sub = g[np.ix_([r - 1 for r in rows], [c - 1 for c in cols])]
    return complex(np.linalg.det(sub))


@dataclass(frozen=True)
class FormGram:
    """Gram matrices induced on each form degree by a 1-form Gram matrix.

    ``blocks[k]`` is Hermitian positive definite on the degree-``k`` basis
    (bitmask order within the degree); entry (S, T) is the minor det(G[S, T]).
    """

    n: int
    blocks: tuple

    def block(self, k: int) -> np.ndarray:
        return self.blocks[k]

    def full(self) -> np.ndarray:
        """Gram matrix on the full 2^n-dimensional fiber, global basis order."""
        dim = 1 << self.n
        out = np.zeros((dim, dim), dtype=complex)
        for k in range(self.n + 1):
            idx = masks_of_degree(self.n, k)
            out[np.ix_(idx, idx)] = self.blocks[k]
        return out


def gram_on_forms(g: np.ndarray) -> FormGram:
    """Extend a Hermitian positive-definite 1-form Gram matrix to all degrees.

    The degree-k block entry for basis elements S, T is the minor
    ``det(G[S, T])``; the degree-0 block is the scalar 1.
    """
    g = np.asarray(g, dtype=complex)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ArgumentError("G must be a square matrix")
    n = g.shape[0]
    if np.linalg.norm(g - g.conj().T) > 1e-12 * max(np.linalg.norm(g), 1.0):
        raise ArgumentError("G must be Hermitian")
    eigs = np.linalg.eigvalsh(g)
    if eigs.min() <= PD_EIGENVALUE_FLOOR * max(eigs.max(), 1.0):
        raise ArgumentError("G must be positive definite")

    blocks = []
    for k in range(n + 1):
        members = [tuple(c) for c in combinations(range(1, n + 1), k)]
        # combinations of sorted axes enumerate masks in bitmask order only
        # after re-sorting by mask value
        masks = masks_of_degree(n, k)
        by_mask = {sum(1 << (a - 1) for a in c): c for c in members}
        dim = len(masks)
        blk = np.empty((dim, dim), dtype=complex)
        for i, ms in enumerate(masks):
            for j, mt in enumerate(masks):
                blk[i, j] = _minor_det(g, by_mask[ms], by_mask[mt])
        blocks.append(blk)
    return FormGram(n=n, blocks=tuple(blocks))
