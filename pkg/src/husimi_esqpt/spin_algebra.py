"""Dense angular-momentum algebra in the |j, m> basis.

Conventions used throughout the package:

* a single spin basis is ordered by m ascending, ``index = j + m``;
* a two-spin tensor basis is row-major over (m1, m2), i.e. ``index = i1 * d2 + i2``
  with m1 the outer (slow) label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

HERMITICITY_TOL = 1e-12
ISOMETRY_TOL = 1e-10


def as_spin(j) -> float:
    """Validate a spin magnitude and return it as a float (2j must be a positive integer)."""
    try:
        twice = 2 * float(Fraction(j)) if isinstance(j, (str, Fraction)) else 2 * float(j)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"spin must be a half-integer, got j={j!r}") from exc
    if not np.isfinite(twice) or abs(twice - round(twice)) > 1e-12:
        raise ValueError(f"spin must be a half-integer, got j={j!r}")
    if round(twice) < 1:
        raise ValueError(f"spin must be >= 1/2, got j={j!r}")
    return round(twice) / 2


@dataclass(frozen=True)
class SpinBasis:
    j: float
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "j", as_spin(self.j))
        object.__setattr__(self, "dim", int(round(2 * self.j)) + 1)

    @property
    def m(self) -> np.ndarray:
        return np.arange(self.dim) - self.j


@dataclass(frozen=True)
class TensorBasis:
    j1: float
    j2: float
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "j1", as_spin(self.j1))
        object.__setattr__(self, "j2", as_spin(self.j2))
        object.__setattr__(self, "dim", self.first.dim * self.second.dim)

    @property
    def first(self) -> SpinBasis:
        return SpinBasis(self.j1)

    @property
    def second(self) -> SpinBasis:
        return SpinBasis(self.j2)

    def index(self, i1: int, i2: int) -> int:
        return i1 * self.second.dim + i2


Basis = Union[SpinBasis, TensorBasis]


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense Hermitian matrix tagged with the basis it acts on.

    Real-valued input is stored as float64 so real symmetric Hamiltonians
    go through the real eigensolver.
    """

    matrix: np.ndarray
    basis: Optional[Basis] = None

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if np.iscomplexobj(mat) and np.any(mat.imag != 0):
            mat = mat.astype(complex)
        else:
            mat = np.array(mat.real, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError(f"operator must be square, got shape {mat.shape}")
        if self.basis is not None and mat.shape[0] != self.basis.dim:
            raise ValueError(f"matrix dim {mat.shape[0]} does not match basis dim {self.basis.dim}")
        dev = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
        if dev > HERMITICITY_TOL * max(1.0, np.max(np.abs(mat))):
            raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator(self.matrix + other.matrix, self.basis)

    def __sub__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator(self.matrix - other.matrix, self.basis)

    def scaled(self, factor: float) -> "HermitianOperator":
        return HermitianOperator(float(factor) * self.matrix, self.basis)

    def __matmul__(self, other):
        if isinstance(other, HermitianOperator):
            return self.matrix @ other.matrix
        return self.matrix @ other

    def to_array(self) -> np.ndarray:
        """Writable copy of the matrix."""
        return self.matrix.copy()


@dataclass(frozen=True)
class CollectiveOps:
    """Spin components and the ladder pair for one spin."""

    basis: SpinBasis
    Jx: HermitianOperator
    Jy: HermitianOperator
    Jz: HermitianOperator
    Jp: np.ndarray
    Jm: np.ndarray


def build_collective_ops(basis: Union[SpinBasis, float]) -> CollectiveOps:
    """Build Jx, Jy, Jz and J+/J- for a single spin (m ascending)."""
    if not isinstance(basis, SpinBasis):
        basis = SpinBasis(basis)
    j, m = basis.j, basis.m
    # <j, m+1 | J+ | j, m> sits at row index+1, column index
    ladder = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    jp = np.diag(ladder, k=-1)
    jm = jp.T.copy()
    jx = 0.5 * (jp + jm)
    jy = (jp - jm) / 2j
    jz = np.diag(m)
    for arr in (jp, jm):
        arr.setflags(write=False)
    return CollectiveOps(
        basis=basis,
        Jx=HermitianOperator(jx, basis),
        Jy=HermitianOperator(jy, basis),
        Jz=HermitianOperator(jz, basis),
        Jp=jp,
        Jm=jm,
    )


def tensor_embed(op: HermitianOperator, slot: int, tb: TensorBasis) -> HermitianOperator:
    """Embed a single-spin operator into slot 1 (op x I) or slot 2 (I x op)."""
    if slot not in (1, 2):
        raise ValueError(f"slot must be 1 or 2, got {slot}")
    target = tb.first if slot == 1 else tb.second
    if op.dim != target.dim:
        raise ValueError(f"operator dim {op.dim} does not match slot {slot} dim {target.dim}")
    if slot == 1:
        mat = np.kron(op.matrix, np.eye(tb.second.dim))
    else:
        mat = np.kron(np.eye(tb.first.dim), op.matrix)
    return HermitianOperator(mat, tb)


def parity_diagonal(basis: Basis) -> np.ndarray:
    """Diagonal of the parity operator exp(i pi (sum_k j_k - m_k)) as +-1 signs."""
    if isinstance(basis, SpinBasis):
        k = np.arange(basis.dim)
        # j - m = 2j - (j + m) = 2j - index
        return np.where((int(round(2 * basis.j)) - k) % 2 == 0, 1.0, -1.0)
    i1, i2 = np.divmod(np.arange(basis.dim), basis.second.dim)
    excit = int(round(2 * basis.j1)) - i1 + int(round(2 * basis.j2)) - i2
    return np.where(excit % 2 == 0, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class SectorIsometry:
    """Orthonormal columns spanning one symmetry sector of a larger space.

    The map (full_dim x sector_dim) is held sparse because each column has
    at most two nonzeros; ``map`` gives the dense array. Sector operators
    are ``map^T @ H @ map``.
    """

    sparse: sp.csr_matrix
    basis: Basis
    parity: int
    permutation: Optional[int] = None

    @property
    def map(self) -> np.ndarray:
        return self.sparse.toarray()

    @property
    def dim(self) -> int:
        return self.sparse.shape[1]

    @property
    def full_dim(self) -> int:
        return self.sparse.shape[0]

    def restrict(self, op) -> HermitianOperator:
        """Sector block of ``op`` (HermitianOperator, dense or sparse matrix)."""
        mat = op.matrix if isinstance(op, HermitianOperator) else op
        sub = self.sparse.T @ (mat @ self.sparse)
        sub = sub.toarray() if sp.issparse(sub) else np.asarray(sub)
        return HermitianOperator(0.5 * (sub + sub.conj().T))

    def embed(self, vectors: np.ndarray) -> np.ndarray:
        """Map sector vectors (sector_dim, ...) into the full basis."""
        return np.asarray(self.sparse @ vectors)

    def project(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(self.sparse.T @ vectors)

    def isometry_residual(self) -> float:
        if self.dim == 0:
            return 0.0
        gram = (self.sparse.T @ self.sparse).toarray()
        return float(np.max(np.abs(gram - np.eye(self.dim))))


def build_sector(basis: Union[Basis, float], parity: int, permutation: Optional[int] = None) -> SectorIsometry:
    """Isometry onto the (parity, permutation) sector.

    Columns are symmetrized basis vectors, ordered by the smallest full-basis
    index they touch. ``permutation`` needs a TensorBasis with equal spins.
    """
    if not isinstance(basis, (SpinBasis, TensorBasis)):
        basis = SpinBasis(basis)
    if parity not in (1, -1):
        raise ValueError(f"parity must be +1 or -1, got {parity}")
    signs = parity_diagonal(basis)

    if permutation is None:
        idx = np.flatnonzero(signs == parity)
        mat = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(basis.dim, idx.size))
        return SectorIsometry(mat, basis, parity, None)

    if permutation not in (1, -1):
        raise ValueError(f"permutation must be +1, -1 or None, got {permutation}")
    if not isinstance(basis, TensorBasis) or basis.j1 != basis.j2:
        raise ValueError("permutation sectors require a tensor basis of two equal spins")
    d = basis.first.dim
    rows, cols, vals = [], [], []
    col = 0
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for i1 in range(d):
        for i2 in range(i1, d):
            a = basis.index(i1, i2)
            if signs[a] != parity:
                continue
            if i1 == i2:
                if permutation == -1:
                    continue
                rows.append(a)
                cols.append(col)
                vals.append(1.0)
            else:
                rows += [a, basis.index(i2, i1)]
                cols += [col, col]
                vals += [inv_sqrt2, permutation * inv_sqrt2]
            col += 1
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, col))
    return SectorIsometry(mat, basis, parity, permutation)


def permutation_matrix(tb: TensorBasis) -> np.ndarray:
    """Swap operator |m1, m2> -> |m2, m1> for equal spins."""
    if tb.j1 != tb.j2:
        raise ValueError("swap needs equal spins")
    d = tb.first.dim
    perm = np.zeros((tb.dim, tb.dim))
    for i1 in range(d):
        for i2 in range(d):
            perm[tb.index(i2, i1), tb.index(i1, i2)] = 1.0
    return perm
