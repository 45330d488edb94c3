"""Sudden quenches: eigensystems, evolved and long-time-averaged states.

Lipkin quenches live in the even parity sector; coupled-top quenches live in
V++ and are embedded into the tensor basis before the second spin is traced
out.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla

from .cache import EigenCache
from .errors import NumericalToleranceError
from .husimi import HusimiField, husimi_of_factors, husimi_of_state
from .models import (
    CoupledTopSpec,
    LipkinSpec,
    coupled_top_hamiltonian,
    coupled_top_sector,
    lipkin_hamiltonian,
    lipkin_sector,
)
from .phase_space import PhaseSpaceGrid
from .spin_algebra import HermitianOperator, SectorIsometry

MODELS = ("lipkin", "coupled-top")
DEFAULT_TIMES = (0.0, 1.0, 3.0, 10.0, 30.0, 100.0)
RESIDUAL_TOL = 1e-9
ORTHO_TOL = 1e-10
DEGENERACY_REL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ascending eigenvalues and orthonormal eigenvector columns of one sector."""

    values: np.ndarray
    vectors: np.ndarray
    tag: dict

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def span(self) -> float:
        return float(self.values[-1] - self.values[0]) if self.dim > 1 else 0.0

    def residuals(self, op: HermitianOperator):
        """(max |H V - V L| / max |H|, max |V^T V - I|)."""
        mat = op.matrix
        scale = max(float(np.max(np.abs(mat))), np.finfo(float).tiny)
        res = float(np.max(np.abs(mat @ self.vectors - self.vectors * self.values))) / scale
        gram = self.vectors.conj().T @ self.vectors
        ortho = float(np.max(np.abs(gram - np.eye(self.dim))))
        return res, ortho

    def check(self, op: HermitianOperator) -> None:
        res, ortho = self.residuals(op)
        if res > RESIDUAL_TOL or ortho > ORTHO_TOL:
            raise NumericalToleranceError(f"eigensystem {self.tag}: residual {res:.2e}, orthonormality {ortho:.2e}")


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column real positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    pivot = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.abs(pivot) / pivot)


def diagonalize(op: HermitianOperator, tag: Optional[dict] = None,
                cache: Optional[EigenCache] = None, check: bool = True) -> EigenSystem:
    """Full eigen-decomposition, through the cache when ``tag`` and ``cache`` are given."""
    tag = dict(tag or {})
    tag.setdefault("dim", op.dim)

    def compute():
        w, v = np.linalg.eigh(op.matrix)
        return w, _fix_signs(v)

    if cache is not None and tag:
        w, v = cache.get_or_compute(tag, compute)
        if v.shape != (op.dim, op.dim):
            raise NumericalToleranceError(f"cached eigensystem {tag} has shape {v.shape}, expected {op.dim}")
    else:
        w, v = compute()
    eig = EigenSystem(w, v, tag)
    if check:
        eig.check(op)
    return eig


# ---------------------------------------------------------------- protocol


@dataclass(frozen=True)
class QuenchSpec:
    """Sudden quench of a Lipkin field or a coupled-top coupling.

    lipkin: ``size`` = N, ``initial`` = kappa, ``final`` = eta (added field).
    coupled-top: ``size`` = j, ``initial`` = xi0, ``final`` = xi1.
    ``require_esqpt`` enforces 0 < kappa < 4/5, or xi0 > 1.
    """

    model: str
    size: int
    initial: float
    final: float
    require_esqpt: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        object.__setattr__(self, "initial", float(self.initial))
        object.__setattr__(self, "final", float(self.final))
        self.initial_spec()
        if self.model == "lipkin":
            if self.final < 0:
                raise ValueError(f"quench field eta must be >= 0, got {self.final!r}")
            if self.require_esqpt and not 0.0 < self.initial < 0.8:
                raise ValueError(f"ESQPT quench needs 0 < kappa < 4/5, got {self.initial!r}")
        else:
            if self.final < 0:
                raise ValueError(f"post-quench coupling must be >= 0, got {self.final!r}")
            if self.require_esqpt and not self.initial > 1.0:
                raise ValueError(f"ESQPT quench needs xi0 > 1, got {self.initial!r}")

    def initial_spec(self) -> Union[LipkinSpec, CoupledTopSpec]:
        if self.model == "lipkin":
            return LipkinSpec(self.size, self.initial)
        return CoupledTopSpec(self.size, self.initial)

    @property
    def sector(self) -> str:
        return "even" if self.model == "lipkin" else "V++"

    @property
    def isometry(self) -> SectorIsometry:
        if self.model == "lipkin":
            return lipkin_sector(self.size, "even")
        return coupled_top_sector(self.size, "V++")

    @property
    def j(self) -> float:
        return self.size / 2 if self.model == "lipkin" else float(self.size)

    def with_final(self, value: float) -> "QuenchSpec":
        return dataclasses.replace(self, final=value)

    def initial_hamiltonian(self) -> HermitianOperator:
        return sector_hamiltonian(self.initial_spec(), self.sector)

    def final_hamiltonian(self) -> HermitianOperator:
        if self.model == "lipkin":
            return lipkin_hamiltonian(self.initial_spec(), self.sector, extra_field=self.final)
        return coupled_top_hamiltonian(CoupledTopSpec(self.size, self.final), self.sector)

    def final_key(self) -> dict:
        if self.model == "lipkin":
            k = self.initial
            params = {"N": self.size, "coupling": 1.0 - k, "field": k + self.final}
        else:
            params = {"j": self.size, "xi": self.final}
        return {"model": self.model, "sector": self.sector, "params": params}


def sector_hamiltonian(spec, sector: Optional[str] = None) -> HermitianOperator:
    if isinstance(spec, LipkinSpec):
        return lipkin_hamiltonian(spec, sector or "even")
    if isinstance(spec, CoupledTopSpec):
        return coupled_top_hamiltonian(spec, sector or "V++")
    raise TypeError(f"unsupported model spec {type(spec).__name__}")


def prepare_ground_state(spec, sector: Optional[str] = None, degeneracy_tol: float = 1e-8) -> np.ndarray:
    """Lowest eigenvector of the sector Hamiltonian (sector basis).

    Passing ``sector="full"`` diagonalizes the whole space; if the bottom
    levels then form a near-degenerate cluster, the component in the
    symmetric sector (even, or V++) is returned, renormalized.
    """
    op = sector_hamiltonian(spec, sector)
    w, v = sla.eigh(op.matrix, subset_by_index=[0, min(1, op.dim - 1)])
    psi = v[:, 0]
    if sector == "full" and w.size > 1:
        scale = max(1.0, float(np.max(np.abs(op.matrix))))
        if w[1] - w[0] < degeneracy_tol * scale:
            iso = lipkin_sector(spec.N, "even") if isinstance(spec, LipkinSpec) else coupled_top_sector(spec.j, "V++")
            proj = iso.embed(iso.project(v))
            norms = np.linalg.norm(proj, axis=0)
            psi = proj[:, int(np.argmax(norms))]
            psi = psi / np.linalg.norm(psi)
    return _fix_signs(psi[:, None])[:, 0]


@dataclass(frozen=True, eq=False)
class OverlapProfile:
    """c_n = <E_n|psi0> for the post-quench eigenbasis."""

    amplitudes: np.ndarray
    energies: np.ndarray
    mean_energy: float

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def sum_rule_residual(self) -> float:
        weighted = float(np.dot(self.probabilities, self.energies))
        return abs(weighted - self.mean_energy) / max(1.0, abs(self.mean_energy))


def overlap_profile(psi0: np.ndarray, eig: EigenSystem, final_op: HermitianOperator) -> OverlapProfile:
    amps = eig.vectors.conj().T @ psi0
    total = float(np.sum(np.abs(amps) ** 2))
    if abs(total - 1.0) > 1e-10:
        raise NumericalToleranceError(f"overlap probabilities sum to {total!r}")
    mean = float(np.real(np.vdot(psi0, final_op.matrix @ psi0)))
    return OverlapProfile(amps, eig.values.copy(), mean)


def energy_clusters(values: np.ndarray, tol: float) -> list:
    """Consecutive index groups of an ascending spectrum with gaps below ``tol``."""
    if values.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(values) > tol) + 1
    return np.split(np.arange(values.size), breaks)


@dataclass(frozen=True, eq=False)
class DiagonalEnsemble:
    """rho_bar = sum_c |phi_c><phi_c| with phi_c the projection of psi0 on cluster c."""

    cluster_vectors: np.ndarray
    clusters: list
    degeneracy_tol: float

    @property
    def density(self) -> np.ndarray:
        phi = self.cluster_vectors
        return phi @ phi.conj().T

    def trace(self) -> float:
        return float(np.sum(np.abs(self.cluster_vectors) ** 2))

    def commutator_norm(self, op: HermitianOperator) -> float:
        rho = self.density
        return float(np.max(np.abs(rho @ op.matrix - op.matrix @ rho)))


def diagonal_ensemble(overlaps: OverlapProfile, eig: EigenSystem,
                      degeneracy_tol: Optional[float] = None) -> DiagonalEnsemble:
    """Dephase across energy clusters and keep coherences inside each one.

    ``degeneracy_tol`` defaults to 1e-10 times the spectral span.
    """
    tol = DEGENERACY_REL_TOL * eig.span if degeneracy_tol is None else float(degeneracy_tol)
    clusters = energy_clusters(eig.values, tol)
    amps = overlaps.amplitudes
    phi = np.stack([eig.vectors[:, c] @ amps[c] for c in clusters], axis=1)
    return DiagonalEnsemble(phi, clusters, tol)


# ---------------------------------------------------------------- traces


def _square_dim(n: int) -> int:
    d = int(round(np.sqrt(n)))
    if d * d != n or d < 2:
        raise ValueError(f"dimension {n} is not the square of a spin dimension")
    return d


def partial_trace_first(rho: np.ndarray, j=None) -> np.ndarray:
    """Tr_2 of a density operator on two equal spins (keeps spin 1)."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density operator must be square")
    d = _square_dim(rho.shape[0])
    if j is not None and d != int(round(2 * j)) + 1:
        raise ValueError(f"dimension {rho.shape[0]} does not match two spins j={j}")
    return np.einsum("akbk->ab", rho.reshape(d, d, d, d))


def partial_trace_second(rho: np.ndarray, j=None) -> np.ndarray:
    """Tr_1 (keeps spin 2)."""
    rho = np.asarray(rho)
    d = _square_dim(rho.shape[0])
    if j is not None and d != int(round(2 * j)) + 1:
        raise ValueError(f"dimension {rho.shape[0]} does not match two spins j={j}")
    return np.einsum("kakb->ab", rho.reshape(d, d, d, d))


def reduced_factors(full_vectors: np.ndarray) -> np.ndarray:
    """F with F F^dagger = Tr_2 sum_c |v_c><v_c| for tensor-basis columns v_c."""
    full_vectors = np.asarray(full_vectors)
    if full_vectors.ndim == 1:
        full_vectors = full_vectors[:, None]
    d = _square_dim(full_vectors.shape[0])
    # v[i1 * d + i2] -> M[i1, i2]; stack the columns side by side
    mats = full_vectors.reshape(d, d, -1)
    return mats.reshape(d, -1)


def reduced_from_vectors(full_vectors: np.ndarray) -> np.ndarray:
    f = reduced_factors(full_vectors)
    return f @ f.conj().T


# ---------------------------------------------------------------- runs


@dataclass(frozen=True, eq=False)
class PreparedQuench:
    spec: QuenchSpec
    psi0: np.ndarray
    final_op: HermitianOperator
    eigensystem: EigenSystem
    overlaps: OverlapProfile

    def evolve(self, times) -> np.ndarray:
        """Sector-basis states, one column per time."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        phases = np.exp(-1j * np.outer(self.eigensystem.values, t))
        return self.eigensystem.vectors @ (phases * self.overlaps.amplitudes[:, None])

    def energy_expectation(self, times) -> np.ndarray:
        psi = self.evolve(times)
        return np.real(np.sum(psi.conj() * (self.final_op.matrix @ psi), axis=0))

    def full_vectors(self, sector_vectors: np.ndarray) -> np.ndarray:
        return self.spec.isometry.embed(sector_vectors)

    def single_spin_factors(self, sector_vectors: np.ndarray) -> np.ndarray:
        """Factor of the single-spin state whose Husimi field is plotted."""
        full = self.full_vectors(sector_vectors)
        if self.spec.model == "lipkin":
            return full
        return reduced_factors(full)


def prepare_quench(spec: QuenchSpec, cache: Optional[EigenCache] = None) -> PreparedQuench:
    psi0 = prepare_ground_state(spec.initial_spec(), spec.sector)
    final_op = spec.final_hamiltonian()
    eig = diagonalize(final_op, spec.final_key(), cache)
    return PreparedQuench(spec, psi0, final_op, eig, overlap_profile(psi0, eig, final_op))


def _as_prepared(quench, cache) -> PreparedQuench:
    return quench if isinstance(quench, PreparedQuench) else prepare_quench(quench, cache)


def initial_husimi(quench, grid: PhaseSpaceGrid, override_grid_check: bool = False,
                   cache: Optional[EigenCache] = None) -> HusimiField:
    prep = _as_prepared(quench, cache)
    return husimi_of_factors(prep.single_spin_factors(prep.psi0), grid, override_grid_check)


def evolved_husimi(quench, t: float, grid: PhaseSpaceGrid, override_grid_check: bool = False,
                   cache: Optional[EigenCache] = None) -> HusimiField:
    """Husimi field of the (reduced) state at time ``t``."""
    prep = _as_prepared(quench, cache)
    psi_t = prep.evolve(t)[:, 0]
    return husimi_of_factors(prep.single_spin_factors(psi_t), grid, override_grid_check)


def evolved_husimi_series(quench, times: Sequence[float] = DEFAULT_TIMES, grid: PhaseSpaceGrid = None,
                          override_grid_check: bool = False, cache: Optional[EigenCache] = None) -> list:
    prep = _as_prepared(quench, cache)
    return [evolved_husimi(prep, t, grid, override_grid_check) for t in times]


def averaged_density(quench, degeneracy_tol: Optional[float] = None, cache: Optional[EigenCache] = None):
    """(single-spin rho_bar, its factor or None, the DiagonalEnsemble)."""
    prep = _as_prepared(quench, cache)
    ens = diagonal_ensemble(prep.overlaps, prep.eigensystem, degeneracy_tol)
    full = prep.full_vectors(ens.cluster_vectors)
    if prep.spec.model == "lipkin":
        return full @ full.conj().T, full, ens
    return reduced_from_vectors(full), None, ens


def averaged_husimi(quench, grid: PhaseSpaceGrid, degeneracy_tol: Optional[float] = None,
                    override_grid_check: bool = False, cache: Optional[EigenCache] = None) -> HusimiField:
    """Husimi field of rho_bar (Lipkin) or Tr_2 rho_bar (coupled top)."""
    rho, factors, _ = averaged_density(quench, degeneracy_tol, cache)
    rho = 0.5 * (rho + rho.conj().T)
    field = husimi_of_state(rho, grid, override_grid_check)
    if factors is not None and factors.shape[1] < factors.shape[0]:
        field = dataclasses.replace(field, factors=factors)
    return field


def weighted_eigenstate_husimi(quench, grid: PhaseSpaceGrid, override_grid_check: bool = False,
                               cache: Optional[EigenCache] = None) -> np.ndarray:
    """sum_n |c_n|^2 Q_n, built eigenstate by eigenstate (no cluster coherences)."""
    prep = _as_prepared(quench, cache)
    weights = np.sqrt(prep.overlaps.probabilities)
    scaled = prep.eigensystem.vectors * weights
    return husimi_of_factors(prep.single_spin_factors(scaled), grid, override_grid_check).values
