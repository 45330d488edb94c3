"""Lipkin and coupled-top Hamiltonians, spectra and level densities."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

from .spin_algebra import (
    HermitianOperator,
    SectorIsometry,
    SpinBasis,
    TensorBasis,
    build_collective_ops,
    build_sector,
)

LIPKIN_SECTORS = ("even", "odd", "full")
COUPLED_TOP_SECTORS = ("V++", "V+-", "V-+", "V--", "full")


@dataclass(frozen=True)
class LipkinSpec:
    """Lipkin model with ``N`` spins-1/2 (collective spin j = N/2) and field ``kappa``."""

    N: int
    kappa: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2 or self.N % 2:
            raise ValueError(f"Lipkin N must be an even integer >= 2, got {self.N!r}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def j(self) -> float:
        return self.N / 2


@dataclass(frozen=True)
class CoupledTopSpec:
    """Two equal spins j coupled through (xi / j) J1x J2x; j is restricted to integers."""

    j: int
    xi: float

    def __post_init__(self):
        if int(self.j) != self.j or self.j < 1:
            raise ValueError(f"coupled-top j must be a positive integer, got {self.j!r}")
        if self.xi < 0:
            raise ValueError(f"coupling xi must be >= 0, got {self.xi!r}")
        object.__setattr__(self, "j", int(self.j))
        object.__setattr__(self, "xi", float(self.xi))


def _check_choice(value, allowed, what):
    if value not in allowed:
        raise ValueError(f"unknown {what} {value!r}; expected one of {allowed}")


@lru_cache(maxsize=32)
def lipkin_sector(N: int, sector: str) -> Optional[SectorIsometry]:
    """Parity isometry for the Lipkin model (None for the full space)."""
    _check_choice(sector, LIPKIN_SECTORS, "Lipkin sector")
    if sector == "full":
        return None
    return build_sector(SpinBasis(N / 2), parity=1 if sector == "even" else -1)


@lru_cache(maxsize=16)
def coupled_top_sector(j: int, sector: str) -> Optional[SectorIsometry]:
    """(permutation, parity) isometry; ``"V+-"`` means permutation +1, parity -1."""
    _check_choice(sector, COUPLED_TOP_SECTORS, "coupled-top sector")
    if sector == "full":
        return None
    perm = 1 if sector[1] == "+" else -1
    par = 1 if sector[2] == "+" else -1
    return build_sector(TensorBasis(j, j), parity=par, permutation=perm)


def lipkin_matrix(N: int, coupling: float, field: float) -> np.ndarray:
    """Full-space matrix of -(4 coupling / N) Jx^2 + field (Jz + N/2)."""
    ops = build_collective_ops(SpinBasis(N / 2))
    jx = ops.Jx.matrix
    return -(4.0 * coupling / N) * (jx @ jx) + field * (ops.Jz.matrix + (N / 2) * np.eye(N + 1))


def lipkin_hamiltonian(spec: LipkinSpec, sector: str = "even", extra_field: float = 0.0) -> HermitianOperator:
    """Lipkin Hamiltonian restricted to a parity sector.

    ``extra_field`` adds eta (Jz + N/2), which is how the post-quench
    Hamiltonian is formed.
    """
    _check_choice(sector, LIPKIN_SECTORS, "Lipkin sector")
    full = lipkin_matrix(spec.N, 1.0 - spec.kappa, spec.kappa + extra_field)
    iso = lipkin_sector(spec.N, sector)
    if iso is None:
        return HermitianOperator(full, SpinBasis(spec.j))
    return iso.restrict(full)


@lru_cache(maxsize=8)
def _coupled_top_terms(j: int):
    ops = build_collective_ops(SpinBasis(j))
    jx = sp.csr_matrix(ops.Jx.matrix)
    jz = sp.csr_matrix(ops.Jz.matrix)
    eye = sp.identity(2 * j + 1, format="csr")
    fields = sp.kron(jz, eye, format="csr") + sp.kron(eye, jz, format="csr")
    coupling = sp.kron(jx, jx, format="csr") / j
    return fields, coupling


def coupled_top_sparse(j: int, xi: float) -> sp.csr_matrix:
    """Full tensor-space H_ct as a sparse matrix (construction aid only)."""
    fields, coupling = _coupled_top_terms(j)
    return (fields + xi * coupling).tocsr()


def coupled_top_hamiltonian(spec: CoupledTopSpec, sector: str = "V++") -> HermitianOperator:
    """H_ct = J1z + J2z + (xi/j) J1x J2x, dense, in the requested sector."""
    _check_choice(sector, COUPLED_TOP_SECTORS, "coupled-top sector")
    full = coupled_top_sparse(spec.j, spec.xi)
    iso = coupled_top_sector(spec.j, sector)
    if iso is None:
        return HermitianOperator(full.toarray(), TensorBasis(spec.j, spec.j))
    return iso.restrict(full)


def spectrum(op: HermitianOperator) -> np.ndarray:
    """Ascending eigenvalues."""
    return np.linalg.eigvalsh(op.matrix)


@dataclass(frozen=True, eq=False)
class SpectrumHistogram:
    """Gaussian-broadened level density on a rescaled energy axis.

    The axis is ``x = E * energy_scale`` and ``density`` is
    ``omega(E) * density_scale`` averaged over each bin, so
    ``sum(density * widths) / (energy_scale * density_scale)`` counts levels.
    """

    bin_edges: np.ndarray
    density: np.ndarray
    level_count: int
    smoothing_width: float
    energy_scale: float = 1.0
    density_scale: float = 1.0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def integral(self) -> float:
        return float(np.sum(self.density * self.widths) / (self.energy_scale * self.density_scale))


def density_of_states(
    levels,
    energy_scale: float = 1.0,
    density_scale: float = 1.0,
    bins: Optional[int] = None,
    smoothing_width: Optional[float] = None,
    width_factor: float = 1.0,
    padding: float = 4.0,
) -> SpectrumHistogram:
    """Level density with Gaussian broadening, integrated exactly over each bin.

    ``bins`` defaults to round(sqrt(level count)); the kernel width, on the
    rescaled axis, defaults to ``width_factor * span / bins``. The binned range
    is the spectral span widened by ``padding`` kernel widths on each side, so
    broadening does not leak weight off the ends.
    """
    x = np.sort(np.asarray(levels, dtype=float)) * energy_scale
    n = x.size
    if n < 2:
        raise ValueError("need at least two levels")
    if bins is None:
        bins = int(round(np.sqrt(n)))
    if bins < 10:
        raise ValueError(f"bins must be >= 10, got {bins}")
    span = x[-1] - x[0]
    if span <= 0:
        raise ValueError("degenerate spectrum has zero span")
    sigma = width_factor * span / bins if smoothing_width is None else float(smoothing_width)
    if sigma <= 0:
        raise ValueError("smoothing width must be positive")
    edges = np.linspace(x[0] - padding * sigma, x[-1] + padding * sigma, bins + 1)
    # cumulative Gaussian mass of every level below every edge
    cdf = 0.5 * (1.0 + erf((edges[:, None] - x[None, :]) / (np.sqrt(2.0) * sigma)))
    counts = np.diff(cdf.sum(axis=1))
    density = counts / np.diff(edges) * energy_scale * density_scale
    return SpectrumHistogram(edges, density, n, sigma, energy_scale, density_scale)


@dataclass(frozen=True, eq=False)
class DensityDerivative:
    centers: np.ndarray
    values: np.ndarray


def dos_derivative(hist: SpectrumHistogram) -> DensityDerivative:
    """Derivative of the binned density along the rescaled axis.

    Central differences on bin centers, one-sided at the two ends.
    """
    centers = hist.centers
    return DensityDerivative(centers, np.gradient(hist.density, centers))


def local_extrema(x, y, kind: str = "both"):
    """Interior local extrema of a sampled curve as (positions, values, kinds)."""
    y = np.asarray(y)
    x = np.asarray(x)
    maxima = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    minima = np.flatnonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:])) + 1
    if kind == "max":
        idx, tags = maxima, ["max"] * maxima.size
    elif kind == "min":
        idx, tags = minima, ["min"] * minima.size
    else:
        idx = np.concatenate([maxima, minima])
        tags = ["max"] * maxima.size + ["min"] * minima.size
        order = np.argsort(idx)
        idx = idx[order]
        tags = [tags[i] for i in order]
    return x[idx], y[idx], tags
