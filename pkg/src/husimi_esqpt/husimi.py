"""Husimi fields of states and density operators, their marginals and measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import xlogy

from .errors import NumericalToleranceError
from .phase_space import (
    DISK_AREA,
    PhaseSpaceGrid,
    check_resolution,
    conj_amplitudes,
    radial_log_amplitudes,
)
from .spin_algebra import as_spin

NORM_TOL = 1e-8
FIELD_NORM_TOL = 1e-6
_CHUNK_ELEMENTS = 4_000_000


def spin_of_dim(dim: int) -> float:
    return (dim - 1) / 2


@dataclass(frozen=True, eq=False)
class HusimiField:
    """Q(p, q) sampled on a grid.

    ``factors`` (dim x rank, possibly None) satisfies rho = F F^dagger and lets
    the same state be re-evaluated on other grids, e.g. for marginals.
    """

    grid: PhaseSpaceGrid
    values: np.ndarray
    j: float
    norm_residual: float
    factors: Optional[np.ndarray] = None
    density: Optional[np.ndarray] = None

    @property
    def prefactor(self) -> float:
        return (2 * self.j + 1) / DISK_AREA

    @property
    def rescaled(self) -> np.ndarray:
        """Q / max Q, for display only."""
        peak = float(np.max(self.values))
        return self.values / peak if peak > 0 else np.zeros_like(self.values)

    def argmax_point(self) -> Tuple[float, float]:
        i = int(np.argmax(self.values))
        return float(self.grid.p[i]), float(self.grid.q[i])


# ---------------------------------------------------------------- evaluation


def _polar_vector_values(j, grid: PhaseSpaceGrid, vectors: np.ndarray) -> np.ndarray:
    """sum_c |<zeta|v_c>|^2 on a polar grid: one FFT over theta per radial node."""
    dim = vectors.shape[0]
    n_r, n_a = grid.n_radial, grid.n_angular
    radial = np.exp(radial_log_amplitudes(j, grid.u_nodes))
    out = np.zeros((n_r, n_a))
    per_vec = n_r * max(n_a, dim)
    step = max(1, _CHUNK_ELEMENTS // per_vec)
    for start in range(0, vectors.shape[1], step):
        block = vectors[:, start:start + step]
        coeff = radial[:, :, None] * block[None, :, :]
        if dim > n_a:
            folded = np.zeros((n_r, n_a, block.shape[1]), dtype=complex)
            np.add.at(folded, (slice(None), np.arange(dim) % n_a), coeff)
            coeff = folded
        amp = np.fft.ifft(coeff, n=n_a, axis=1) * n_a
        out += np.sum(amp.real**2 + amp.imag**2, axis=2)
    return out.ravel()


def _polar_density_values(j, grid: PhaseSpaceGrid, rho: np.ndarray) -> np.ndarray:
    """<zeta|rho|zeta> on a polar grid through its angular Fourier modes.

    Q(u, theta) = sum_d c_d(u) exp(i d theta) with
    c_d(u) = sum_k R_k(u) R_{k-d}(u) rho[k, k-d]; c_{-d} = conj(c_d).
    """
    dim = rho.shape[0]
    n_r, n_a = grid.n_radial, grid.n_angular
    radial = np.exp(radial_log_amplitudes(j, grid.u_nodes))
    modes = np.zeros((n_r, n_a), dtype=complex)
    for d in range(dim):
        diag = np.diagonal(rho, offset=-d)
        if not np.any(diag):
            continue
        cd = (radial[:, d:] * radial[:, :dim - d]) @ diag
        modes[:, d % n_a] += cd if d == 0 else 2.0 * cd
    # only the real part of the two-sided sum survives
    return (np.fft.ifft(modes, axis=1).real * n_a).ravel()


def point_values(j, u, one_minus_u, theta, vectors=None, rho=None) -> np.ndarray:
    """Q at arbitrary points described by (u, 1-u, theta)."""
    dim = int(round(2 * j)) + 1
    n = u.size
    out = np.empty(n)
    width = dim if rho is not None else max(dim, vectors.shape[1])
    step = max(1, _CHUNK_ELEMENTS // width)
    for start in range(0, n, step):
        rows = slice(start, start + step)
        amp = conj_amplitudes(j, u[rows], one_minus_u[rows], theta[rows])
        if rho is not None:
            out[rows] = np.real(np.sum(amp * (amp.conj() @ rho.T), axis=1))
        else:
            proj = amp @ vectors
            out[rows] = np.sum(proj.real**2 + proj.imag**2, axis=1)
    return out


def _direct_values(j, grid: PhaseSpaceGrid, vectors=None, rho=None) -> np.ndarray:
    u = grid.u
    return point_values(j, u, 1.0 - u, grid.theta, vectors, rho)


def husimi_values(j, grid: PhaseSpaceGrid, vectors=None, rho=None) -> np.ndarray:
    """Raw Q values for rho = V V^dagger (``vectors``) or a dense ``rho``."""
    if (vectors is None) == (rho is None):
        raise ValueError("pass exactly one of vectors or rho")
    if vectors is not None:
        vectors = np.asarray(vectors)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        vectors = vectors.astype(complex)
        if grid.is_polar:
            return _polar_vector_values(j, grid, vectors)
        return _direct_values(j, grid, vectors=vectors)
    rho = np.asarray(rho, dtype=complex)
    if grid.is_polar:
        return _polar_density_values(j, grid, rho)
    return _direct_values(j, grid, rho=rho)


def _finish(j, grid, values, factors, density, override) -> HusimiField:
    low = float(np.min(values))
    if low < -1e-10:
        raise NumericalToleranceError(f"Husimi function negative ({low:.3e}) beyond rounding")
    values = np.maximum(values, 0.0)
    resid = abs((2 * j + 1) / DISK_AREA * grid.integrate(values) - 1.0)
    if resid > FIELD_NORM_TOL and not override:
        raise NumericalToleranceError(f"Husimi normalization residual {resid:.3e} exceeds {FIELD_NORM_TOL}")
    values.setflags(write=False)
    return HusimiField(grid, values, j, resid, factors, density)


def validate_state(psi: np.ndarray, tol: float = NORM_TOL) -> np.ndarray:
    psi = np.asarray(psi)
    if psi.ndim != 1:
        raise ValueError("state vector must be one-dimensional")
    dev = abs(np.vdot(psi, psi).real - 1.0)
    if dev > tol:
        raise ValueError(f"state is not normalized (|<psi|psi> - 1| = {dev:.3e})")
    return psi


def validate_density(rho: np.ndarray, tol: float = NORM_TOL) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density operator must be square")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("density operator is not Hermitian")
    dev = abs(np.trace(rho).real - 1.0)
    if dev > tol:
        raise ValueError(f"density operator trace deviates from 1 by {dev:.3e}")
    low = float(np.linalg.eigvalsh(rho)[0])
    if low < -1e-10:
        raise ValueError(f"density operator is not positive semidefinite (min eigenvalue {low:.3e})")
    return rho


def husimi_of_state(operand, grid: PhaseSpaceGrid, override_grid_check: bool = False) -> HusimiField:
    """Q = <zeta|rho|zeta> for a unit vector or a unit-trace PSD matrix."""
    operand = np.asarray(operand)
    j = spin_of_dim(operand.shape[0])
    check_resolution(grid, j, override_grid_check)
    if operand.ndim == 1:
        psi = validate_state(operand)
        values = husimi_values(j, grid, vectors=psi)
        return _finish(j, grid, values, psi[:, None], None, override_grid_check)
    rho = validate_density(operand)
    values = husimi_values(j, grid, rho=rho)
    return _finish(j, grid, values, None, rho, override_grid_check)


def husimi_of_factors(factors: np.ndarray, grid: PhaseSpaceGrid, override_grid_check: bool = False) -> HusimiField:
    """Q for rho = F F^dagger with unnormalized columns (trace checked)."""
    factors = np.asarray(factors)
    if factors.ndim == 1:
        factors = factors[:, None]
    j = spin_of_dim(factors.shape[0])
    check_resolution(grid, j, override_grid_check)
    trace = float(np.sum(np.abs(factors) ** 2))
    if abs(trace - 1.0) > NORM_TOL:
        raise ValueError(f"factorized state has trace {trace!r}, expected 1")
    values = husimi_values(j, grid, vectors=factors)
    return _finish(j, grid, values, factors, None, override_grid_check)


def maximally_mixed(j) -> np.ndarray:
    dim = int(round(2 * as_spin(j))) + 1
    return np.eye(dim) / dim


# ---------------------------------------------------------------- measures


def second_moment(field: HusimiField) -> float:
    """(2j+1)/(4 pi) * integral of Q^2."""
    return field.prefactor * field.grid.integrate(field.values**2)


def wehrl_entropy(field: HusimiField) -> float:
    """-(2j+1)/(4 pi) * integral of Q ln Q, with 0 ln 0 = 0."""
    return -field.prefactor * field.grid.integrate(xlogy(field.values, field.values))


def second_moment_bound(j) -> float:
    """Largest possible M2 (attained by coherent states): (2j+1)/(4j+1)."""
    j = as_spin(j)
    return (2 * j + 1) / (4 * j + 1)


def coherent_wehrl_entropy(j) -> float:
    """Closed-form W of any coherent state under this normalization: 2j/(2j+1)."""
    j = as_spin(j)
    return 2 * j / (2 * j + 1)


# ---------------------------------------------------------------- marginals


def marginal_resolution(j) -> int:
    """Gauss-Legendre order used per axis for marginal integrals."""
    return int(math.ceil(2 * as_spin(j))) + 32


@dataclass(frozen=True, eq=False)
class MarginalGrid:
    """Nodes for axis-wise integrals over the disk.

    The kept axis is x = 2 sin(alpha); along each chord the integrated
    coordinate is y = c sin(phi), c = sqrt(4 - x^2). Both substitutions remove
    the square-root behaviour at the rim, and Gauss-Legendre nodes are used
    in alpha and phi. ``rim`` holds 1 - (x^2 + y^2)/4 = (c cos phi)^2 / 4
    computed without cancellation.
    """

    x: np.ndarray
    x_weights: np.ndarray
    y: np.ndarray
    y_weights: np.ndarray
    rim: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size


def marginal_grid(n: int, n_inner: Optional[int] = None) -> MarginalGrid:
    n_inner = n if n_inner is None else n_inner
    t, wt = np.polynomial.legendre.leggauss(n)
    alpha = 0.5 * np.pi * t
    x = 2.0 * np.sin(alpha)
    wx = 2.0 * np.cos(alpha) * 0.5 * np.pi * wt
    s, ws = np.polynomial.legendre.leggauss(n_inner)
    phi = 0.5 * np.pi * s
    half = 2.0 * np.cos(alpha)
    y = half[:, None] * np.sin(phi)[None, :]
    wy = half[:, None] * np.cos(phi)[None, :] * 0.5 * np.pi * ws[None, :]
    rim = (half[:, None] * np.cos(phi)[None, :]) ** 2 / 4.0
    return MarginalGrid(x, wx, y, wy, rim)


@dataclass(frozen=True, eq=False)
class MarginalDistribution:
    axis: str
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    j: float

    @property
    def prefactor(self) -> float:
        return math.sqrt((2 * self.j + 1) / DISK_AREA)

    def normalization(self) -> float:
        return self.prefactor * math.fsum(self.weights * self.values)

    def second_moment(self) -> float:
        return self.prefactor * math.fsum(self.weights * self.values**2)

    def wehrl_entropy(self) -> float:
        return -self.prefactor * math.fsum(self.weights * xlogy(self.values, self.values))


def marginals(field: HusimiField, n: Optional[int] = None) -> Tuple[MarginalDistribution, MarginalDistribution]:
    """Position and momentum marginals Q(q), Q(p) of a field's state."""
    j = field.j
    mg = marginal_grid(marginal_resolution(j) if n is None else n)
    pref = math.sqrt((2 * j + 1) / DISK_AREA)
    xx = np.broadcast_to(mg.x[:, None], mg.y.shape)
    u = ((xx**2 + mg.y**2) / 4.0).ravel()
    rim = mg.rim.ravel()
    if field.factors is not None and field.factors.shape[1] < field.factors.shape[0]:
        source = {"vectors": field.factors}
    elif field.density is not None:
        source = {"rho": field.density}
    elif field.factors is not None:
        source = {"rho": field.factors @ field.factors.conj().T}
    else:
        raise ValueError("field carries no state to integrate")
    out = []
    for axis in ("q", "p"):
        # theta = atan2(p, q)
        theta = np.arctan2(mg.y, xx) if axis == "q" else np.arctan2(xx, mg.y)
        vals = point_values(j, u, rim, theta.ravel(), **source)
        vals = np.maximum(vals.reshape(mg.y.shape), 0.0)
        line = pref * np.array([math.fsum(row) for row in vals * mg.y_weights])
        out.append(MarginalDistribution(axis, mg.x.copy(), mg.x_weights.copy(), line, j))
    for m in out:
        resid = abs(m.normalization() - 1.0)
        if resid > FIELD_NORM_TOL:
            raise NumericalToleranceError(f"{m.axis}-marginal normalization residual {resid:.3e}")
    return out[0], out[1]


@dataclass(frozen=True)
class MarginalMeasures:
    M2_q: float
    M2_p: float
    W_q: float
    W_p: float
    delta_M2: Optional[float] = None
    delta_W: Optional[float] = None


def marginal_measures(q_marg: MarginalDistribution, p_marg: MarginalDistribution,
                      field: Optional[HusimiField] = None) -> MarginalMeasures:
    m2q, m2p = q_marg.second_moment(), p_marg.second_moment()
    wq, wp = q_marg.wehrl_entropy(), p_marg.wehrl_entropy()
    dm = dw = None
    if field is not None:
        dm = abs(second_moment(field) - m2p * m2q)
        dw = abs(wehrl_entropy(field) - (wp + wq))
    return MarginalMeasures(m2q, m2p, wq, wp, dm, dw)


@dataclass(frozen=True)
class LocalizationMeasures:
    M2: float
    W: float
    M2_q: Optional[float] = None
    M2_p: Optional[float] = None
    W_q: Optional[float] = None
    W_p: Optional[float] = None


def localization_measures(field: HusimiField, with_marginals: bool = False) -> LocalizationMeasures:
    m2, w = second_moment(field), wehrl_entropy(field)
    tol = 1e-6
    if not (-tol <= m2 <= second_moment_bound(field.j) + tol) or w > math.log(2 * field.j + 1) + tol:
        raise NumericalToleranceError(f"measures out of bounds: M2={m2!r}, W={w!r}")
    if not with_marginals:
        return LocalizationMeasures(m2, w)
    mm = marginal_measures(*marginals(field))
    return LocalizationMeasures(m2, w, mm.M2_q, mm.M2_p, mm.W_q, mm.W_p)


# ---------------------------------------------------------------- diagnostics


def antipodal_permutation(grid: PhaseSpaceGrid) -> np.ndarray:
    """Index map node -> node at (-p, -q) for polar grids with even n_angular."""
    if not grid.is_polar or grid.n_angular % 2:
        raise ValueError("antipodal map needs a polar grid with an even angular count")
    idx = np.arange(grid.size).reshape(grid.n_radial, grid.n_angular)
    return np.roll(idx, -grid.n_angular // 2, axis=1).ravel()


def _superlevel_labels(field: HusimiField, level: float):
    grid = field.grid
    if not grid.is_polar:
        raise ValueError("connectivity is defined on polar grids only")
    mask = grid.as_polar_array(field.rescaled >= level)
    n_r, n_a = mask.shape
    idx = np.arange(mask.size).reshape(n_r, n_a)
    rows, cols = [], []
    ang = mask & np.roll(mask, -1, axis=1)
    rows.append(idx[ang])
    cols.append(np.roll(idx, -1, axis=1)[ang])
    rad = mask[:-1] & mask[1:]
    rows.append(idx[:-1][rad])
    cols.append(idx[1:][rad])
    inner = idx[0][mask[0]]
    if inner.size > 1:
        rows.append(inner[:-1])
        cols.append(inner[1:])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    adj = coo_matrix((np.ones(r.size), (r, c)), shape=(mask.size, mask.size))
    _, labels = connected_components(adj, directed=False)
    return mask.ravel(), labels


def superlevel_components(field: HusimiField, level: float = 0.2) -> int:
    """Number of connected pieces of {Q >= level * max Q} on a polar grid.

    Neighbours are adjacent nodes along the ring (periodic) and along the
    ray; the innermost ring surrounds the origin and counts as connected.
    """
    mask, labels = _superlevel_labels(field, level)
    return int(np.unique(labels[mask]).size)


def bridges_antipodes(field: HusimiField, level: float = 0.2) -> bool:
    """True when one connected piece of the superlevel set holds a node and its antipode."""
    mask, labels = _superlevel_labels(field, level)
    perm = antipodal_permutation(field.grid)
    both = mask & mask[perm]
    return bool(np.any(labels[both] == labels[perm][both]))


def count_peaks(marg: MarginalDistribution, rel_height: float = 0.05) -> int:
    """Local maxima of a marginal exceeding ``rel_height`` of its peak value."""
    v = marg.values
    top = rel_height * float(np.max(v))
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:]) & (v[1:-1] >= top)
    return int(np.count_nonzero(inner))
