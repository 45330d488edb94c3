"""SU(2) coherent states in the canonical (p, q) chart and disk quadrature.

A point (p, q) with p^2 + q^2 < 4 labels the coherent state with

    zeta = (q - i p) / sqrt(4 - p^2 - q^2).

Writing u = (p^2 + q^2) / 4 and q - i p = r exp(-i theta), the amplitudes are

    <j, m | zeta> = sqrt(C(2j, k) u^k (1 - u)^(2j - k)) exp(-i k theta),   k = j + m,

so |<j, m|zeta>|^2 is a binomial distribution in k. Magnitudes are evaluated in
log space, which keeps j = 500 well inside double range.

Since dp dq = 2 du dtheta, the disk maps onto the unit sphere with u linear in
the polar coordinate; a Gauss-Legendre rule in u times a uniform rule in theta
is the usual product rule on the sphere.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import GridResolutionError
from .spin_algebra import as_spin

DISK_AREA = 4.0 * np.pi
GRID_MAGIC = b"HQGRID\x00\x01"
SCHEME_IDS = {"polar-gauss": 1, "cartesian-masked": 2}


@dataclass(frozen=True)
class PhasePoint:
    p: float
    q: float

    def __post_init__(self):
        if not self.p**2 + self.q**2 < 4.0:
            raise ValueError(f"phase point ({self.p}, {self.q}) is not strictly inside the disk p^2+q^2<4")

    def antipode(self) -> "PhasePoint":
        return PhasePoint(-self.p, -self.q)


def zeta_from_pq(p, q):
    """Complex coherent-state label; rejects points on or outside the rim."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    rim = 4.0 - (p**2 + q**2)
    if np.any(rim <= 0):
        raise ValueError("zeta diverges on or outside the disk p^2+q^2=4")
    z = (q - 1j * p) / np.sqrt(rim)
    return z[()] if z.ndim == 0 else z


def log_binomials(j) -> np.ndarray:
    """ln C(2j, k) for k = 0..2j."""
    n = int(round(2 * as_spin(j)))
    k = np.arange(n + 1)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def radial_log_amplitudes(j, u, one_minus_u=None) -> np.ndarray:
    """ln|<j, m|zeta>| for u = (p^2+q^2)/4, shape (..., 2j+1).

    ``one_minus_u`` may be supplied when it is known more accurately than
    ``1 - u`` (nodes close to the rim).
    """
    n = int(round(2 * as_spin(j)))
    u = np.asarray(u, dtype=float)[..., None]
    v = 1.0 - u if one_minus_u is None else np.asarray(one_minus_u, dtype=float)[..., None]
    k = np.arange(n + 1)
    with np.errstate(divide="ignore"):
        logmag = 0.5 * (log_binomials(j) + xlogy(k, u) + xlogy(n - k, v))
    if np.any(np.isnan(logmag)) or np.any(logmag > math.log(np.finfo(float).max)):
        raise OverflowError(f"coherent-state log-amplitudes out of range for j={j}")
    return logmag


@dataclass(frozen=True, eq=False)
class CoherentAmplitudes:
    """Per-m log-magnitude and phase of <j, m | zeta(p, q)>."""

    j: float
    log_magnitude: np.ndarray
    phase: np.ndarray

    def vector(self) -> np.ndarray:
        return np.exp(self.log_magnitude + 1j * self.phase)

    def norm_residual(self) -> float:
        return abs(math.fsum(np.exp(2.0 * self.log_magnitude)) - 1.0)


def coherent_amplitudes(j, pt: PhasePoint) -> CoherentAmplitudes:
    j = as_spin(j)
    u = (pt.p**2 + pt.q**2) / 4.0
    if not u < 1.0:
        raise ValueError("phase point must lie strictly inside the disk")
    theta = math.atan2(pt.p, pt.q)
    k = np.arange(int(round(2 * j)) + 1)
    return CoherentAmplitudes(j, radial_log_amplitudes(j, u), -k * theta)


def coherent_state(j, pt: PhasePoint) -> np.ndarray:
    """Normalized |zeta(p, q)> in the m-ascending basis."""
    return coherent_amplitudes(j, pt).vector()


def even_coherent_state(j, pt: PhasePoint) -> np.ndarray:
    """(|zeta(p,q)> + |zeta(-p,-q)>) normalized."""
    vec = coherent_state(j, pt) + coherent_state(j, pt.antipode())
    return vec / np.linalg.norm(vec)


def coherent_overlap_closed_form(j, a: PhasePoint, b: PhasePoint) -> float:
    """|<zeta_a|zeta_b>|^2 from the closed-form SU(2) overlap."""
    za, zb = zeta_from_pq(a.p, a.q), zeta_from_pq(b.p, b.q)
    num = abs(1.0 + np.conj(za) * zb) ** 2
    den = (1.0 + abs(za) ** 2) * (1.0 + abs(zb) ** 2)
    return float((num / den) ** (2 * as_spin(j)))


@dataclass(frozen=True, eq=False)
class PhaseSpaceGrid:
    """Quadrature nodes and weights on the disk p^2 + q^2 <= 4.

    Polar grids also keep their tensor structure (``u_nodes`` x ``theta_nodes``);
    node arrays are flattened radial-major.
    """

    p: np.ndarray
    q: np.ndarray
    weights: np.ndarray
    scheme: str
    n_radial: int = 0
    n_angular: int = 0
    spacing: float = 0.0
    u_nodes: Optional[np.ndarray] = field(default=None, repr=False)
    theta_nodes: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("p", "q", "weights"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(self.p**2 + self.q**2 < 4.0):
            raise ValueError("grid nodes must lie strictly inside the disk")

    @property
    def size(self) -> int:
        return self.p.size

    @property
    def is_polar(self) -> bool:
        return self.scheme == "polar-gauss"

    @property
    def u(self) -> np.ndarray:
        return (self.p**2 + self.q**2) / 4.0

    @property
    def theta(self) -> np.ndarray:
        return np.arctan2(self.p, self.q)

    def integrate(self, values) -> float:
        """Weighted sum with compensated (order-independent) accumulation."""
        return math.fsum(np.asarray(values, dtype=float).ravel() * self.weights)

    def as_polar_array(self, values) -> np.ndarray:
        """Reshape node values to (n_radial, n_angular) for polar grids."""
        if not self.is_polar:
            raise ValueError("only polar grids have a tensor layout")
        return np.asarray(values).reshape(self.n_radial, self.n_angular)


def minimum_resolution(j) -> Tuple[int, int]:
    """Smallest polar rule that makes the closure relation exact: (j+1, 4j+2)."""
    j = as_spin(j)
    return int(math.ceil(j + 1)), int(round(4 * j + 2))


def mandated_resolution(j) -> Tuple[int, int]:
    """Polar rule that also integrates Q^2 exactly: (2j+2, 4j+4)."""
    j = as_spin(j)
    return int(round(2 * j + 2)), int(round(4 * j + 4))


def polar_grid(n_radial: int, n_angular: int) -> PhaseSpaceGrid:
    if n_radial < 1 or n_angular < 1:
        raise GridResolutionError("polar grid needs at least one radial and one angular node")
    x, wx = np.polynomial.legendre.leggauss(n_radial)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * wx
    theta = 2.0 * np.pi * np.arange(n_angular) / n_angular
    r = 2.0 * np.sqrt(u)
    p = (r[:, None] * np.sin(theta)[None, :]).ravel()
    q = (r[:, None] * np.cos(theta)[None, :]).ravel()
    # dp dq = 2 du dtheta
    w = (2.0 * wu[:, None] * np.full(n_angular, 2.0 * np.pi / n_angular)[None, :]).ravel()
    return PhaseSpaceGrid(p, q, w, "polar-gauss", n_radial, n_angular, 0.0, u, theta)


def cartesian_grid(spacing: float) -> PhaseSpaceGrid:
    """Square lattice masked to the open disk, weights rescaled to the disk area.

    Intended for image export; it converges slowly near the rim.
    """
    if not 0 < spacing <= 0.5:
        raise GridResolutionError(f"cartesian spacing must lie in (0, 0.5], got {spacing}")
    n = int(math.floor(2.0 / spacing))
    axis = spacing * np.arange(-n, n + 1)
    pp, qq = np.meshgrid(axis, axis, indexing="xy")
    inside = pp**2 + qq**2 < 4.0 - 1e-12
    p, q = pp[inside], qq[inside]
    w = np.full(p.size, DISK_AREA / p.size)
    return PhaseSpaceGrid(p, q, w, "cartesian-masked", 0, 0, spacing)


def build_grid(
    scheme: str = "polar-gauss",
    n_radial: Optional[int] = None,
    n_angular: Optional[int] = None,
    spacing: Optional[float] = None,
    j=None,
    override: bool = False,
) -> PhaseSpaceGrid:
    """Build a grid; with ``j`` given the mandated polar resolution is the default.

    A polar grid coarser than :func:`minimum_resolution` for ``j`` raises
    unless ``override`` is set.
    """
    if scheme == "polar-gauss":
        if n_radial is None or n_angular is None:
            if j is None:
                raise ValueError("polar grid needs n_radial and n_angular, or j")
            dr, da = mandated_resolution(j)
            n_radial = dr if n_radial is None else n_radial
            n_angular = da if n_angular is None else n_angular
        grid = polar_grid(int(n_radial), int(n_angular))
        if j is not None:
            check_resolution(grid, j, override)
        return grid
    if scheme == "cartesian-masked":
        return cartesian_grid(0.05 if spacing is None else float(spacing))
    raise ValueError(f"unknown grid scheme {scheme!r}")


def grid_for_spin(j, factor: int = 1) -> PhaseSpaceGrid:
    """Mandated polar grid for ``j``, optionally refined by an integer factor."""
    dr, da = mandated_resolution(j)
    return polar_grid(factor * dr, factor * da)


def check_resolution(grid: PhaseSpaceGrid, j, override: bool = False) -> None:
    if override:
        return
    if not grid.is_polar:
        raise GridResolutionError(
            "only polar-gauss grids carry an exactness guarantee; pass override to use "
            f"a {grid.scheme} grid for measures"
        )
    nr, na = minimum_resolution(j)
    if grid.n_radial < nr or grid.n_angular < na:
        raise GridResolutionError(
            f"grid ({grid.n_radial} x {grid.n_angular}) below minimum ({nr} x {na}) for j={as_spin(j)}"
        )


def conj_amplitudes(j, u, one_minus_u, theta) -> np.ndarray:
    """conj(<j, m|zeta>) at points given by (u, 1-u, theta), shape (points, 2j+1)."""
    k = np.arange(int(round(2 * as_spin(j))) + 1)
    logmag = radial_log_amplitudes(j, u, one_minus_u)
    return np.exp(logmag + 1j * np.asarray(theta)[:, None] * k[None, :])


def conj_amplitude_matrix(j, grid: PhaseSpaceGrid, rows=slice(None)) -> np.ndarray:
    """conj(<j, m|zeta(node)>) for the selected grid nodes, shape (nodes, 2j+1)."""
    p = grid.p[rows]
    q = grid.q[rows]
    u = (p**2 + q**2) / 4.0
    return conj_amplitudes(j, u, 1.0 - u, np.arctan2(p, q))


def closure_residual(grid: PhaseSpaceGrid, j, chunk: int = 20000) -> float:
    """Spectral-norm deviation of (2j+1)/(4 pi) sum_w |zeta><zeta| from the identity."""
    j = as_spin(j)
    dim = int(round(2 * j)) + 1
    acc = np.zeros((dim, dim), dtype=complex)
    for start in range(0, grid.size, chunk):
        rows = slice(start, start + chunk)
        amp = conj_amplitude_matrix(j, grid, rows)
        acc += (amp.conj().T * grid.weights[rows]) @ amp
    acc *= (2 * j + 1) / DISK_AREA
    return float(np.linalg.norm(acc - np.eye(dim), ord=2))


def write_grid_text(grid: PhaseSpaceGrid, path) -> Path:
    path = Path(path)
    header = f"scheme={grid.scheme} n_radial={grid.n_radial} n_angular={grid.n_angular} spacing={grid.spacing!r}\np q weight"
    np.savetxt(path, np.column_stack([grid.p, grid.q, grid.weights]), fmt="%.17g", header=header)
    return path


def write_grid_binary(grid: PhaseSpaceGrid, path, extra: Optional[np.ndarray] = None) -> Path:
    """Little-endian layout:

    magic (8 bytes) | scheme id u32 | n_radial u32 | n_angular u32 | n_nodes u64 |
    spacing f64 | n_extra u32 | p[n] f64 | q[n] f64 | weight[n] f64 | extra[n_extra][n] f64
    """
    path = Path(path)
    extra = np.zeros((0, grid.size)) if extra is None else np.atleast_2d(np.asarray(extra, dtype=float))
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<IIIQdI", SCHEME_IDS[grid.scheme], grid.n_radial, grid.n_angular,
                             grid.size, float(grid.spacing), extra.shape[0]))
        for arr in (grid.p, grid.q, grid.weights, *extra):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_grid_binary(path) -> Tuple[PhaseSpaceGrid, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid file (bad magic)")
    head = struct.calcsize("<IIIQdI")
    sid, nr, na, n, spacing, n_extra = struct.unpack("<IIIQdI", data[8:8 + head])
    body = np.frombuffer(data[8 + head:], dtype="<f8")
    if body.size != (3 + n_extra) * n:
        raise ValueError(f"{path}: truncated payload")
    body = body.reshape(3 + n_extra, n)
    scheme = {v: k for k, v in SCHEME_IDS.items()}[sid]
    if scheme == "polar-gauss":
        grid = polar_grid(nr, na)
    else:
        grid = PhaseSpaceGrid(body[0], body[1], body[2], scheme, nr, na, spacing)
    return grid, body[3:].copy()
