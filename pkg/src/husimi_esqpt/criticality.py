"""Critical quench strengths, the two-top energy surface, scans, fits and estimators."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .cache import EigenCache
from .husimi import localization_measures
from .phase_space import PhaseSpaceGrid, grid_for_spin
from .quench import QuenchSpec, averaged_husimi, prepare_quench

GROUND_CRITICAL_KAPPA = 0.8
SYMMETRIC_SURFACE_ENERGY = -2.0
MEASURES = ("M2", "W", "M2_q", "M2_p", "W_q", "W_p")


def lipkin_critical_eta(kappa: float) -> float:
    """Added field that puts the quenched ground state at E = 0: 2 - 5 kappa / 2."""
    if not 0.0 < kappa < GROUND_CRITICAL_KAPPA:
        raise ValueError(f"kappa must lie in (0, 4/5), got {kappa!r}")
    return 2.0 - 2.5 * kappa


def coupled_top_critical_xi1(xi0: float) -> float:
    """Post-quench coupling whose energy surface value at the initial minimum is -2."""
    if not xi0 > 1.0:
        raise ValueError(f"xi0 must exceed 1, got {xi0!r}")
    return 2.0 * xi0 / (xi0 + 1.0)


# ---------------------------------------------------------------- energy surface


@dataclass(frozen=True)
class EnergySurfacePoint:
    p1: float
    q1: float
    p2: float
    q2: float
    xi: float

    def __post_init__(self):
        for a, b in ((self.p1, self.q1), (self.p2, self.q2)):
            if a * a + b * b > 4.0:
                raise ValueError(f"point ({a}, {b}) lies outside the disk p^2 + q^2 <= 4")
        if self.xi < 0:
            raise ValueError(f"xi must be >= 0, got {self.xi!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.q1, self.p2, self.q2])


def _surface(x: np.ndarray, xi: float) -> float:
    p1, q1, p2, q2 = x
    s1 = math.sqrt(max(4.0 - p1 * p1 - q1 * q1, 0.0))
    s2 = math.sqrt(max(4.0 - p2 * p2 - q2 * q2, 0.0))
    return 0.5 * (p1 * p1 + q1 * q1) + 0.5 * (p2 * p2 + q2 * q2) - 2.0 + 0.25 * xi * q1 * q2 * s1 * s2


def _surface_gradient(x: np.ndarray, xi: float) -> np.ndarray:
    p1, q1, p2, q2 = x
    s1 = math.sqrt(4.0 - p1 * p1 - q1 * q1)
    s2 = math.sqrt(4.0 - p2 * p2 - q2 * q2)
    c = 0.25 * xi
    return np.array([
        p1 - c * q1 * q2 * s2 * p1 / s1,
        q1 + c * q2 * s2 * (s1 - q1 * q1 / s1),
        p2 - c * q1 * q2 * s1 * p2 / s2,
        q2 + c * q1 * s1 * (s2 - q2 * q2 / s2),
    ])


def ct_energy_surface(point: EnergySurfacePoint) -> float:
    """Coherent-state expectation of H_ct / j."""
    return _surface(point.as_array(), point.xi)


@dataclass(frozen=True)
class FixedPoint:
    p: tuple
    q: tuple
    energy: float


def ct_fixed_points(xi: float) -> List[FixedPoint]:
    """Closed-form minima of the energy surface."""
    if xi < 0:
        raise ValueError(f"xi must be >= 0, got {xi!r}")
    if xi <= 1.0:
        return [FixedPoint((0.0, 0.0), (0.0, 0.0), -2.0)]
    qf = math.sqrt(2.0 * (xi - 1.0) / xi)
    e = -(xi + 1.0 / xi)
    return [FixedPoint((0.0, 0.0), (qf, -qf), e), FixedPoint((0.0, 0.0), (-qf, qf), e)]


def _disk_map(a: np.ndarray):
    """Open disk of radius 2 parameterized by the whole plane, with its Jacobian."""
    x, y = a
    s = math.sqrt(1.0 + x * x + y * y)
    jac = np.array([[2.0 / s - 2.0 * x * x / s**3, -2.0 * x * y / s**3],
                    [-2.0 * x * y / s**3, 2.0 / s - 2.0 * y * y / s**3]])
    return np.array([2.0 * x / s, 2.0 * y / s]), jac


def _from_disk(pq: np.ndarray) -> np.ndarray:
    r2 = float(np.dot(pq, pq)) / 4.0
    return pq / 2.0 / math.sqrt(1.0 - r2)


def minimize_energy_surface(xi: float, start: Sequence[float]) -> FixedPoint:
    """Numerical local minimum of the surface from ``start`` = (p1, q1, p2, q2)."""
    start = np.asarray(start, dtype=float)
    a0 = np.concatenate([_from_disk(start[:2]), _from_disk(start[2:])])

    def unpack(a):
        x1, j1 = _disk_map(a[:2])
        x2, j2 = _disk_map(a[2:])
        return np.concatenate([x1, x2]), j1, j2

    def fun(a):
        x, j1, j2 = unpack(a)
        g = _surface_gradient(x, xi)
        return _surface(x, xi), np.concatenate([j1.T @ g[:2], j2.T @ g[2:]])

    res = minimize(fun, a0, jac=True, method="BFGS", options={"gtol": 1e-13, "maxiter": 10_000})
    x, _, _ = unpack(res.x)
    return FixedPoint((float(x[0]), float(x[2])), (float(x[1]), float(x[3])), float(_surface(x, xi)))


def ct_quench_energy(xi0: float, xi1: float) -> float:
    """Surface energy of the xi0 minimum under the xi1 Hamiltonian."""
    if not xi0 > 1.0:
        raise ValueError(f"xi0 must exceed 1, got {xi0!r}")
    return (xi0 - 1.0) * (2.0 * xi0 - xi1 * (xi0 + 1.0)) / xi0**2 - 2.0


# ---------------------------------------------------------------- scans


@dataclass(frozen=True, eq=False)
class ScanCurve:
    parameter: str
    x: np.ndarray
    y: np.ndarray
    measure: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("scan abscissae and values must be 1-d arrays of equal length")
        if x.size > 1 and np.any(np.diff(x) <= 0):
            raise ValueError("scan parameter values must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "measure": self.measure, "x": self.x.tolist(),
                "y": self.y.tolist(), "metadata": self.metadata}


def scan_values(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive arithmetic grid rounded to kill accumulation error."""
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def _point_measures(spec: QuenchSpec, grid: Optional[PhaseSpaceGrid], marginal: bool,
                    cache: Optional[EigenCache], override: bool) -> dict:
    g = grid if grid is not None else grid_for_spin(spec.j)
    field_ = averaged_husimi(prepare_quench(spec, cache), g, override_grid_check=override)
    lm = localization_measures(field_, with_marginals=marginal)
    return {k: getattr(lm, k) for k in MEASURES if getattr(lm, k) is not None}


def measure_scan(base: QuenchSpec, values: Iterable[float], grid: Optional[PhaseSpaceGrid] = None,
                 measures: Sequence[str] = ("M2", "W"), threads: int = 1,
                 cache: Optional[EigenCache] = None, override_grid_check: bool = False) -> Dict[str, ScanCurve]:
    """Long-time-averaged localization measures along the post-quench parameter."""
    values = np.asarray(list(values), dtype=float)
    if values.size < 10:
        raise ValueError(f"a scan needs at least 10 parameter points, got {values.size}")
    unknown = set(measures) - set(MEASURES)
    if unknown:
        raise ValueError(f"unknown measures {sorted(unknown)}; expected a subset of {MEASURES}")
    marginal = any(m not in ("M2", "W") for m in measures)
    specs = [base.with_final(float(v)) for v in values]

    def task(s):
        return _point_measures(s, grid, marginal, cache, override_grid_check)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(task, specs))
    else:
        rows = [task(s) for s in specs]
    name = "eta" if base.model == "lipkin" else "xi1"
    meta = {"model": base.model, "size": base.size, "initial": base.initial}
    return {m: ScanCurve(name, values, np.array([r[m] for r in rows]), m, dict(meta)) for m in measures}


# ---------------------------------------------------------------- fits


@dataclass(frozen=True)
class ScalingFit:
    """power: y = a x^(-gamma); log: y = gamma ln x + b (prefactor holds a or b)."""

    model: str
    exponent: float
    prefactor: float
    r_squared: float
    n_points: int


def scaling_fit(sizes, values, model: str = "power") -> ScalingFit:
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("a scaling fit needs at least 3 (size, value) pairs")
    if np.any(x <= 0):
        raise ValueError("sizes must be positive")
    if model == "power":
        if np.any(y <= 0):
            raise ValueError("power-law fit needs positive values")
        target = np.log(y)
    elif model == "log":
        target = y
    else:
        raise ValueError(f"unknown fit model {model!r}; expected 'power' or 'log'")
    lx = np.log(x)
    design = np.column_stack([lx, np.ones_like(lx)])
    (slope, icept), *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ np.array([slope, icept])
    total = np.sum((target - target.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid**2) / total) if total > 0 else 1.0
    if model == "power":
        return ScalingFit("power", float(-slope), float(math.exp(icept)), r2, x.size)
    return ScalingFit("log", float(slope), float(icept), r2, x.size)


# ---------------------------------------------------------------- estimators


@dataclass(frozen=True)
class CriticalEstimate:
    location: float
    method: str
    spacing: float
    reference: Optional[float] = None

    @property
    def deviation(self) -> Optional[float]:
        return None if self.reference is None else self.location - self.reference


class ScanBoundaryError(ValueError):
    """The extremum sits at an end of the scanned interval."""


def parabolic_vertex(x: np.ndarray, y: np.ndarray, i: int) -> float:
    """Vertex of the parabola through nodes i-1, i, i+1."""
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    num = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    if den == 0:
        return float(x1)
    return float(x1 - 0.5 * num / den)


def _interior_extremum(y: np.ndarray, kind: str, selection: str) -> int:
    s = y if kind == "min" else -y
    if selection == "global":
        i = int(np.argmin(s))
        if i == 0 or i == s.size - 1:
            raise ScanBoundaryError("extremum at the scan boundary; widen the scan range")
        return i
    if selection == "first":
        inner = np.flatnonzero((s[1:-1] < s[:-2]) & (s[1:-1] <= s[2:])) + 1
        if inner.size == 0:
            raise ScanBoundaryError("no interior extremum in the scan; widen the scan range")
        return int(inner[0])
    raise ValueError(f"unknown selection {selection!r}; expected 'global' or 'first'")


def estimate_critical_extremum(curve: ScanCurve, kind: Optional[str] = None, selection: str = "global",
                               reference: Optional[float] = None) -> CriticalEstimate:
    """Location of the M2 minimum (or W maximum) refined by 3-point parabolic interpolation.

    ``kind`` defaults to "min" for second moments and "max" for entropies.
    ``selection="first"`` takes the lowest-parameter interior extremum instead
    of the global one.
    """
    if curve.x.size < 3:
        raise ValueError("need at least three scan points")
    if kind is None:
        kind = "max" if curve.measure.startswith("W") else "min"
    i = _interior_extremum(curve.y, kind, selection)
    loc = parabolic_vertex(curve.x, curve.y, i)
    spacing = float(np.max(np.diff(curve.x)))
    method = "extremum-of-W" if curve.measure.startswith("W") else "extremum-of-M2"
    return CriticalEstimate(loc, method, spacing, reference)


def exponent_derivative(x, nu) -> np.ndarray:
    """Central differences, one-sided at the ends."""
    return np.gradient(np.asarray(nu, dtype=float), np.asarray(x, dtype=float))


def estimate_critical_exponent_drop(curve: ScanCurve, reference: Optional[float] = None) -> CriticalEstimate:
    """Minimum of d nu / d xi1 for a curve of scaling exponents nu(xi1)."""
    if curve.x.size < 10:
        raise ValueError(f"need at least 10 exponent values, got {curve.x.size}")
    d = exponent_derivative(curve.x, curve.y)
    i = _interior_extremum(d, "min", "global")
    loc = parabolic_vertex(curve.x, d, i)
    return CriticalEstimate(loc, "min-of-dnu/d" + curve.parameter, float(np.max(np.diff(curve.x))), reference)


def exponent_curves(scans: Dict[int, Dict[str, ScanCurve]]) -> Dict[str, ScanCurve]:
    """nu_M(x) from power fits of M2 and nu_W(x) from log fits of W across sizes.

    ``scans`` maps size -> {measure -> ScanCurve}, all on the same parameter grid.
    """
    sizes = sorted(scans)
    if len(sizes) < 3:
        raise ValueError("exponents need scans at three or more sizes")
    ref = scans[sizes[0]]["M2"]
    out = {}
    for measure, model, label in (("M2", "power", "nu_M"), ("W", "log", "nu_W")):
        table = np.array([scans[s][measure].y for s in sizes])
        nu = [scaling_fit(sizes, table[:, a], model).exponent for a in range(ref.x.size)]
        out[label] = ScanCurve(ref.parameter, ref.x, np.array(nu), label,
                               {**ref.metadata, "sizes": sizes, "fit": model})
    return out


# ---------------------------------------------------------------- export


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, ScanCurve):
        return obj.to_dict()
    if isinstance(obj, (ScalingFit, CriticalEstimate, FixedPoint)):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(payload: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, default=_jsonable, indent=2, sort_keys=True) + "\n")
    return path


def write_table(path, columns: Sequence[str], provenance: Sequence[str], rows, header: str = "") -> Path:
    """Whitespace table; the second header line tags each column's provenance."""
    if len(columns) != len(provenance):
        raise ValueError("one provenance tag per column")
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines.append("# " + " ".join(columns))
    lines.append("# provenance: " + " ".join(provenance))
    for row in rows:
        lines.append(" ".join(_fmt(v) for v in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_curve_table(curves: Dict[str, ScanCurve], path) -> Path:
    names = list(curves)
    first = curves[names[0]]
    rows = [[first.x[i]] + [curves[n].y[i] for n in names] for i in range(first.x.size)]
    return write_table(path, [first.parameter] + names, ["input"] + ["computed"] * len(names), rows)
