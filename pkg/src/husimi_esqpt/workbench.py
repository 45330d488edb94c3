"""Job orchestration behind the command-line interface."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy

from . import __version__
from .cache import EigenCache, default_cache_dir
from .config import JobConfig, SurfaceSection
from .criticality import (
    coupled_top_critical_xi1,
    ct_fixed_points,
    ct_quench_energy,
    estimate_critical_exponent_drop,
    estimate_critical_extremum,
    exponent_curves,
    lipkin_critical_eta,
    measure_scan,
    minimize_energy_surface,
    scaling_fit,
    scan_values,
    write_curve_table,
    write_json,
    write_table,
)
from .errors import ConfigError
from .husimi import localization_measures, marginal_measures, marginals
from .models import (
    COUPLED_TOP_SECTORS,
    LIPKIN_SECTORS,
    CoupledTopSpec,
    LipkinSpec,
    coupled_top_hamiltonian,
    density_of_states,
    dos_derivative,
    lipkin_hamiltonian,
    local_extrema,
    spectrum,
)
from .phase_space import PhaseSpaceGrid, build_grid, check_resolution, write_grid_binary
from .quench import QuenchSpec, averaged_husimi, evolved_husimi, initial_husimi, prepare_quench

log = logging.getLogger(__name__)


@dataclass
class ResultBundle:
    out_dir: Path
    files: Dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Job:
    def __init__(self, cfg: JobConfig, out_dir: Path, cache: Optional[EigenCache], threads: int, override: bool):
        self.cfg = cfg
        self.out = out_dir
        self.cache = cache
        self.threads = threads
        self.override = override
        self.outputs: List[Path] = []
        self.summary: dict = {}

    # -- helpers

    def emit(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def model_spec(self, parameter: Optional[float] = None, size: Optional[int] = None):
        m = self.cfg.model
        p = m.parameter if parameter is None else parameter
        s = m.size if size is None else size
        return LipkinSpec(s, p) if m.kind == "lipkin" else CoupledTopSpec(s, p)

    def sector(self) -> str:
        m = self.cfg.model
        if m.sector is not None:
            return m.sector
        return "even" if m.kind == "lipkin" else "V++"

    def critical_final(self, initial: float) -> float:
        if self.cfg.model.kind == "lipkin":
            return lipkin_critical_eta(initial)
        return coupled_top_critical_xi1(initial)

    def quench_spec(self, initial: Optional[float] = None, size: Optional[int] = None,
                    final: Optional[float] = None) -> QuenchSpec:
        m = self.cfg.model
        q = self.cfg.quench
        init = m.parameter if initial is None else initial
        if final is None:
            final = q.final if q is not None and q.final is not None else self.critical_final(init)
        return QuenchSpec(m.kind, m.size if size is None else size, init, final)

    def grid(self, j) -> PhaseSpaceGrid:
        g = self.cfg.grid
        grid = build_grid(g.scheme, g.n_radial, g.n_angular, g.spacing, j=j, override=self.override)
        check_resolution(grid, j, self.override)
        return grid

    def degeneracy_tol(self):
        return self.cfg.quench.degeneracy_tol if self.cfg.quench is not None else None

    def scan_grid(self) -> np.ndarray:
        s = self.cfg.scan
        if s.values is not None:
            return np.asarray(s.values, dtype=float)
        if s.start is None:
            raise ConfigError("scan needs start/stop/step or values")
        return scan_values(s.start, s.stop, s.step)

    def sizes(self) -> List[int]:
        s = self.cfg.scan
        if s is not None and s.sizes:
            return list(s.sizes)
        return [50, 100, 200, 400] if self.cfg.model.kind == "lipkin" else [5, 10, 15, 20]

    def j_of(self, size) -> float:
        return size / 2 if self.cfg.model.kind == "lipkin" else float(size)

    # -- validation

    def validate(self) -> None:
        """Construct every spec and grid the job will touch before computing anything."""
        cfg = self.cfg
        try:
            if cfg.command == "energy-surface":
                s = cfg.surface
                if s is not None and s.xi0 is not None:
                    coupled_top_critical_xi1(s.xi0)
                return
            m = cfg.model
            allowed = LIPKIN_SECTORS if m.kind == "lipkin" else COUPLED_TOP_SECTORS
            if self.sector() not in allowed:
                raise ValueError(f"unknown sector {self.sector()!r} for {m.kind}")
            self.model_spec()
            if cfg.command in ("spectrum", "dos"):
                return
            if cfg.command == "marginals" and cfg.quench is None:
                self.grid(self.j_of(m.size))
                return
            if cfg.command in ("husimi-snapshot", "husimi-average", "marginals"):
                self.quench_spec()
                self.grid(self.j_of(m.size))
                return
            values = self.scan_grid() if cfg.command in ("measure-scan", "critical-scan") else None
            if values is not None and (values.size < 10 or np.any(np.diff(values) <= 0)):
                raise ValueError("scan needs at least 10 strictly increasing parameter values")
            if cfg.command == "measure-scan":
                for v in (values[0], values[-1]):
                    self.quench_spec(final=v)
                self.grid(self.j_of(m.size))
            elif cfg.command == "scaling":
                for n in self.sizes():
                    self.quench_spec(size=n)
                    self.grid(self.j_of(n))
                if len(self.sizes()) < 3:
                    raise ValueError("scaling needs at least 3 sizes")
            elif cfg.command == "critical-scan":
                inits = cfg.scan.initial_values or [m.parameter]
                sizes = [m.size] if m.kind == "lipkin" else self.sizes()
                for init in inits:
                    self.critical_final(init)
                    for n in sizes:
                        self.quench_spec(initial=init, size=n, final=values[0])
                        self.grid(self.j_of(n))
                if m.kind == "coupled-top" and len(sizes) < 3:
                    raise ValueError("exponent scans need at least 3 sizes")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- commands

    def run_spectrum(self):
        op = self._model_operator()
        levels = spectrum(op)
        scale = self._energy_scale()
        rows = [(i, e, e * scale) for i, e in enumerate(levels)]
        self.emit(write_table(self.out / "spectrum.txt", ["index", "energy", "scaled_energy"],
                              ["computed", "computed", "computed"], rows,
                              header=f"sector {self.sector()}, scale {scale!r}"))
        self.summary.update(levels=int(levels.size), ground_energy=float(levels[0]))

    def _model_operator(self):
        spec = self.model_spec()
        if isinstance(spec, LipkinSpec):
            return lipkin_hamiltonian(spec, self.sector())
        return coupled_top_hamiltonian(spec, self.sector())

    def _energy_scale(self) -> float:
        d = self.cfg.dos
        if d.energy_scale is not None:
            return d.energy_scale
        # E / (2j) for Lipkin (size N = 2j), E / j for the coupled top (size j)
        return 1.0 / self.cfg.model.size

    def run_dos(self):
        d = self.cfg.dos
        levels = spectrum(self._model_operator())
        hist = density_of_states(levels, energy_scale=self._energy_scale(), density_scale=d.density_scale,
                                 bins=d.bins, width_factor=d.width_factor)
        deriv = dos_derivative(hist)
        rows = [(hist.bin_edges[i], hist.bin_edges[i + 1], hist.centers[i], hist.density[i], deriv.values[i])
                for i in range(hist.density.size)]
        self.emit(write_table(self.out / "dos.txt", ["edge_lo", "edge_hi", "center", "density", "derivative"],
                              ["computed"] * 5, rows,
                              header=f"levels {hist.level_count}, smoothing width {hist.smoothing_width!r}"))
        xs, ys, tags = local_extrema(deriv.centers, deriv.values)
        peak = int(np.argmax(hist.density))
        self.summary.update(levels=hist.level_count, integral=hist.integral(),
                            density_peak=float(hist.centers[peak]),
                            derivative_extrema=[{"x": float(x), "value": float(y), "kind": t}
                                                for x, y, t in zip(xs, ys, tags)])

    def _write_field(self, name: str, fld) -> None:
        self.emit(write_grid_binary(fld.grid, self.out / f"{name}.hqg", extra=fld.values))

    def _measures_dict(self, fld, marginal=True) -> dict:
        lm = localization_measures(fld, with_marginals=marginal)
        return {k: v for k, v in vars(lm).items() if v is not None}

    def run_husimi_snapshot(self):
        spec = self.quench_spec()
        prep = prepare_quench(spec, self.cache)
        grid = self.grid(spec.j)
        rows = []
        for t in self.cfg.quench.times:
            fld = evolved_husimi(prep, t, grid, self.override)
            self._write_field(f"husimi_t{t:g}", fld)
            lm = localization_measures(fld)
            rows.append((t, lm.M2, lm.W, fld.norm_residual))
        self.emit(write_table(self.out / "snapshots.txt", ["time", "M2", "W", "norm_residual"],
                              ["input", "computed", "computed", "computed"], rows))
        self.summary.update(final=spec.final, times=list(self.cfg.quench.times))

    def run_husimi_average(self):
        spec = self.quench_spec()
        fld = averaged_husimi(prepare_quench(spec, self.cache), self.grid(spec.j), self.degeneracy_tol(),
                              self.override)
        self._write_field("husimi_average", fld)
        self.summary.update(final=spec.final, measures=self._measures_dict(fld, marginal=False),
                            norm_residual=fld.norm_residual)

    def run_marginals(self):
        j = self.j_of(self.cfg.model.size)
        grid = self.grid(j)
        if self.cfg.quench is None:
            m = self.cfg.model
            ground = QuenchSpec(m.kind, m.size, m.parameter, 0.0, require_esqpt=False)
            fld = initial_husimi(ground, grid, self.override, self.cache)
            label = "ground"
        else:
            spec = self.quench_spec()
            fld = averaged_husimi(prepare_quench(spec, self.cache), grid, self.degeneracy_tol(), self.override)
            label = "average"
        qm, pm = marginals(fld, self.cfg.grid.marginal_order)
        rows = [(qm.nodes[i], qm.weights[i], qm.values[i], pm.values[i]) for i in range(qm.nodes.size)]
        self.emit(write_table(self.out / "marginals.txt", ["x", "weight", "Q_q", "Q_p"],
                              ["computed"] * 4, rows, header=f"state {label}; column x is q for Q_q and p for Q_p"))
        mm = marginal_measures(qm, pm, fld)
        self.summary.update(state=label, marginal_measures=vars(mm))

    def run_measure_scan(self):
        spec = self.quench_spec(final=float(self.scan_grid()[0]))
        curves = measure_scan(spec, self.scan_grid(), self.grid(spec.j), self.cfg.scan.measures,
                              self.threads, self.cache, self.override)
        self.emit(write_curve_table(curves, self.out / "scan.txt"))
        self.emit(write_json({"curves": curves}, self.out / "scan.json"))

    def run_scaling(self):
        sizes = self.sizes()
        values = {"M2": [], "W": []}
        finals = []
        for n in sizes:
            spec = self.quench_spec(size=n)
            finals.append(spec.final)
            fld = averaged_husimi(prepare_quench(spec, self.cache), self.grid(spec.j), self.degeneracy_tol(),
                                  self.override)
            lm = localization_measures(fld)
            values["M2"].append(lm.M2)
            values["W"].append(lm.W)
        fits = {"M2": scaling_fit(sizes, values["M2"], "power"), "W": scaling_fit(sizes, values["W"], "log")}
        rows = [(n, values["M2"][i], values["W"][i]) for i, n in enumerate(sizes)]
        self.emit(write_table(self.out / "scaling.txt", ["size", "M2", "W"], ["input", "computed", "computed"], rows))
        fit_rows = [(k, f.model, f.exponent, f.prefactor, f.r_squared) for k, f in fits.items()]
        self.emit(write_table(self.out / "fits.txt", ["measure", "model", "exponent", "prefactor", "r_squared"],
                              ["input", "input", "fit", "fit", "fit"], fit_rows))
        self.summary.update(final=finals[0], fits=fits)

    def run_critical_scan(self):
        m = self.cfg.model
        values = self.scan_grid()
        inits = self.cfg.scan.initial_values or [m.parameter]
        sel = self.cfg.scan.selection
        rows, estimates = [], []
        for init in inits:
            ref = self.critical_final(init)
            if m.kind == "lipkin":
                spec = self.quench_spec(initial=init, final=float(values[0]))
                curves = measure_scan(spec, values, self.grid(spec.j), ("M2", "W"), self.threads, self.cache,
                                      self.override)
                est_m = estimate_critical_extremum(curves["M2"], selection=sel, reference=ref)
                est_w = estimate_critical_extremum(curves["W"], selection=sel, reference=ref)
            else:
                scans = {}
                for n in self.sizes():
                    spec = self.quench_spec(initial=init, size=n, final=float(values[0]))
                    scans[n] = measure_scan(spec, values, self.grid(spec.j), ("M2", "W"), self.threads,
                                            self.cache, self.override)
                nus = exponent_curves(scans)
                curves = {**nus}
                est_m = estimate_critical_exponent_drop(nus["nu_M"], reference=ref)
                est_w = estimate_critical_exponent_drop(nus["nu_W"], reference=ref)
            self.emit(write_curve_table(curves, self.out / f"curves_{init:g}.txt"))
            rows.append((init, est_m.location, est_w.location, ref, est_m.spacing))
            estimates.append({"initial": init, "M": est_m, "W": est_w})
        self.emit(write_table(self.out / "critical.txt", ["initial", "estimate_M", "estimate_W", "analytic", "spacing"],
                              ["input", "computed", "computed", "analytic-formula", "input"], rows))
        self.summary.update(estimates=estimates)

    def run_energy_surface(self):
        s = self.cfg.surface or SurfaceSection()
        rows = []
        for xi in s.xi:
            fp = ct_fixed_points(xi)[0]
            start = [0.05, 0.5, -0.05, -0.5] if xi > 1 else [0.1, 0.2, 0.3, -0.2]
            num = minimize_energy_surface(xi, start)
            rows.append((xi, fp.q[0], fp.energy, num.q[0], num.energy))
        self.emit(write_table(self.out / "fixed_points.txt", ["xi", "q1", "energy", "q1_numeric", "energy_numeric"],
                              ["input", "analytic-formula", "analytic-formula", "computed", "computed"], rows))
        if s.xi0 is not None:
            xi1 = s.xi1 or list(scan_values(0.3, 2.7, 0.1))
            qrows = [(x, ct_quench_energy(s.xi0, x)) for x in xi1]
            self.emit(write_table(self.out / "quench_energy.txt", ["xi1", "energy"],
                                  ["input", "analytic-formula"], qrows,
                                  header=f"xi0 {s.xi0!r}, critical xi1 {coupled_top_critical_xi1(s.xi0)!r}"))


_COMMANDS: Dict[str, Callable[[_Job], None]] = {
    "spectrum": _Job.run_spectrum,
    "dos": _Job.run_dos,
    "husimi-snapshot": _Job.run_husimi_snapshot,
    "husimi-average": _Job.run_husimi_average,
    "marginals": _Job.run_marginals,
    "measure-scan": _Job.run_measure_scan,
    "scaling": _Job.run_scaling,
    "critical-scan": _Job.run_critical_scan,
    "energy-surface": _Job.run_energy_surface,
}


def validate_job(cfg: JobConfig, override_grid_check: bool = False) -> None:
    _Job(cfg, Path("."), None, 1, override_grid_check).validate()


def run(cfg: JobConfig, out_dir=None, cache_dir=None, threads: int = 1,
        override_grid_check: bool = False) -> ResultBundle:
    """Validate, execute and write the manifest; returns the bundle."""
    out = Path(out_dir or cfg.out or "results")
    job = _Job(cfg, out, None, max(1, int(threads)), override_grid_check)
    job.validate()
    out.mkdir(parents=True, exist_ok=True)
    cache_root = cache_dir or cfg.cache or default_cache_dir()
    cache = EigenCache(cache_root) if cache_root else None
    job.cache = cache
    t0 = time.perf_counter()
    try:
        _COMMANDS[cfg.command](job)
    finally:
        if cache is not None:
            cache.close()
    elapsed = time.perf_counter() - t0
    bundle = ResultBundle(out, {p.name: sha256_file(p) for p in job.outputs}, job.summary, {"total_s": elapsed})
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "versions": {"husimi_esqpt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "timings": bundle.timings,
        "files": bundle.files,
        "summary": job.summary,
        "cache": None if cache is None else {"dir": str(cache.root), "hits": cache.hits, "misses": cache.misses},
        "provenance": "every table carries a provenance header row naming each column's source",
    }
    write_json(manifest, bundle.manifest_path)
    return bundle
