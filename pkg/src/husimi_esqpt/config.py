"""Declarative job configuration (TOML) with strict validation.

Example::

    command = "husimi-average"

    [model]
    kind = "lipkin"
    size = 200
    parameter = 0.4

    [quench]
    final = 1.0
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

COMMANDS = ("spectrum", "dos", "husimi-snapshot", "husimi-average", "marginals",
            "measure-scan", "scaling", "critical-scan", "energy-surface")
QUENCH_COMMANDS = ("husimi-snapshot", "husimi-average", "measure-scan", "scaling", "critical-scan")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Strict):
    kind: Literal["lipkin", "coupled-top"]
    size: int = Field(description="N for the Lipkin model, j for the coupled top")
    parameter: float = Field(description="kappa (Lipkin) or xi (coupled top); the pre-quench value for quenches")
    sector: Optional[str] = Field(None, description="defaults to 'even' (Lipkin) or 'V++' (coupled top)")


class QuenchSection(_Strict):
    final: Optional[float] = Field(None, description="eta or xi1; defaults to the analytic critical value")
    times: List[float] = Field(default_factory=lambda: [0.0, 1.0, 3.0, 10.0, 30.0, 100.0])
    degeneracy_tol: Optional[float] = None


class GridSection(_Strict):
    scheme: Literal["polar-gauss", "cartesian-masked"] = "polar-gauss"
    n_radial: Optional[int] = None
    n_angular: Optional[int] = None
    spacing: Optional[float] = None
    marginal_order: Optional[int] = None


class ScanSection(_Strict):
    start: Optional[float] = None
    stop: Optional[float] = None
    step: Optional[float] = None
    values: Optional[List[float]] = None
    measures: List[Literal["M2", "W", "M2_q", "M2_p", "W_q", "W_p"]] = Field(default_factory=lambda: ["M2", "W"])
    sizes: Optional[List[int]] = None
    initial_values: Optional[List[float]] = Field(None, description="kappa or xi0 values for critical-scan")
    selection: Literal["global", "first"] = "first"

    @model_validator(mode="after")
    def _grid_given(self):
        ranged = (self.start, self.stop, self.step)
        if self.values is None and any(v is not None for v in ranged) and None in ranged:
            raise ValueError("scan needs all of start, stop and step (or an explicit values list)")
        if self.step is not None and self.step <= 0:
            raise ValueError("scan step must be positive")
        return self


class DosSection(_Strict):
    bins: Optional[int] = None
    width_factor: float = 1.0
    energy_scale: Optional[float] = Field(None, description="defaults to 1/(2j) (Lipkin) or 1/j (coupled top)")
    density_scale: float = 1.0


class SurfaceSection(_Strict):
    xi: List[float] = Field(default_factory=lambda: [0.5, 1.5, 3.0, 6.0])
    xi0: Optional[float] = None
    xi1: Optional[List[float]] = None


class JobConfig(_Strict):
    command: Literal[COMMANDS]
    model: Optional[ModelSection] = None
    quench: Optional[QuenchSection] = None
    grid: GridSection = GridSection()
    scan: Optional[ScanSection] = None
    dos: DosSection = DosSection()
    surface: Optional[SurfaceSection] = None
    out: Optional[str] = None
    cache: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _sections_present(self):
        if self.command != "energy-surface" and self.model is None:
            raise ValueError(f"command {self.command!r} needs a [model] section")
        if self.command in ("measure-scan", "critical-scan") and self.scan is None:
            raise ValueError(f"command {self.command!r} needs a [scan] section")
        if self.command == "scaling" and (self.scan is None or not self.scan.sizes):
            raise ValueError("command 'scaling' needs scan.sizes")
        return self


def json_schema() -> dict:
    return JobConfig.model_json_schema()


def parse_config(data: dict) -> JobConfig:
    try:
        return JobConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> JobConfig:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(data)
