"""Run configuration for the laboratory.

Every section is a pydantic model so a configuration can be loaded from JSON,
overridden from the command line and written back into the run manifest.
"""

import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

THREADS_ENV = "NV_THREADS"


class ScatteringFamily(str, Enum):
    """Built-in admissible scattering-data families."""

    DEFAULT = "default"


class ScatteringSettings(BaseModel):
    """Choice of the scattering data b."""

    family: ScatteringFamily = ScatteringFamily.DEFAULT
    """Tag of the built-in family."""
    c: float = Field(default=0.05, ge=0.0)
    """Strength of the data; c = 0 gives the free potential."""
    width: float = Field(default=0.25, gt=0.0)
    """Width w of the log-Gaussian profile exp(-(s/w)^2 - (w/s)^2)."""

    model_config = ConfigDict(extra="forbid")


class QuadratureSettings(BaseModel):
    """Log-polar grid parameters."""

    s_max: float = Field(default=3.0, gt=0.0)
    """Truncation of the log-radius, nodes cover exp(-s_max) <= |lambda| <= exp(s_max)."""
    n_r: int = Field(default=128, gt=0)
    """Number of log-radial nodes (even)."""
    n_theta: int = Field(default=96, gt=0)
    """Number of angular nodes (even)."""
    support_tol: float = Field(default=1e-10, gt=0.0, lt=0.1)
    """Relative level of b below which the data count as absent; bounds where the phase must be resolved."""
    samples_per_radian: float = Field(default=1.0, ge=1.0)
    """Cells per radian of phase advance required of a solve grid."""
    max_nodes: int = Field(default=2**18, gt=0)
    """Largest solve grid built for a time; beyond it the phase counts as unresolvable."""
    table_limit: int = Field(default=2**23, gt=0)
    """Largest ring-convolution table (n_r^2 n_theta entries) kept in memory between solves."""

    model_config = ConfigDict(extra="forbid")

    @field_validator("n_r", "n_theta")
    @classmethod
    def _must_be_even(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"Grid sizes must be even, got {value}")
        return value


class SolverSettings(BaseModel):
    """Neumann iteration and reconstruction stencil."""

    tol_mu: float = Field(default=1e-9, gt=0.0)
    """Stop when the sup-norm of the update falls below this value."""
    max_iter: int = Field(default=50, gt=0)
    stencil_h: float = Field(default=1e-3, gt=0.0)
    """Central-difference step for the z-derivative of mu_{-1}."""
    gate: float = Field(default=0.5, gt=0.0)
    """Contraction gate on the sup-norm of A^2 1."""

    model_config = ConfigDict(extra="forbid")


class SweepSettings(BaseModel):
    """Large-time sweeps over (z, t)."""

    t_list: List[float] = Field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0])
    z_half_width_factor: float = Field(default=30.0, gt=0.0)
    """The z-window is |Re z|, |Im z| <= factor * max(|t|, 1)."""
    z_resolution: int = Field(default=65, gt=1)
    """Lattice points per axis; odd values put z = 0 on the lattice."""
    failure_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    """Largest tolerated fraction of non-converged lattice points."""

    model_config = ConfigDict(extra="forbid")


class OutputSettings(BaseModel):
    directory: Path = Path(".")
    manifest_name: str = "manifest.json"

    model_config = ConfigDict(extra="forbid")


class RunConfig(BaseModel):
    """Complete configuration of a run."""

    scattering: ScatteringSettings = Field(default_factory=ScatteringSettings)
    quadrature: QuadratureSettings = Field(default_factory=QuadratureSettings)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)
    seed: int = 0
    """Seed for randomized lattices (Monte Carlo oracles, self tests)."""
    threads: Optional[int] = Field(default=None, gt=0)
    """Worker cap; falls back to the NV_THREADS environment variable, then 1."""

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _resolve_threads(self) -> "RunConfig":
        if self.threads is None:
            env = os.environ.get(THREADS_ENV)
            if env:
                try:
                    threads = int(env)
                except ValueError as e:
                    raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from e
                if threads <= 0:
                    raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
                self.threads = threads
            else:
                self.threads = 1
        return self

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Load a configuration from a JSON file."""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Return a copy with dotted keys replaced, e.g. ``{"scattering.c": 0.01}``.

        Values given as strings are decoded as JSON when possible so command-line
        overrides like ``sweep.t_list=[5,10]`` keep their types.
        """
        data: Dict[str, Any] = self.model_dump(mode="json")
        for key, raw in overrides.items():
            value = _decode(raw)
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ValueError(f"Unknown configuration section {part!r} in {key!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ValueError(f"Unknown configuration key {key!r}")
            node[parts[-1]] = value
        return type(self).model_validate(data)

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")


def _decode(raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw
