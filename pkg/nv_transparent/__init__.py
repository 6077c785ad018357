from importlib import metadata

from nv_transparent.asymptotics_lab import AsymptoticsLab, DecayCurve, RayScan, fit_constant
from nv_transparent.config import RunConfig
from nv_transparent.cplane_quadrature import CauchyKernel, QuadratureResult, RadialGrid
from nv_transparent.dbar_solver import DBarSolver, MuSolution, PotentialSample
from nv_transparent.linearized_flow import BornDensity, LinearizedFlow, LogGaussianDensity
from nv_transparent.phase_geometry import CubicRoots, PhaseContext, RegionClass, RegionKind
from nv_transparent.scattering_data import ScatteringData

try:
    __version__ = metadata.version("nv-transparent")
except metadata.PackageNotFoundError:
    # Case where package metadata is not available.
    __version__ = ""
del metadata  # optional, avoids polluting the results of dir(__package__)

__all__ = [
    "AsymptoticsLab",
    "BornDensity",
    "CauchyKernel",
    "CubicRoots",
    "DBarSolver",
    "DecayCurve",
    "LinearizedFlow",
    "LogGaussianDensity",
    "MuSolution",
    "PhaseContext",
    "PotentialSample",
    "QuadratureResult",
    "RadialGrid",
    "RayScan",
    "RegionClass",
    "RegionKind",
    "RunConfig",
    "ScatteringData",
    "fit_constant",
    "__version__",
]
