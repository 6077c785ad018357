"""Command-line entry point: ``nv-lab <subcommand> [options]``.

Every subcommand writes one CSV file (17 significant digits) and a JSON manifest
next to it. Exit codes: 0 success, 2 configuration or usage error (including
invalid flag values such as --t 0 or a too small --eps), 3 numerical failure
(no convergence, too many failed points, a phase no grid in budget resolves).
"""

import argparse
import logging
import math
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from nv_transparent.asymptotics_lab import AsymptoticsLab, fit_constant
from nv_transparent.config import QuadratureSettings, RunConfig
from nv_transparent.cplane_quadrature import RadialGrid
from nv_transparent.dbar_solver import DBarSolver
from nv_transparent.errors import AmbiguousClassification, NVLabError, NonFiniteSample
from nv_transparent.linearized_flow import LinearizedFlow, LogGaussianDensity
from nv_transparent.phase_geometry import RegionKind, classify_region, cubic_roots_array, solve_cubic
from nv_transparent.scattering_data import ScatteringData

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

FLOAT_FORMAT = "%.17g"
SELFTEST_GRID = 32

CommandResult = Tuple[pd.DataFrame, Dict[str, Any]]


class RunManifest(BaseModel):
    """Reproducibility record written beside the outputs of a run."""

    command: str
    version: str
    started_utc: str
    wall_time: float = Field(ge=0.0)
    config: Dict[str, Any]
    failure_counts: Dict[str, int] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    exit_code: int = EXIT_OK


def _version() -> str:
    try:
        return metadata.version("nv-transparent")
    except metadata.PackageNotFoundError:
        return ""


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Expected a comma-separated list of numbers, got {text!r}") from e


def _override(text: str) -> Tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"Expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON configuration file.")
    common.add_argument(
        "--set", dest="overrides", type=_override, action="append", default=[], help="Override, e.g. scattering.c=0.01"
    )
    common.add_argument("--c", type=float, default=None, help="Strength of the scattering data.")
    common.add_argument("--threads", type=int, default=None, help="Worker cap (also NV_THREADS).")
    common.add_argument("--out", type=Path, default=None, help="Output CSV path.")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="nv-lab", description="Transparent potentials of the Novikov-Veselov flow")
    commands = parser.add_subparsers(dest="command", required=True)

    roots = commands.add_parser("roots", parents=[common], help="Cubic roots and region class of one u.")
    roots.add_argument("--u-re", type=float, required=True)
    roots.add_argument("--u-im", type=float, default=0.0)

    region = commands.add_parser("region", parents=[common], help="Classify a square lattice of u.")
    region.add_argument("--grid", type=int, default=41)
    region.add_argument("--extent", type=float, default=25.0)
    region.add_argument("--mc-samples", type=int, default=20000)

    linearized = commands.add_parser("linearized", parents=[common], help="I and J on a u-lattice for several t.")
    linearized.add_argument("--t-list", type=_float_list, default=[5.0, 10.0, 20.0, 40.0])
    linearized.add_argument("--u-grid", type=int, default=9)
    linearized.add_argument("--u-extent", type=float, default=24.0)

    decompose = commands.add_parser("decompose", parents=[common], help="Stationary-phase split of I.")
    decompose.add_argument("--t", type=float, required=True)
    decompose.add_argument("--u-re", type=float, required=True)
    decompose.add_argument("--u-im", type=float, default=0.0)
    decompose.add_argument("--eps", type=float, default=None, help="Disk radius, defaults to 1/t.")

    reconstruct = commands.add_parser("reconstruct", parents=[common], help="Potential v on a z-lattice.")
    reconstruct.add_argument("--t", type=float, required=True)
    reconstruct.add_argument("--z-grid", type=int, default=8)
    reconstruct.add_argument("--z-extent", type=float, default=5.0)

    sweep = commands.add_parser("decay-sweep", parents=[common], help="sup |v| over growing windows.")
    sweep.add_argument("--t", dest="t_list", type=_float_list, default=None)
    sweep.add_argument("--resolution", type=int, default=None)
    sweep.add_argument("--half-width", type=float, default=None)

    ray = commands.add_parser("ray-scan", parents=[common], help="|v(u t, t)| along a ray.")
    ray.add_argument("--u-re", type=float, required=True)
    ray.add_argument("--u-im", type=float, default=0.0)
    ray.add_argument("--t-list", type=_float_list, default=None)

    commands.add_parser("selftest", parents=[common], help="Quick consistency battery.")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Configuration from file, then --set overrides, then dedicated flags."""
    config = RunConfig.from_file(args.config) if args.config is not None else RunConfig()
    overrides: Dict[str, Any] = dict(args.overrides)
    if args.c is not None:
        overrides["scattering.c"] = args.c
    if args.threads is not None:
        overrides["threads"] = args.threads
    return config.with_overrides(overrides) if overrides else config


def _roots_row(u: complex) -> Dict[str, Any]:
    try:
        region = classify_region(u)
        kind, xi = region.kind.value, region.roots.xi
    except AmbiguousClassification:
        kind, xi = "Ambiguous", solve_cubic(u).xi
    row: Dict[str, Any] = {"u_re": u.real, "u_im": u.imag, "class": kind}
    for index, root in enumerate(xi):
        row[f"xi{index}_re"] = root.real
        row[f"xi{index}_im"] = root.imag
    return row


def run_roots(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    row = _roots_row(complex(args.u_re, args.u_im))
    return pd.DataFrame([row]), {"class": row["class"]}


def region_area_monte_carlo(extent: float, samples: int, seed: int) -> float:
    """Area of the region with all cubic roots on the unit circle, by uniform sampling of the square."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-extent, extent, samples) + 1j * rng.uniform(-extent, extent, samples)
    deviation = np.max(np.abs(np.abs(cubic_roots_array(u)) - 1.0), axis=-1)
    return float(np.mean(deviation < 1e-6)) * (2.0 * extent) ** 2


def run_region(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    axis = np.linspace(-args.extent, args.extent, args.grid)
    rows = [_roots_row(complex(x, y)) for y in axis for x in axis]
    frame = pd.DataFrame(rows)
    counts = frame["class"].value_counts().to_dict()
    closed = sum(counts.get(kind.value, 0) for kind in RegionKind if kind is not RegionKind.EXTERIOR)
    cell = (axis[1] - axis[0]) ** 2 if args.grid > 1 else 0.0
    lattice_area = closed * cell
    mc_area = region_area_monte_carlo(args.extent, args.mc_samples, config.seed)
    summary = {
        "counts": {str(k): int(v) for k, v in counts.items()},
        "lattice_area": lattice_area,
        "monte_carlo_area": mc_area,
        "relative_difference": abs(lattice_area - mc_area) / mc_area if mc_area else None,
    }
    return frame, summary


def _density(config: RunConfig) -> LogGaussianDensity:
    return LogGaussianDensity(c=config.scattering.c, width=config.scattering.width)


def run_linearized(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    flow = LinearizedFlow(density=_density(config), grid=RadialGrid.from_settings(config.quadrature))
    axis = np.linspace(-args.u_extent, args.u_extent, args.u_grid)
    us = (axis[np.newaxis, :] + 1j * axis[:, np.newaxis]).ravel()
    rows = []
    for t in args.t_list:
        values_i = flow.evaluate_many(t, us * t, "I")
        values_j = flow.evaluate_many(t, us * t, "J")
        scale = (1.0 + abs(t)) / math.log(3.0 + abs(t))
        for u, i_value, j_value in zip(us, values_i, values_j):
            rows.append(
                {
                    "t": t,
                    "u_re": u.real,
                    "u_im": u.imag,
                    "I_re": i_value.real,
                    "I_im": i_value.imag,
                    "J_re": j_value.real,
                    "J_im": j_value.imag,
                    "normalized": abs(i_value) * scale,
                }
            )
    frame = pd.DataFrame(rows)
    maxima = frame.groupby("t", sort=False)["normalized"].max()
    summary = {
        "normalized_max": {str(t): float(v) for t, v in maxima.items()},
        "bounded_3x": bool(maxima.max() <= 3.0 * maxima.iloc[0]),
    }
    return frame, summary


def run_decompose(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    if args.t == 0:
        raise ValueError("decompose needs --t != 0")
    flow = LinearizedFlow(density=_density(config), grid=RadialGrid.from_settings(config.quadrature))
    eps = args.eps if args.eps is not None else 1.0 / abs(args.t)
    result = flow.decompose_integral(args.t, complex(args.u_re, args.u_im), eps)
    row: Dict[str, Any] = {"t": result.t, "u_re": result.u.real, "u_im": result.u.imag, "eps": result.eps}
    for name in ("I", "I_int", "I_ext", "I1", "I2", "I3"):
        value = getattr(result, name)
        row[f"{name}_re"] = value.real
        row[f"{name}_im"] = value.imag
    row["identity_error"] = result.identity_error
    return pd.DataFrame([row]), {"identity_error": result.identity_error, "centers": len(result.centers)}


def run_reconstruct(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    base = DBarSolver.from_config(config)
    solver = base.resolved(args.t, math.sqrt(2.0) * args.z_extent + base.settings.stencil_h)
    solver.prepare()
    axis = np.linspace(-args.z_extent, args.z_extent, args.z_grid)
    rows = []
    for x2 in axis:
        for x1 in axis:
            sample = solver.reconstruct_v(complex(x1, x2), args.t)
            rows.append(
                {
                    "x1": x1,
                    "x2": x2,
                    "t": args.t,
                    "v_re": sample.v.real,
                    "v_im": sample.v.imag,
                    "iterations": sample.iterations,
                    "residual": sample.residual,
                }
            )
    frame = pd.DataFrame(rows)
    summary = {
        "max_abs_v": float(np.hypot(frame["v_re"], frame["v_im"]).max()),
        "max_imag": float(frame["v_im"].abs().max()),
    }
    return frame, summary


def run_decay_sweep(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    lab = AsymptoticsLab.from_config(config)
    curve = lab.decay_sweep(args.t_list, half_width=args.half_width, resolution=args.resolution)
    frame = pd.DataFrame(
        [
            {
                "t": e.t,
                "sup_v": e.sup_v,
                "argmax_re": e.argmax_z.real,
                "argmax_im": e.argmax_z.imag,
                "normalizer": e.normalizer,
                "ratio": e.ratio,
                "failed_points": e.failed_points,
            }
            for e in curve.entries
        ]
    )
    summary: Dict[str, Any] = {"failed_points": curve.failed_points}
    if len(curve.entries) >= 4:
        summary["fit"] = fit_constant(curve).model_dump()
    return frame, summary


def run_ray_scan(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    lab = AsymptoticsLab.from_config(config)
    scan = lab.ray_scan(complex(args.u_re, args.u_im), args.t_list)
    frame = pd.DataFrame(
        [{"u_re": scan.u.real, "u_im": scan.u.imag, "t": s.t, "abs_v": s.abs_v} for s in scan.samples]
    )
    return frame, {"decaying": scan.is_decaying()}


def run_selftest(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    checks: List[Dict[str, Any]] = []

    def record(name: str, value: float, passed: bool) -> None:
        checks.append({"check": name, "value": value, "passed": bool(passed)})

    expected = {0j: RegionKind.INTERIOR, 18 + 0j: RegionKind.BOUNDARY_CUSP, -6 + 0j: RegionKind.BOUNDARY_REGULAR}
    for u, kind in expected.items():
        region = classify_region(u)
        record(f"classify u={u.real:g}", max(region.roots.residuals()), region.kind is kind)
    exterior = classify_region(30)
    omega_gap = abs(exterior.omega - (math.sqrt(2 + math.sqrt(3)) - 1))
    record("classify u=30", omega_gap, exterior.kind is RegionKind.EXTERIOR)

    data = ScatteringData.from_settings(config.scattering)
    points = np.exp(np.linspace(-2.0, 2.0, 17) + 1j * np.linspace(0.1, 6.0, 17))
    symmetry = data.check_symmetries(points)
    record("scattering symmetries", symmetry, symmetry < 1e-12)

    small = config.with_overrides(
        {
            "quadrature": QuadratureSettings(
                s_max=config.quadrature.s_max, n_r=SELFTEST_GRID, n_theta=SELFTEST_GRID
            ).model_dump()
        }
    )
    solver = DBarSolver.from_config(small)
    for z, t in ((0.5 + 0.25j, 0.0), (1.0 - 0.5j, 0.2)):
        sample = solver.reconstruct_v(z, t)
        record(f"|v| at z={z}, t={t:g}", abs(sample.v), math.isfinite(abs(sample.v)) and sample.is_real())
    frame = pd.DataFrame(checks)
    return frame, {"passed": bool(frame["passed"].all()), "c": config.scattering.c}


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], CommandResult]] = {
    "roots": run_roots,
    "region": run_region,
    "linearized": run_linearized,
    "decompose": run_decompose,
    "reconstruct": run_reconstruct,
    "decay-sweep": run_decay_sweep,
    "ray-scan": run_ray_scan,
    "selftest": run_selftest,
}


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and write its CSV and manifest.

    Returns:
        The process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG

    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args)
    except (ValidationError, ValueError, OSError) as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG

    out = args.out if args.out is not None else config.output.directory / f"{args.command}.csv"
    manifest_path = out.parent / config.output.manifest_name
    started = time.perf_counter()
    manifest = RunManifest(
        command=args.command,
        version=_version(),
        started_utc=datetime.now(timezone.utc).isoformat(),
        wall_time=0.0,
        config=config.model_dump(mode="json"),
    )
    try:
        frame, summary = COMMANDS[args.command](args, config)
        manifest.outputs.append(str(_write_csv(frame, out)))
        manifest.summary = summary
        manifest.failure_counts = {"failed_points": int(summary.get("failed_points", 0))}
        if args.command == "selftest" and not summary["passed"]:
            manifest.exit_code = EXIT_NUMERICAL
    except (NVLabError, ValueError) as e:
        # value errors come from flags (t = 0, eps, window, too few times); the rest is numerical
        usage = isinstance(e, ValueError) and not isinstance(e, NonFiniteSample)
        logger.error("%s failed: %s", args.command, e)
        manifest.summary = {"error": f"{type(e).__name__}: {e}"}
        manifest.failure_counts = {"failed_points": int(getattr(e, "failed", 0))}
        manifest.exit_code = EXIT_CONFIG if usage else EXIT_NUMERICAL
    manifest.wall_time = time.perf_counter() - started
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return manifest.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)
