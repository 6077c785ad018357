"""Large-time sweeps of the reconstructed potential.

The main estimate bounds |v(z, t)| by const * ln(3 + |t|) / (1 + |t|) uniformly in z.
``decay_sweep`` measures sup_z |v| on a window growing with t, ``ray_scan`` follows
|v(u t, t)| along a ray, and ``fit_constant`` estimates the constant.
"""

import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import linregress

from nv_transparent.config import RunConfig, SweepSettings
from nv_transparent.dbar_solver import DBarSolver, PotentialSample
from nv_transparent.errors import InsufficientData, NoConvergence, TooManyFailures, WindowTooSmall
from nv_transparent.linearized_flow import periodic_lattice, spectral_gap

logger = logging.getLogger(__name__)


def normalizer(t: float) -> float:
    """ln(3 + |t|) / (1 + |t|)."""
    return math.log(3.0 + abs(t)) / (1.0 + abs(t))


class DecayEntry(BaseModel):
    t: float
    sup_v: float = Field(ge=0.0)
    argmax_z: complex
    normalizer: float
    ratio: float
    failed_points: int = 0


class DecayCurve(BaseModel):
    entries: List[DecayEntry]

    @field_validator("entries")
    @classmethod
    def _increasing(cls, entries: List[DecayEntry]) -> List[DecayEntry]:
        times = [e.t for e in entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"Times must be strictly increasing, got {times}")
        return entries

    @property
    def failed_points(self) -> int:
        return sum(e.failed_points for e in self.entries)

    @classmethod
    def from_samples(cls, times: Sequence[float], sup_values: Sequence[float]) -> "DecayCurve":
        """Curve from (t, sup_v) pairs, argmax unknown (set to 0)."""
        return cls(
            entries=[
                DecayEntry(t=t, sup_v=v, argmax_z=0j, normalizer=normalizer(t), ratio=v / normalizer(t))
                for t, v in zip(times, sup_values)
            ]
        )


class RaySample(BaseModel):
    t: float
    abs_v: float = Field(ge=0.0)


class RayScan(BaseModel):
    u: complex
    samples: List[RaySample]

    @field_validator("samples")
    @classmethod
    def _increasing(cls, samples: List[RaySample]) -> List[RaySample]:
        times = [s.t for s in samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"Times must be strictly increasing, got {times}")
        return samples

    def is_decaying(self) -> bool:
        """True when |v| strictly decreases along the ray."""
        values = [s.abs_v for s in self.samples]
        return all(b < a for a, b in zip(values, values[1:]))


class ConstantFit(BaseModel):
    c_hat: float
    """max over entries of sup_v / normalizer."""
    max_ratio: float
    """Largest ratio relative to the first one (0 when the curve vanishes)."""
    trend_ok: bool
    """False when the ratios increase monotonically beyond 3x the first."""
    one_over_t_constant: float
    """max over entries of sup_v (1 + t), the constant of a pure 1/t law."""


def fit_constant(curve: DecayCurve, growth_limit: float = 3.0) -> ConstantFit:
    """Estimate the constant of the main estimate from a decay curve.

    Raises:
        InsufficientData: with fewer than 4 entries.
    """
    if len(curve.entries) < 4:
        raise InsufficientData(f"fit_constant needs at least 4 entries, got {len(curve.entries)}")
    ratios = [e.ratio for e in curve.entries]
    c_hat = max(ratios)
    growth = c_hat / ratios[0] if ratios[0] > 0 else (0.0 if c_hat == 0 else math.inf)
    monotone = all(b > a for a, b in zip(ratios, ratios[1:]))
    return ConstantFit(
        c_hat=c_hat,
        max_ratio=growth,
        trend_ok=not (monotone and growth > growth_limit),
        one_over_t_constant=max(e.sup_v * (1.0 + abs(e.t)) for e in curve.entries),
    )


def fit_decay_exponent(times: Sequence[float], values: Sequence[float]) -> float:
    """Slope of log(values) against log(times)."""
    ts = np.asarray(times, dtype=float)
    vs = np.asarray(values, dtype=float)
    keep = (ts > 0) & (vs > 0)
    if np.count_nonzero(keep) < 2:
        raise InsufficientData("A decay exponent needs at least 2 positive samples")
    return float(linregress(np.log(ts[keep]), np.log(vs[keep])).slope)


class AsymptoticsLab(BaseModel):
    """Sweeps over (z, t) driven by one d-bar solver.

    Each time gets the solver ``solver.resolved(t, |z|)`` for the largest |z| it
    visits, so every point of a sweep at that time shares one grid.
    """

    solver: DBarSolver
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    threads: int = Field(default=1, gt=0)

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    @classmethod
    def from_config(cls, config: RunConfig) -> "AsymptoticsLab":
        return cls(solver=DBarSolver.from_config(config), sweep=config.sweep, threads=config.threads or 1)

    def half_width(self, t: float, half_width: Optional[float] = None) -> float:
        """Window half-width, by default factor * max(|t|, 1)."""
        return half_width if half_width is not None else self.sweep.z_half_width_factor * max(abs(t), 1.0)

    def z_lattice(self, t: float, half_width: Optional[float] = None, resolution: Optional[int] = None) -> np.ndarray:
        """Square lattice |Re z|, |Im z| <= half_width."""
        half = self.half_width(t, half_width)
        n = resolution or self.sweep.z_resolution
        axis = np.linspace(-half, half, n)
        return axis[:, np.newaxis] + 1j * axis[np.newaxis, :]

    def solver_for(self, t: float, z_abs: float) -> DBarSolver:
        """Solver resolving the phase at time t for |z| <= z_abs, with its caches built."""
        solver = self.solver.resolved(t, z_abs + self.solver.settings.stencil_h)
        solver.prepare()
        return solver

    @staticmethod
    def _sample(solver: DBarSolver, z: complex, t: float) -> Optional[PotentialSample]:
        try:
            return solver.reconstruct_v(complex(z), t)
        except NoConvergence as e:
            logger.debug("Excluding z=%s at t=%s: %s", z, t, e)
            return None

    def _samples(self, solver: DBarSolver, points: Sequence[complex], t: float) -> List[Optional[PotentialSample]]:
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(lambda z: self._sample(solver, z, t), points))
        return [self._sample(solver, z, t) for z in points]

    def _entry(self, t: float, lattice: np.ndarray, samples: List[Optional[PotentialSample]]) -> DecayEntry:
        failed = sum(s is None for s in samples)
        total = len(samples)
        if failed > self.sweep.failure_fraction * total:
            raise TooManyFailures(failed, total)
        if failed:
            logger.warning("t=%s: %d of %d lattice points excluded after failing to converge", t, failed, total)
        magnitudes = np.array([abs(s.v) if s is not None else -1.0 for s in samples]).reshape(lattice.shape)
        index = np.unravel_index(int(np.argmax(magnitudes)), lattice.shape)
        sup_v = max(float(magnitudes[index]), 0.0)
        n = lattice.shape[0]
        if sup_v > 0.0 and (index[0] in (0, n - 1) or index[1] in (0, lattice.shape[1] - 1)):
            raise WindowTooSmall(f"sup |v| at t={t} is attained on the window boundary z={lattice[index]}")
        norm = normalizer(t)
        logger.info("t=%s: sup|v| = %.6e at z=%s (ratio %.4f)", t, sup_v, lattice[index], sup_v / norm)
        return DecayEntry(
            t=t,
            sup_v=sup_v,
            argmax_z=complex(lattice[index]),
            normalizer=norm,
            ratio=sup_v / norm,
            failed_points=failed,
        )

    @staticmethod
    def _ordered(t_list: Sequence[float]) -> List[float]:
        times = sorted(float(t) for t in t_list)
        if len(set(times)) != len(times):
            raise ValueError(f"Duplicate times in {list(t_list)}")
        return times

    def decay_sweep(
        self,
        t_list: Optional[Sequence[float]] = None,
        half_width: Optional[float] = None,
        resolution: Optional[int] = None,
    ) -> DecayCurve:
        """sup over a z-lattice of |v(z, t)| for each t.

        Args:
            t_list: Times, defaults to the sweep settings.
            half_width: Fixed window half-width; by default it grows like factor * |t|.
            resolution: Lattice points per axis.

        Raises:
            TooManyFailures: when more than ``failure_fraction`` of the points fail.
            WindowTooSmall: when the maximum sits on the window boundary.
            UnderResolvedPhase: when no grid within the node budget resolves the phase at some t.
        """
        entries = []
        for t in self._ordered(t_list if t_list is not None else self.sweep.t_list):
            lattice = self.z_lattice(t, half_width, resolution)
            solver = self.solver_for(t, float(np.max(np.abs(lattice))))
            entries.append(self._entry(t, lattice, self._samples(solver, lattice.ravel().tolist(), t)))
        return DecayCurve(entries=entries)

    async def adecay_sweep(
        self,
        t_list: Optional[Sequence[float]] = None,
        half_width: Optional[float] = None,
        resolution: Optional[int] = None,
    ) -> DecayCurve:
        """Async version of ``decay_sweep``; points run in worker threads, at most ``threads`` at a time."""
        semaphore = asyncio.Semaphore(self.threads)

        async def run(solver: DBarSolver, z: complex, t: float) -> Optional[PotentialSample]:
            async with semaphore:
                return await asyncio.to_thread(self._sample, solver, z, t)

        entries = []
        for t in self._ordered(t_list if t_list is not None else self.sweep.t_list):
            lattice = self.z_lattice(t, half_width, resolution)
            solver = await asyncio.to_thread(self.solver_for, t, float(np.max(np.abs(lattice))))
            samples = await asyncio.gather(*(run(solver, z, t) for z in lattice.ravel().tolist()))
            entries.append(self._entry(t, lattice, list(samples)))
        return DecayCurve(entries=entries)

    def ray_scan(self, u: complex, t_list: Optional[Sequence[float]] = None) -> RayScan:
        """|v(u t, t)| along the ray of velocity u."""
        u = complex(u)
        samples = []
        for t in self._ordered(t_list if t_list is not None else self.sweep.t_list):
            sample = self.solver_for(t, abs(u * t)).reconstruct_v(u * t, t)
            samples.append(RaySample(t=t, abs_v=abs(sample.v)))
        return RayScan(u=u, samples=samples)

    async def aray_scan(self, u: complex, t_list: Optional[Sequence[float]] = None) -> RayScan:
        u = complex(u)
        times = self._ordered(t_list if t_list is not None else self.sweep.t_list)
        semaphore = asyncio.Semaphore(self.threads)

        def solve(t: float) -> PotentialSample:
            return self.solver_for(t, abs(u * t)).reconstruct_v(u * t, t)

        async def run(t: float) -> RaySample:
            async with semaphore:
                sample = await asyncio.to_thread(solve, t)
            return RaySample(t=t, abs_v=abs(sample.v))

        return RayScan(u=u, samples=list(await asyncio.gather(*(run(t) for t in times))))

    def time_reversal_gap(
        self, t: float, half_width: Optional[float] = None, resolution: Optional[int] = None
    ) -> Tuple[float, float, float]:
        """(sup_v(t), sup_v(-t), relative difference) on the same window."""
        half = self.half_width(t, half_width)
        forward = self.decay_sweep([abs(t)], half, resolution).entries[0].sup_v
        backward = self.decay_sweep([-abs(t)], half, resolution).entries[0].sup_v
        scale = max(forward, backward)
        return forward, backward, (abs(forward - backward) / scale if scale > 0 else 0.0)

    def transparency_gap(
        self,
        t: float,
        half_width: float,
        n_points: int,
        gap_radius: float = 1.6,
        boundary_tol: float = 1e-3,
    ) -> float:
        """Relative spectral magnitude of z -> v(z, t) inside |p| < gap_radius.

        A transparent potential has, to first order in the data, no Fourier mass in
        the disk |p| < 2 (the Born approximation of v is supported on |p| >= 2).
        v is sampled on ``periodic_lattice(half_width, n_points)``.

        Raises:
            TooManyFailures: if any lattice point fails to converge.
            WindowTooSmall: if |v| is not small on the lattice boundary.
        """
        lattice = periodic_lattice(half_width, n_points)
        solver = self.solver_for(t, float(np.max(np.abs(lattice))))
        samples = self._samples(solver, lattice.ravel().tolist(), t)
        failed = sum(s is None for s in samples)
        if failed:
            raise TooManyFailures(failed, len(samples))
        values = np.array([s.v.real for s in samples if s is not None]).reshape(lattice.shape)
        return spectral_gap(values, 2.0 * half_width / n_points, gap_radius, boundary_tol, what="v")
