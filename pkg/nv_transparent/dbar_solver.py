"""Neumann solver for the d-bar equation and reconstruction of the transparent potential.

For fixed (z, t) the spectral function solves

    mu = 1 + A mu,   (A f)(lambda) = -(1/pi) Int r(zeta, z, t) conj(f(zeta)) / (zeta - lambda) dA,

and the potential is v(z, t) = 2i d/dz mu_{-1}(z, t), where
mu_{-1} = (1/pi) Int r(zeta, z, t) conj(mu(zeta)) dA = B(mu) / pi is the 1/lambda
coefficient of mu at infinity.
"""

import logging
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from nv_transparent.config import QuadratureSettings, RunConfig, SolverSettings
from nv_transparent.cplane_quadrature import MAX_PHASE_STEP, CauchyKernel, RadialGrid, compensated_sum
from nv_transparent.errors import NoConvergence, UnderResolvedPhase
from nv_transparent.phase_geometry import phase_raw
from nv_transparent.scattering_data import ScatteringData

logger = logging.getLogger(__name__)

NodeField = Union[complex, float, np.ndarray]

DIAGNOSTIC_TERMS = 4
DIVERGENCE_FACTOR = 10.0
RESOLVED_CACHE = 4


class NeumannDiagnostics(BaseModel):
    series_coefficients: List[complex]
    """a_k = B(A^{k-1} 1) / pi, k = 1..4; their sum approximates mu_{-1}."""
    power_norms: List[float]
    """sup-norms of A^n 1, n = 1..4."""


class MuSolution(BaseModel):
    """Fixed point of mu = 1 + A mu on the grid."""

    z: complex
    t: float
    mu: np.ndarray
    """Node values, shape (n_r, n_theta)."""
    mu_minus1: complex
    """(1/pi) B(mu), the 1/lambda coefficient."""
    b_dot_one: complex
    """B(1), the same coefficient at first order without the 1/pi factor."""
    iterations: int = Field(ge=0)
    residual: float = Field(ge=0.0)
    """sup-norm of the last update."""
    contraction: float = Field(ge=0.0)
    """sup-norm of A^2 1, the convergence gate."""
    diagnostics: Optional[NeumannDiagnostics] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def outer_ring_check(self, grid: RadialGrid) -> Tuple[float, float]:
        """(max |mu - 1| on the outermost ring, predicted |mu_{-1}| / |lambda| there)."""
        deviation = float(np.max(np.abs(self.mu[-1] - 1.0)))
        return deviation, abs(self.mu_minus1) / float(grid.rho[-1])

    def ring_jump_ratio(self) -> float:
        """Largest ring-to-ring jump of mu divided by the median jump (0 for a constant field)."""
        jumps = np.max(np.abs(np.diff(self.mu, axis=0)), axis=1)
        median = float(np.median(jumps))
        if median == 0.0:
            return 0.0
        return float(jumps.max()) / median


class PotentialSample(BaseModel):
    z: complex
    t: float
    v: complex
    imag_leak: float = Field(ge=0.0)
    """|Im v|; the potential is real, so this measures numerical error."""
    iterations: int = 0
    """Largest iteration count over the stencil solves."""
    residual: float = 0.0

    def is_real(self, rel_tol: float = 1e-3) -> bool:
        return self.imag_leak <= rel_tol * (1.0 + abs(self.v))


class DBarSolver(BaseModel):
    """Solves the d-bar problem for one scattering datum on one grid.

    Node-field operations (``apply_A``, ``apply_B``, ``solve_mu``) run on ``grid``
    and raise UnderResolvedPhase where its cells cannot follow exp(i S) over the
    data. ``mu_minus1`` and ``reconstruct_v`` first move to ``resolved(t, |z|)``.
    """

    data: ScatteringData
    grid: RadialGrid = Field(default_factory=RadialGrid)
    settings: SolverSettings = Field(default_factory=SolverSettings)
    quadrature: QuadratureSettings = Field(default_factory=QuadratureSettings)
    """Support tolerance, node budget and table size; the grid fields of it are not read."""
    threads: int = Field(default=1, gt=0)

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    _kernel: CauchyKernel = PrivateAttr()
    _r: np.ndarray = PrivateAttr()
    _children: OrderedDict = PrivateAttr(default_factory=OrderedDict)
    _lock: threading.Lock = PrivateAttr(default_factory=threading.Lock)

    def model_post_init(self, __context: object) -> None:
        self._kernel = CauchyKernel(grid=self.grid, table_limit=self.quadrature.table_limit, threads=self.threads)
        self._r = np.asarray(self.data.r_static(self.grid.nodes), dtype=complex)

    @classmethod
    def from_config(cls, config: RunConfig) -> "DBarSolver":
        """Solver on the configured grid, with s_max trimmed to the support of the data."""
        data = ScatteringData.from_settings(config.scattering)
        grid = RadialGrid.from_settings(config.quadrature)
        s_hi = data.support(config.quadrature.support_tol)[1]
        if 0.0 < s_hi < grid.s_max:
            grid = RadialGrid(s_max=s_hi, n_r=grid.n_r, n_theta=grid.n_theta)
        return cls(
            data=data, grid=grid, settings=config.solver, quadrature=config.quadrature, threads=config.threads or 1
        )

    @property
    def support_limit(self) -> float:
        """Log-radius beyond which the data fall below ``support_tol``, capped at the grid."""
        return min(self.grid.s_max, self.data.support(self.quadrature.support_tol)[1])

    def phase_step(self, t: float, z_abs: float) -> float:
        """Bound on the phase advance per cell over the support, for |z| <= z_abs."""
        return self.grid.max_phase_step(t, z_abs, self.support_limit)

    def resolved(self, t: float, z_abs: float) -> "DBarSolver":
        """Solver whose grid resolves the phase at time t for |z| <= z_abs.

        Returns ``self`` when the grid already does; otherwise a solver on the
        smallest finer grid (at least as fine as this one), cached per grid.

        Raises:
            UnderResolvedPhase: when that grid exceeds ``max_nodes``.
        """
        target = 1.0 / self.quadrature.samples_per_radian
        step = self.phase_step(t, z_abs)
        if self.data.is_free or step <= target * (1.0 + 1e-12):
            return self
        grid = RadialGrid.resolving(
            t,
            z_abs,
            s_max=self.grid.s_max,
            s_phase=self.support_limit,
            samples_per_radian=self.quadrature.samples_per_radian,
            min_r=self.grid.n_r,
            min_theta=self.grid.n_theta,
        )
        if grid.size > self.quadrature.max_nodes:
            raise UnderResolvedPhase(
                f"Resolving the phase at t={t}, |z|<={z_abs:.4g} needs a {grid.n_r}x{grid.n_theta} grid, "
                f"above max_nodes={self.quadrature.max_nodes}",
                step=step,
                required_nodes=grid.size,
            )
        with self._lock:
            child = self._children.get(grid)
            if child is None:
                logger.info(
                    "t=%s |z|<=%.4g: solving on a %dx%d grid (%.2f rad per cell on the base grid)",
                    t,
                    z_abs,
                    grid.n_r,
                    grid.n_theta,
                    step,
                )
                child = type(self)(
                    data=self.data, grid=grid, settings=self.settings, quadrature=self.quadrature, threads=self.threads
                )
                self._children[grid] = child
                while len(self._children) > RESOLVED_CACHE:
                    self._children.popitem(last=False)
            else:
                self._children.move_to_end(grid)
            return child

    def prepare(self) -> None:
        """Build shared caches so that concurrent solves only read them."""
        self._kernel.prepare()

    def _field(self, f: NodeField) -> np.ndarray:
        values = np.asarray(f, dtype=complex)
        if values.size == self.grid.size:
            return values.reshape(self.grid.shape)
        return np.broadcast_to(values, self.grid.shape)

    def coefficient(self, z: complex, t: float) -> np.ndarray:
        """r(lambda, z, t) at the nodes.

        Raises:
            UnderResolvedPhase: when the phase advances more than MAX_PHASE_STEP
                radians per cell where r is not negligible.
        """
        if self.data.is_free:
            return np.zeros(self.grid.shape, dtype=complex)
        if self.phase_step(t, abs(z)) > MAX_PHASE_STEP:
            step = self.grid.phase_resolution(t, z, weight=self._r)
            if step > MAX_PHASE_STEP:
                raise UnderResolvedPhase(
                    f"Phase at z={z}, t={t} advances {step:.2f} rad per cell on a "
                    f"{self.grid.n_r}x{self.grid.n_theta} grid",
                    step=step,
                )
        return self._r * np.exp(1j * np.asarray(phase_raw(z, t, self.grid.nodes)))

    def _apply_a(self, coefficient: np.ndarray, f: np.ndarray) -> np.ndarray:
        return -self._kernel.apply(coefficient * np.conj(f)) / np.pi

    def _apply_b(self, coefficient: np.ndarray, f: np.ndarray) -> complex:
        return compensated_sum(self.grid.weights * coefficient * np.conj(f))

    def apply_A(self, z: complex, t: float, f: NodeField) -> np.ndarray:
        """(A f) at every node; conjugate-linear in f."""
        if self.data.is_free:
            return np.zeros(self.grid.shape, dtype=complex)
        return self._apply_a(self.coefficient(z, t), self._field(f))

    def apply_B(self, z: complex, t: float, f: NodeField) -> complex:
        """B f = Int r(zeta, z, t) conj(f(zeta)) dA."""
        if self.data.is_free:
            return 0j
        return self._apply_b(self.coefficient(z, t), self._field(f))

    def neumann_partial_sum(self, z: complex, t: float, n: int) -> np.ndarray:
        """1 + A 1 + ... + A^n 1."""
        coefficient = self.coefficient(z, t)
        term = np.ones(self.grid.shape, dtype=complex)
        total = term.copy()
        for _ in range(n):
            term = self._apply_a(coefficient, term)
            total = total + term
        return total

    def solve_mu(self, z: complex, t: float, record_diagnostics: bool = False) -> MuSolution:
        """Iterate mu <- 1 + A mu until the update is below ``tol_mu``.

        Args:
            z: Spatial point.
            t: Time, 0 allowed.
            record_diagnostics: Also record the first Neumann series coefficients.

        Raises:
            NoConvergence: the contraction gate ||A^2 1|| < gate fails, the
                iteration diverges or it does not settle within ``max_iter`` steps.
        """
        z = complex(z)
        t = float(t)
        ones = np.ones(self.grid.shape, dtype=complex)
        if self.data.is_free:
            return MuSolution(
                z=z, t=t, mu=ones, mu_minus1=0j, b_dot_one=0j, iterations=0, residual=0.0, contraction=0.0
            )

        coefficient = self.coefficient(z, t)
        first = self._apply_a(coefficient, ones)
        second = self._apply_a(coefficient, first)
        contraction = float(np.max(np.abs(second)))
        if contraction >= self.settings.gate:
            raise NoConvergence(
                f"Contraction gate failed at z={z}, t={t}: ||A^2 1|| = {contraction:.3e} >= {self.settings.gate}",
                residual=contraction,
                iterations=0,
            )

        diagnostics = None
        if record_diagnostics:
            powers = [first, second]
            while len(powers) < DIAGNOSTIC_TERMS:
                powers.append(self._apply_a(coefficient, powers[-1]))
            previous = [ones] + powers[:-1]
            diagnostics = NeumannDiagnostics(
                series_coefficients=[self._apply_b(coefficient, p) / np.pi for p in previous],
                power_norms=[float(np.max(np.abs(p))) for p in powers],
            )

        mu = ones + first
        best = np.inf
        residual = np.inf
        for iteration in range(1, self.settings.max_iter + 1):
            updated = ones + self._apply_a(coefficient, mu)
            residual = float(np.max(np.abs(updated - mu)))
            mu = updated
            logger.debug("z=%s t=%s iteration %d residual %.3e", z, t, iteration, residual)
            if residual < self.settings.tol_mu:
                break
            if residual > DIVERGENCE_FACTOR * best:
                raise NoConvergence(f"Neumann iteration diverges at z={z}, t={t}", residual, iteration)
            best = min(best, residual)
        else:
            raise NoConvergence(f"Neumann iteration stalled at z={z}, t={t}", residual, self.settings.max_iter)

        return MuSolution(
            z=z,
            t=t,
            mu=mu,
            mu_minus1=self._apply_b(coefficient, mu) / np.pi,
            b_dot_one=self._apply_b(coefficient, ones),
            iterations=iteration,
            residual=residual,
            contraction=contraction,
            diagnostics=diagnostics,
        )

    def mu_minus1(self, z: complex, t: float) -> complex:
        """mu_{-1}(z, t), solved on a grid that resolves the phase at (z, t)."""
        return self.resolved(t, abs(z)).solve_mu(z, t).mu_minus1

    def reconstruct_v(self, z: complex, t: float) -> PotentialSample:
        """v(z, t) = 2i d/dz mu_{-1} with d/dz = (d/dx1 - i d/dx2) / 2 by central differences."""
        z = complex(z)
        t = float(t)
        if self.data.is_free:
            return PotentialSample(z=z, t=t, v=0j, imag_leak=0.0)
        h = self.settings.stencil_h
        solver = self.resolved(t, abs(z) + h)
        if solver is not self:
            return solver.reconstruct_v(z, t)
        stencil = [z + h, z - h, z + 1j * h, z - 1j * h]
        if self.threads > 1:
            self.prepare()
            with ThreadPoolExecutor(max_workers=min(self.threads, len(stencil))) as pool:
                solutions = list(pool.map(lambda point: self.solve_mu(point, t), stencil))
        else:
            solutions = [self.solve_mu(point, t) for point in stencil]
        m = [s.mu_minus1 for s in solutions]
        d_x1 = (m[0] - m[1]) / (2.0 * h)
        d_x2 = (m[2] - m[3]) / (2.0 * h)
        v = 2j * 0.5 * (d_x1 - 1j * d_x2)
        sample = PotentialSample(
            z=z,
            t=t,
            v=v,
            imag_leak=abs(v.imag),
            iterations=max(s.iterations for s in solutions),
            residual=max(s.residual for s in solutions),
        )
        if not sample.is_real():
            logger.warning("Potential at z=%s, t=%s has imaginary part %.3e", z, t, sample.imag_leak)
        return sample
