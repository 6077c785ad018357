"""Log-polar quadrature on the complex plane.

Nodes sit at lambda = exp(s_j + i theta_k) with s_j the midpoints of a uniform
partition of [-s_max, s_max] and theta_k = 2 pi k / n_theta; the weights
rho^2 ds dtheta realize dA = rho^2 ds dtheta. The radial rule is a midpoint
rule in s, so integrands that vanish flatly at both ends of the log-radius
interval are integrated with spectral accuracy, and s = 0 (the unit circle) is
never a node.

Cauchy integrals subtract the first-order Taylor polynomial of the density
around the target, times a Gaussian cutoff of width
CUTOFF_CELLS * max(ds, dtheta) * |lambda|, and add back its exact integral.
What remains is smooth apart from terms of order |zeta - lambda| at the target.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator
from scipy import fft

from nv_transparent.config import QuadratureSettings
from nv_transparent.errors import NonFiniteSample
from nv_transparent.phase_geometry import phase_raw_dzeta

logger = logging.getLogger(__name__)

Integrand = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]

MAX_PHASE_STEP = 1.0
"""Largest phase increment (radians) per cell before a phase counts as under-resolved."""
CUTOFF_CELLS = 3.0
CUTOFF_AREA = math.pi
"""Integral of smooth_cutoff(|x|) over the plane."""
BLOCK_ENTRIES = 2**22
GRID_MULTIPLE = 8
DERIVATIVE_STEP = 1e-5


def compensated_sum(values: np.ndarray) -> complex:
    """Sum with math.fsum on real and imaginary parts, independent of the node order."""
    flat = np.asarray(values, dtype=complex).ravel()
    return complex(math.fsum(flat.real), math.fsum(flat.imag))


def smooth_cutoff(x: np.ndarray) -> np.ndarray:
    """exp(-x^2), a function of |x|^2 and hence smooth around the target."""
    x = np.asarray(x, dtype=float)
    return np.exp(-(x**2))


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        count = int(np.count_nonzero(bad))
        raise NonFiniteSample(f"{what} produced {count} non-finite samples", count=count)


def _round_up(n: int) -> int:
    return GRID_MULTIPLE * math.ceil(n / GRID_MULTIPLE)


class QuadratureResult(BaseModel):
    value: complex
    est_error: float = Field(default=0.0, ge=0.0)
    """|value - value on the grid refined x2 in each direction|, 0 when not requested."""

    model_config = ConfigDict(frozen=True)


class RadialGrid(BaseModel):
    """Immutable log-polar grid with per-node area weights."""

    s_max: float = Field(default=3.0, gt=0.0)
    n_r: int = Field(default=128, gt=0)
    n_theta: int = Field(default=96, gt=0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    _s: np.ndarray = PrivateAttr()
    _theta: np.ndarray = PrivateAttr()
    _nodes: np.ndarray = PrivateAttr()
    _weights: np.ndarray = PrivateAttr()

    @field_validator("n_r", "n_theta")
    @classmethod
    def _must_be_even(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"Grid sizes must be even, got {value}")
        return value

    def model_post_init(self, __context: object) -> None:
        ds = self.ds
        s = -self.s_max + (np.arange(self.n_r) + 0.5) * ds
        theta = np.arange(self.n_theta) * self.dtheta
        rho = np.exp(s)
        nodes = rho[:, np.newaxis] * np.exp(1j * theta)[np.newaxis, :]
        weights = np.repeat((rho**2 * ds * self.dtheta)[:, np.newaxis], self.n_theta, axis=1)
        for array in (s, theta, nodes, weights):
            array.setflags(write=False)
        self._s = s
        self._theta = theta
        self._nodes = nodes
        self._weights = weights

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RadialGrid):
            return NotImplemented
        return (self.s_max, self.n_r, self.n_theta) == (other.s_max, other.n_r, other.n_theta)

    def __hash__(self) -> int:
        return hash((self.s_max, self.n_r, self.n_theta))

    @classmethod
    def from_settings(cls, settings: QuadratureSettings) -> "RadialGrid":
        return cls(s_max=settings.s_max, n_r=settings.n_r, n_theta=settings.n_theta)

    @staticmethod
    def phase_frequency(t: float, z_abs: float, s: float) -> float:
        """Bound on |dS/ds| and |dS/dtheta| for |z| <= z_abs over |ln|lambda|| <= |s|.

        S(lambda, z, t) = -Re(lambda conj(z)) - Re(z / lambda) + 2 t Re(lambda^3 + lambda^-3),
        so both log-polar derivatives are at most |z| (rho + 1/rho) + 6 |t| (rho^3 + rho^-3).
        """
        rho = math.exp(abs(s))
        return abs(z_abs) * (rho + 1.0 / rho) + 6.0 * abs(t) * (rho**3 + rho**-3)

    def max_phase_step(self, t: float, z_abs: float, s_phase: Optional[float] = None) -> float:
        """Bound on the phase increment per cell for |z| <= z_abs over |ln|lambda|| <= s_phase."""
        s = self.s_max if s_phase is None else min(abs(s_phase), self.s_max)
        return self.phase_frequency(t, z_abs, s) * self.spacing

    @classmethod
    def resolving(
        cls,
        t: float,
        z_abs: float,
        s_max: float = 3.0,
        s_phase: Optional[float] = None,
        samples_per_radian: float = 1.0,
        min_r: int = 32,
        min_theta: int = 32,
    ) -> "RadialGrid":
        """Smallest grid whose cells see at most ``1 / samples_per_radian`` radians of S(., z, t).

        Sizes are rounded up to a multiple of GRID_MULTIPLE.

        Args:
            t: Time.
            z_abs: Bound on |z| for the points the grid will serve.
            s_max: Truncation of the log-radius.
            s_phase: Log-radius up to which the phase must be resolved, defaults to ``s_max``.
                Beyond it the data are assumed negligible.
            samples_per_radian: Density of cells relative to the phase frequency.
            min_r: Smallest number of log-radial nodes.
            min_theta: Smallest number of angular nodes.
        """
        s = s_max if s_phase is None else min(abs(s_phase), s_max)
        cells = cls.phase_frequency(t, z_abs, s) * samples_per_radian
        n_r = _round_up(max(min_r, math.ceil(2.0 * s_max * cells)))
        n_theta = _round_up(max(min_theta, math.ceil(2.0 * math.pi * cells)))
        return cls(s_max=s_max, n_r=n_r, n_theta=n_theta)

    @property
    def ds(self) -> float:
        return 2.0 * self.s_max / self.n_r

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.n_theta

    @property
    def s(self) -> np.ndarray:
        return self._s

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self._s)

    @property
    def nodes(self) -> np.ndarray:
        """Complex nodes, shape (n_r, n_theta)."""
        return self._nodes

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def shape(self) -> tuple:
        return (self.n_r, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @property
    def spacing(self) -> float:
        """Largest log-polar step, max(ds, dtheta); the local Euclidean spacing is |lambda| times this."""
        return max(self.ds, self.dtheta)

    def annulus_area(self) -> float:
        return math.pi * (math.exp(2.0 * self.s_max) - math.exp(-2.0 * self.s_max))

    def total_weight(self) -> float:
        return math.fsum(self._weights.ravel())

    def refined(self, factor: int = 2) -> "RadialGrid":
        return type(self)(s_max=self.s_max, n_r=factor * self.n_r, n_theta=factor * self.n_theta)

    def covers_flatness_band(self, band: float = 0.2, min_nodes: int = 8) -> bool:
        """True when at least ``min_nodes`` log-radii fall in |s| < band."""
        return int(np.count_nonzero(np.abs(self._s) < band)) >= min_nodes

    def sample(self, f: Integrand) -> np.ndarray:
        """Node values of an integrand given as a callable or as an array of grid shape."""
        if callable(f):
            values = np.asarray(f(self._nodes), dtype=complex)
        else:
            values = np.asarray(f, dtype=complex)
        values = np.broadcast_to(values.reshape(self.shape) if values.size == self.size else values, self.shape)
        _check_finite(values, "Integrand")
        return values

    def derivatives(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Wirtinger derivatives (d/dlambda, d/dconj(lambda)) of node values.

        The log-radial derivative uses second-order differences, the angular one is
        spectral with the Nyquist mode dropped.
        """
        values = np.asarray(values, dtype=complex).reshape(self.shape)
        d_s = np.gradient(values, self.ds, axis=0, edge_order=2 if self.n_r > 2 else 1)
        modes = fft.fftfreq(self.n_theta, d=1.0 / self.n_theta)
        if self.n_theta % 2 == 0:
            modes[self.n_theta // 2] = 0.0
        d_theta = fft.ifft(1j * modes * fft.fft(values, axis=1), axis=1)
        return (d_s - 1j * d_theta) / (2.0 * self._nodes), (d_s + 1j * d_theta) / (2.0 * np.conj(self._nodes))

    def integrate(self, f: Integrand, estimate_error: bool = False) -> QuadratureResult:
        """Weighted node sum of f.

        Args:
            f: Callable evaluated on the node array, or node values of grid shape.
            estimate_error: Compare against the grid refined x2; needs a callable.

        Raises:
            NonFiniteSample: if a node value is NaN or infinite.
        """
        value = compensated_sum(self.sample(f) * self._weights)
        if not estimate_error:
            return QuadratureResult(value=value)
        if not callable(f):
            raise ValueError("Error estimation needs the integrand as a callable")
        fine = self.refined().integrate(f).value
        return QuadratureResult(value=value, est_error=abs(fine - value))

    def _taylor(
        self, f: Integrand, values: np.ndarray, lam: complex, f_at_lam: Optional[complex]
    ) -> Tuple[complex, complex, complex]:
        if callable(f):
            eta = DERIVATIVE_STEP * abs(lam)
            around = np.asarray(f(np.array([lam + eta, lam - eta, lam + 1j * eta, lam - 1j * eta])), dtype=complex)
            around = np.broadcast_to(around.ravel() if around.size == 4 else around, (4,))
            d_x = (around[0] - around[1]) / (2.0 * eta)
            d_y = (around[2] - around[3]) / (2.0 * eta)
            f0 = complex(np.asarray(f(np.asarray(lam)))) if f_at_lam is None else complex(f_at_lam)
            return f0, complex(0.5 * (d_x - 1j * d_y)), complex(0.5 * (d_x + 1j * d_y))
        d_lam, d_bar = self.derivatives(values)
        f0 = self.interpolate(values, lam) if f_at_lam is None else complex(f_at_lam)
        return f0, self.interpolate(d_lam, lam), self.interpolate(d_bar, lam)

    def integrate_cauchy(
        self,
        f: Integrand,
        lam: complex,
        f_at_lam: Optional[complex] = None,
        estimate_error: bool = False,
    ) -> QuadratureResult:
        """Integral of f(zeta) / (zeta - lam) dA with singularity subtraction.

        The Taylor polynomial f(lam) + f_lam (zeta - lam) + f_conj (conj(zeta) - conj(lam))
        times the cutoff around lam is taken out of f and its exact integral,
        CUTOFF_AREA delta^2 f_lam, is added back. Callables are
        differentiated by central differences, node values through ``derivatives``
        and bilinear interpolation. lam = 0 is summed without subtraction.

        Args:
            f: Callable or node values.
            lam: Target point.
            f_at_lam: f(lam) when known; evaluated or interpolated if omitted.
            estimate_error: Compare against the grid refined x2; needs a callable.
        """
        lam = complex(lam)
        values = self.sample(f)
        diff = self._nodes - lam
        coincident = diff == 0
        kernel = np.where(coincident, 0.0, self._weights / np.where(coincident, 1.0, diff))
        if lam == 0:
            value = compensated_sum(kernel * values)
        else:
            f0, d_lam, d_bar = self._taylor(f, values, lam, f_at_lam)
            delta = CUTOFF_CELLS * self.spacing * abs(lam)
            chi = smooth_cutoff(np.abs(diff) / delta)
            taylor = (f0 + d_lam * diff + d_bar * np.conj(diff)) * chi
            moment = CUTOFF_AREA * delta**2
            value = compensated_sum(kernel * (values - taylor)) + d_lam * moment
        if not estimate_error:
            return QuadratureResult(value=value)
        if not callable(f):
            raise ValueError("Error estimation needs the integrand as a callable")
        fine = self.refined().integrate_cauchy(f, lam, f_at_lam=f_at_lam).value
        return QuadratureResult(value=value, est_error=abs(fine - value))

    def interpolate(self, values: np.ndarray, lam: complex) -> complex:
        """Bilinear interpolation of node values in (s, theta), periodic in theta."""
        values = np.asarray(values, dtype=complex).reshape(self.shape)
        lam = complex(lam)
        if lam == 0:
            return complex(np.mean(values[0]))
        x = (math.log(abs(lam)) - self._s[0]) / self.ds
        x = min(max(x, 0.0), self.n_r - 1.0)
        j0 = min(int(math.floor(x)), self.n_r - 2)
        fx = x - j0
        y = (math.atan2(lam.imag, lam.real) % (2.0 * math.pi)) / self.dtheta
        k0 = int(math.floor(y)) % self.n_theta
        k1 = (k0 + 1) % self.n_theta
        fy = y - math.floor(y)
        return complex(
            (1 - fx) * (1 - fy) * values[j0, k0]
            + fx * (1 - fy) * values[j0 + 1, k0]
            + (1 - fx) * fy * values[j0, k1]
            + fx * fy * values[j0 + 1, k1]
        )

    def phase_resolution(
        self, t: float, z: complex, weight: Optional[np.ndarray] = None, floor: float = 1e-8
    ) -> float:
        """Largest per-cell increment of the phase S(lambda, z, t) over the nodes.

        Nodes where ``weight`` is below ``floor`` times its maximum are ignored.
        """
        lam = self._nodes
        log_derivative = lam * phase_raw_dzeta(complex(z), float(t), lam)
        radial = np.abs(2.0 * np.real(log_derivative)) * self.ds
        angular = np.abs(2.0 * np.imag(log_derivative)) * self.dtheta
        step = np.maximum(radial, angular)
        if weight is not None:
            magnitude = np.abs(np.asarray(weight)).reshape(self.shape)
            peak = magnitude.max(initial=0.0)
            if peak == 0.0:
                return 0.0
            step = np.where(magnitude >= floor * peak, step, 0.0)
        return float(step.max())


class CauchyKernel(BaseModel):
    """Singularity-subtracted Cauchy operator with every grid node as a target.

    The grid is invariant under rotation by dtheta, so for targets on ring j
    the node sum sum_k w_k g_k / (zeta_k - zeta_j) is a circular correlation in
    theta against kappa_jj'(theta) = 1 / (rho_j' e^{i theta} - rho_j). It is
    evaluated with FFTs over theta and one (n_r x n_r) product per angular mode.
    The Taylor subtraction of ``RadialGrid.integrate_cauchy`` enters through
    three ring sums per target ring.

    Grids with n_r^2 n_theta <= ``table_limit`` keep the transformed kernel in
    memory; larger ones rebuild it in blocks of target rings on every apply.
    """

    grid: RadialGrid
    table_limit: int = Field(default=2**23, gt=0)
    threads: int = Field(default=1, gt=0)

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    _table: Optional[np.ndarray] = PrivateAttr(default=None)
    _sums: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = PrivateAttr(default=None)
    _lock: threading.Lock = PrivateAttr(default_factory=threading.Lock)

    @property
    def table_entries(self) -> int:
        return self.grid.n_r**2 * self.grid.n_theta

    @property
    def is_cached(self) -> bool:
        return self.table_entries <= self.table_limit

    def _blocks(self) -> List[slice]:
        n_r = self.grid.n_r
        rows = max(1, BLOCK_ENTRIES // (n_r * self.grid.n_theta))
        return [slice(start, min(start + rows, n_r)) for start in range(0, n_r, rows)]

    def _offsets(self, rows: slice) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """zeta' - rho_j for target rings j in ``rows``, shape (rings, n_r, n_theta), with 1 / offset."""
        rho = self.grid.rho
        targets = rho[rows]
        offsets = rho[np.newaxis, :, np.newaxis] * np.exp(1j * self.grid.theta)[np.newaxis, np.newaxis, :]
        offsets = offsets - targets[:, np.newaxis, np.newaxis]
        coincident = np.zeros(offsets.shape, dtype=bool)
        coincident[np.arange(targets.size), np.arange(rows.start, rows.stop), 0] = True
        kappa = np.where(coincident, 0.0, 1.0 / np.where(coincident, 1.0, offsets))
        return offsets, coincident, kappa

    def _ring_table(self, rows: slice) -> np.ndarray:
        """Transformed kernel for target rings in ``rows``, shape (n_theta, rings, n_r)."""
        _, _, kappa = self._offsets(rows)
        ring_weights = self.grid.weights[:, 0]
        table = self.grid.n_theta * fft.ifft(ring_weights[np.newaxis, :, np.newaxis] * kappa, axis=2)
        return np.ascontiguousarray(np.moveaxis(table, 2, 0))

    def _ring_sums(self, rows: slice) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        offsets, coincident, kappa = self._offsets(rows)
        delta = CUTOFF_CELLS * self.grid.spacing * self.grid.rho[rows]
        chi = np.where(coincident, 0.0, smooth_cutoff(np.abs(offsets) / delta[:, np.newaxis, np.newaxis]))
        chi = chi * self.grid.weights[:, 0][np.newaxis, :, np.newaxis]
        return (
            np.sum(chi * kappa, axis=(1, 2)),
            np.sum(chi, axis=(1, 2)),
            np.sum(chi * np.conj(offsets) * kappa, axis=(1, 2)),
        )

    def _map(self, func: Callable[[slice], object], blocks: List[slice]) -> list:
        if self.threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(func, blocks))
        return [func(rows) for rows in blocks]

    def prepare(self) -> None:
        """Build the ring sums (and the cached table) now, before concurrent use."""
        if self._sums is not None:
            return
        with self._lock:
            if self._sums is not None:
                return
            blocks = self._blocks()
            if self.is_cached:
                logger.debug("Building the Cauchy table for a %dx%d grid", self.grid.n_r, self.grid.n_theta)
                table = np.empty((self.grid.n_theta, self.grid.n_r, self.grid.n_r), dtype=complex)
                for rows, part in zip(blocks, self._map(self._ring_table, blocks)):
                    table[:, rows, :] = part
                self._table = table
            parts = self._map(self._ring_sums, blocks)
            self._sums = tuple(np.concatenate([part[i] for part in parts]) for i in range(3))

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Cauchy integrals of the node field g at every node, returned in grid shape."""
        values = np.asarray(g, dtype=complex)
        if values.size != self.grid.size:
            raise ValueError(f"Expected a field with {self.grid.size} nodes, got {values.size}")
        values = values.reshape(self.grid.shape)
        _check_finite(values, "Cauchy density")
        self.prepare()
        assert self._sums is not None
        s0, s1, s2 = self._sums

        transform = np.ascontiguousarray(fft.fft(values, axis=1).T)
        if self._table is not None:
            folded = np.matmul(self._table, transform[:, :, np.newaxis])[:, :, 0]
        else:
            folded = np.empty((self.grid.n_theta, self.grid.n_r), dtype=complex)
            blocks = self._blocks()

            def run(rows: slice) -> np.ndarray:
                return np.matmul(self._ring_table(rows), transform[:, :, np.newaxis])[:, :, 0]

            for rows, part in zip(blocks, self._map(run, blocks)):
                folded[:, rows] = part
        correlation = fft.ifft(folded.T, axis=1)

        rotation = np.exp(-1j * self.grid.theta)[np.newaxis, :]
        delta = CUTOFF_CELLS * self.grid.spacing * self.grid.rho
        moment = CUTOFF_AREA * delta**2
        d_lam, d_bar = self.grid.derivatives(values)
        return (
            rotation * (correlation - values * s0[:, np.newaxis])
            - d_lam * (s1 - moment)[:, np.newaxis]
            - d_bar * rotation**2 * s2[:, np.newaxis]
        )
