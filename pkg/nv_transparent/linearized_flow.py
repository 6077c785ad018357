"""Explicit solutions of the linearized Novikov-Veselov flow and their stationary-phase anatomy.

For a density f on the spectral plane,

    I(t, z) = Int f(zeta) exp(i S(zeta, z, t)) dA,
    J(t, z) = -3 Int (conj(zeta) / zeta) f(zeta) exp(i S(zeta, z, t)) dA,

solve dI/dt = 4 Re(4 d^3I/dz^3 - dJ/dz) together with d J/d conj(z) = -3 dI/dz.
With u = z / t the phase is t S(u, zeta), and the large-time behaviour of I is
governed by the stationary points of S(u, .).
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr
from scipy import fft
from scipy.signal import windows
from scipy.stats import linregress

from nv_transparent.cplane_quadrature import RadialGrid, compensated_sum
from nv_transparent.errors import (
    EpsilonTooSmall,
    InsufficientData,
    NonFiniteSample,
    StationaryPointOnGridNode,
    WindowTooSmall,
)
from nv_transparent.phase_geometry import phase_d2zeta, phase_dzeta, phase_raw, stationary_points
from nv_transparent.scattering_data import ScatteringData, log_gaussian_profile

logger = logging.getLogger(__name__)

BATCH_ELEMENTS = 4_000_000
"""Upper bound on (number of z) x (number of nodes) evaluated in one block."""


def _log_radius(zeta: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(zeta))


def _log_gaussian_slope(s: np.ndarray, c: float, width: float) -> np.ndarray:
    """d/ds of c exp(-(s/w)^2 - (w/s)^2)."""
    profile = log_gaussian_profile(s, c, width)
    out = np.zeros_like(profile)
    mask = profile != 0.0
    sm = s[mask]
    out[mask] = profile[mask] * (-2.0 * sm / width**2 + 2.0 * width**2 / sm**3)
    return out


class Density(BaseModel, ABC):
    """Spectral density f of a linearized solution."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    @abstractmethod
    def __call__(self, zeta: np.ndarray) -> np.ndarray:
        """Values f(zeta) as a complex array."""

    def dzeta(self, zeta: np.ndarray, h: float = 1e-6) -> np.ndarray:
        """Wirtinger derivative df/dzeta, by central differences unless overridden."""
        zeta = np.asarray(zeta, dtype=complex)
        d_x = (self(zeta + h) - self(zeta - h)) / (2.0 * h)
        d_y = (self(zeta + 1j * h) - self(zeta - 1j * h)) / (2.0 * h)
        return 0.5 * (d_x - 1j * d_y)

    def reality_violation(self, grid: RadialGrid) -> float:
        """max |conj f(zeta) - f(-zeta)| over the nodes; zero makes I real."""
        nodes = grid.nodes
        return float(np.max(np.abs(np.conj(self(nodes)) - self(-nodes))))

    def second_reality_violation(self, grid: RadialGrid) -> float:
        """max |conj f(zeta) + |zeta|^-4 f(-1/conj(zeta))| over the nodes (optional condition)."""
        nodes = grid.nodes
        mirrored = self(-1.0 / np.conj(nodes))
        return float(np.max(np.abs(np.conj(self(nodes)) + np.abs(nodes) ** -4 * mirrored)))

    def abs_mass(self, grid: RadialGrid) -> float:
        return compensated_sum(grid.weights * np.abs(self(grid.nodes))).real


class LogGaussianDensity(Density):
    """f(zeta) = c exp(-(s/w)^2 - (w/s)^2), s = ln|zeta|; the family of the default scattering data."""

    c: float = Field(default=1.0, ge=0.0)
    width: float = Field(default=1.0, gt=0.0)

    def __call__(self, zeta: np.ndarray) -> np.ndarray:
        return log_gaussian_profile(_log_radius(np.asarray(zeta, dtype=complex)), self.c, self.width).astype(complex)

    def dzeta(self, zeta: np.ndarray, h: float = 1e-6) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=complex)
        slope = _log_gaussian_slope(_log_radius(zeta), self.c, self.width)
        return np.where(slope != 0.0, slope / (2.0 * np.where(zeta == 0, 1.0, zeta)), 0.0)


class BornDensity(Density):
    """(1/pi) r(zeta) (conj(zeta) + 1/zeta) for the default scattering data.

    The linear field I of this density is the first-order term of the potential
    reconstructed by the d-bar solver from the same data.
    """

    c: float = Field(default=0.05, ge=0.0)
    width: float = Field(default=1.0, gt=0.0)

    @classmethod
    def from_data(cls, data: ScatteringData) -> "BornDensity":
        return cls(c=data.c, width=data.width)

    def _radial(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        profile = log_gaussian_profile(s, self.c, self.width)
        finite = np.isfinite(s)
        scale = np.where(finite, 1.0 + np.exp(-2.0 * np.where(finite, s, 0.0)), 0.0)
        sign = np.sign(np.where(finite, s, 0.0))
        value = sign * scale * profile
        slope = sign * (
            -2.0 * (scale - 1.0) * profile + scale * _log_gaussian_slope(np.where(finite, s, 0.0), self.c, self.width)
        )
        return value, slope

    def __call__(self, zeta: np.ndarray) -> np.ndarray:
        value, _ = self._radial(_log_radius(np.asarray(zeta, dtype=complex)))
        return value.astype(complex)

    def dzeta(self, zeta: np.ndarray, h: float = 1e-6) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=complex)
        _, slope = self._radial(_log_radius(zeta))
        return np.where(slope != 0.0, slope / (2.0 * np.where(zeta == 0, 1.0, zeta)), 0.0)


def born_density(data: ScatteringData) -> BornDensity:
    return BornDensity.from_data(data)


class LinearizedField(BaseModel):
    t: float
    z: complex
    u: Optional[complex] = None
    I: complex  # noqa: E741
    J: complex


class PDEResidual(BaseModel):
    """Finite-difference residuals at step h and h/2."""

    t: float
    z: complex
    residual: float = Field(ge=0.0)
    residual_refined: float = Field(ge=0.0)
    ratio: Optional[float] = None
    """residual / residual_refined, about 4 for second-order stencils; None when both vanish."""
    constraint: float = Field(ge=0.0)
    constraint_refined: float = Field(ge=0.0)
    constraint_ratio: Optional[float] = None


class Decomposition(BaseModel):
    """Split of I into the epsilon-disks around the stationary points and their exterior."""

    t: float
    u: complex
    eps: float
    I: complex  # noqa: E741
    """Direct quadrature of I."""
    I_int: complex
    I_ext: complex
    I1: complex
    """Half the boundary integral of f e^{itS} / S' d conj(zeta) over the disk circles."""
    I2: complex
    I3: complex
    centers: List[complex]
    identity_error: float = Field(ge=0.0)
    """|I - (I_int + I_ext)| / |I| (absolute when I = 0)."""


class SlopeFit(BaseModel):
    slope: float
    """Slope of log|I| against log t."""
    intercept: float
    normalized_slope: float
    """Slope of log(|I| (1 + t) / ln(3 + t)) against log t."""
    values: List[float]


class UniformDecayScan(BaseModel):
    t_list: List[float]
    maxima: List[float]
    """max over the u-lattice of |I(t, u)| (1 + t) / ln(3 + t), per t."""

    def is_bounded(self, factor: float = 3.0) -> bool:
        return max(self.maxima) <= factor * self.maxima[0]


def _smooth_step(y: np.ndarray) -> np.ndarray:
    """C-infinity step, 0 for y <= 0 and 1 for y >= 1."""
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(y > 0.0, np.exp(-1.0 / np.where(y > 0.0, y, 1.0)), 0.0)
        b = np.where(y < 1.0, np.exp(-1.0 / np.where(y < 1.0, 1.0 - y, 1.0)), 0.0)
    return a / (a + b)


def _bump(distance: np.ndarray, radius: float) -> np.ndarray:
    """1 within radius/2, 0 beyond radius."""
    return _smooth_step(2.0 * (1.0 - distance / radius))


def _dz(patch: np.ndarray, h: float, conjugate: bool = False) -> np.ndarray:
    """Central-difference d/dz (or d/d conj z) on a patch indexed [x1, x2]; shrinks by one on each side."""
    d_x1 = (patch[2:, 1:-1] - patch[:-2, 1:-1]) / (2.0 * h)
    d_x2 = (patch[1:-1, 2:] - patch[1:-1, :-2]) / (2.0 * h)
    if conjugate:
        return 0.5 * (d_x1 + 1j * d_x2)
    return 0.5 * (d_x1 - 1j * d_x2)


def periodic_lattice(half_width: float, n_points: int) -> np.ndarray:
    """n x n lattice -half_width <= Re z, Im z < half_width with uniform spacing, as used by ``spectral_gap``."""
    axis = np.linspace(-half_width, half_width, n_points, endpoint=False)
    return axis[:, np.newaxis] + 1j * axis[np.newaxis, :]


def spectral_gap(
    values: np.ndarray,
    spacing: float,
    gap_radius: float = 1.6,
    boundary_tol: float = 1e-3,
    what: str = "the field",
) -> float:
    """Largest spectral magnitude inside |p| < gap_radius relative to the spectral peak.

    The field is tapered by a Blackman window in both directions and transformed
    with a 2D FFT; p is the angular frequency dual to the lattice spacing.

    Args:
        values: Square array of samples on a uniform lattice.
        spacing: Lattice step.
        gap_radius: Radius of the disk in p-space that should carry no mass.
        boundary_tol: Largest admissible |value| on the lattice boundary relative to the maximum.
        what: Name of the field for error messages.

    Raises:
        WindowTooSmall: if the field is not small on the lattice boundary.
    """
    values = np.asarray(values, dtype=complex)
    n_points = values.shape[0]
    if values.ndim != 2 or values.shape[1] != n_points:
        raise ValueError(f"Expected a square lattice of samples, got shape {values.shape}")
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        return 0.0
    edge = np.concatenate([values[0], values[-1], values[:, 0], values[:, -1]])
    boundary_ratio = float(np.max(np.abs(edge))) / peak
    if boundary_ratio > boundary_tol:
        raise WindowTooSmall(
            f"|{what}| on the window boundary is {boundary_ratio:.2e} of its maximum (limit {boundary_tol:.0e})",
            boundary_ratio=boundary_ratio,
        )
    taper = windows.blackman(n_points, sym=False)
    spectrum = np.abs(fft.fftshift(fft.fft2(values * np.outer(taper, taper))))
    p = 2.0 * np.pi * fft.fftshift(fft.fftfreq(n_points, d=spacing))
    p_abs = np.hypot(p[:, np.newaxis], p[np.newaxis, :])
    gap = spectrum[p_abs < gap_radius]
    return float(gap.max(initial=0.0) / spectrum.max())


class LinearizedFlow(BaseModel):
    """Quadrature of I and J for a fixed density on a fixed grid."""

    density: Density
    grid: RadialGrid = Field(default_factory=RadialGrid)

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    _f: np.ndarray = PrivateAttr()
    _weighted: np.ndarray = PrivateAttr()
    _j_weighted: np.ndarray = PrivateAttr()
    _q: np.ndarray = PrivateAttr()
    _cubic: np.ndarray = PrivateAttr()

    def model_post_init(self, __context: object) -> None:
        nodes = self.grid.nodes.ravel()
        f = np.asarray(self.density(nodes), dtype=complex)
        if not np.all(np.isfinite(f)):
            raise NonFiniteSample("Density is not finite on the grid", count=int(np.count_nonzero(~np.isfinite(f))))
        self._f = f
        self._weighted = self.grid.weights.ravel() * f
        self._j_weighted = -3.0 * (np.conj(nodes) / nodes) * self._weighted
        # S(zeta, z, t) = -Re(z q) + t * cubic
        self._q = np.conj(nodes) + 1.0 / nodes
        self._cubic = 2.0 * np.real(nodes**3 + nodes ** (-3))

    @staticmethod
    def _resolve_z(t: float, u: Optional[complex], z: Optional[complex]) -> complex:
        if z is not None:
            return complex(z)
        if u is None:
            raise ValueError("Please provide either u or z")
        return complex(u) * t

    def _exponential(self, t: float, z: complex) -> np.ndarray:
        return np.exp(1j * (-np.real(z * self._q) + t * self._cubic))

    def eval_I(self, t: float, u: Optional[complex] = None, z: Optional[complex] = None) -> complex:
        """I at (t, z = u t), or at an explicit z (needed at t = 0)."""
        return compensated_sum(self._weighted * self._exponential(t, self._resolve_z(t, u, z)))

    def eval_J(self, t: float, u: Optional[complex] = None, z: Optional[complex] = None) -> complex:
        return compensated_sum(self._j_weighted * self._exponential(t, self._resolve_z(t, u, z)))

    def field(self, t: float, z: complex) -> LinearizedField:
        exponential = self._exponential(t, complex(z))
        return LinearizedField(
            t=t,
            z=z,
            u=complex(z) / t if t != 0 else None,
            I=compensated_sum(self._weighted * exponential),
            J=compensated_sum(self._j_weighted * exponential),
        )

    def evaluate_many(self, t: float, zs: np.ndarray, which: str = "I") -> np.ndarray:
        """I (or J) at many points z, same shape as ``zs``."""
        weighted = {"I": self._weighted, "J": self._j_weighted}[which]
        flat = np.asarray(zs, dtype=complex).ravel()
        out = np.empty(flat.shape, dtype=complex)
        time_part = t * self._cubic
        block = max(1, BATCH_ELEMENTS // max(1, self._q.size))
        for start in range(0, flat.size, block):
            chunk = flat[start : start + block]
            phases = -np.real(chunk[:, np.newaxis] * self._q[np.newaxis, :]) + time_part[np.newaxis, :]
            out[start : start + block] = np.exp(1j * phases) @ weighted
        return out.reshape(np.shape(zs))

    def imag_leak(self, t: float, u: Optional[complex] = None, z: Optional[complex] = None) -> float:
        return abs(self.eval_I(t, u, z).imag)

    def _residuals(self, t: float, z: complex, h_t: float, h_z: float) -> Tuple[float, float]:
        offsets = np.arange(-3, 4)
        patch = z + h_z * (offsets[:, np.newaxis] + 1j * offsets[np.newaxis, :])
        values_i = self.evaluate_many(t, patch, "I")
        inner = patch[2:-2, 2:-2]
        values_j = self.evaluate_many(t, inner, "J")
        d3_i = _dz(_dz(_dz(values_i, h_z), h_z), h_z)[0, 0]
        d_j = _dz(values_j, h_z)[0, 0]
        d_i = _dz(values_i[2:-2, 2:-2], h_z)[0, 0]
        dbar_j = _dz(values_j, h_z, conjugate=True)[0, 0]
        d_t = (self.eval_I(t + h_t, z=z) - self.eval_I(t - h_t, z=z)) / (2.0 * h_t)
        residual = abs(d_t - 4.0 * np.real(4.0 * d3_i - d_j))
        constraint = abs(dbar_j + 3.0 * d_i)
        return float(residual), float(constraint)

    def check_linearized_pde(self, t: float, z: complex, h_t: float = 1e-3, h_z: float = 1e-2) -> PDEResidual:
        """Residual of dI/dt = 4 Re(4 d^3I/dz^3 - dJ/dz) and of the constraint, at steps h and h/2.

        Args:
            t: Time.
            z: Spatial point.
            h_t: Time step of the central difference.
            h_z: Spatial step of the stencils (7x7 patch for the third derivative).
        """
        z = complex(z)
        residual, constraint = self._residuals(t, z, h_t, h_z)
        residual_fine, constraint_fine = self._residuals(t, z, h_t / 2.0, h_z / 2.0)
        result = PDEResidual(
            t=t,
            z=z,
            residual=residual,
            residual_refined=residual_fine,
            ratio=residual / residual_fine if residual_fine > 0.0 else None,
            constraint=constraint,
            constraint_refined=constraint_fine,
            constraint_ratio=constraint / constraint_fine if constraint_fine > 0.0 else None,
        )
        logger.debug("PDE residual at t=%s z=%s: %s", t, z, result)
        return result

    def born_support_check(
        self,
        t: float,
        half_width: float,
        n_points: int,
        gap_radius: float = 1.6,
        boundary_tol: float = 1e-3,
    ) -> float:
        """Largest relative spectral magnitude of z -> I(t, z) inside |p| < gap_radius.

        I is sampled on the square lattice |Re z|, |Im z| <= half_width, tapered by
        a Blackman window and transformed with a 2D FFT.

        Raises:
            WindowTooSmall: if |I| on the lattice boundary exceeds ``boundary_tol`` times its maximum.
        """
        lattice = periodic_lattice(half_width, n_points)
        values = self.evaluate_many(t, lattice, "I")
        return spectral_gap(values, 2.0 * half_width / n_points, gap_radius, boundary_tol, what="I")

    def decompose_integral(
        self,
        t: float,
        u: complex,
        eps: float,
        n_circle: int = 64,
        n_radial: int = 64,
        n_angular: int = 128,
    ) -> Decomposition:
        """Split I(t, u) at the epsilon-disks around the stationary points of S(u, .).

        Inside the disks I_int is integrated on local polar grids. Outside, I_ext
        is rewritten by parts as -(I1 - I2 - I3) / t with

            I1 = 1/2 Sum_circles f e^{itS} / S' d conj(zeta)   (counter-clockwise),
            I2 = i Int_ext df/dzeta e^{itS} / S' dA,
            I3 = -i Int_ext f e^{itS} S'' / S'^2 dA.

        The exterior integrals use a smooth partition of unity: the part away from
        the disks on the global grid, the part near each disk on a local annulus.

        Raises:
            EpsilonTooSmall: if eps does not span two grid cells at a stationary point.
            StationaryPointOnGridNode: if a stationary point is a grid node.
        """
        if t == 0:
            raise ValueError("The decomposition needs t != 0")
        u = complex(u)
        z = u * t
        centers: List[complex] = []
        for point in stationary_points(u):
            if all(abs(point.zeta - c) > 1e-9 for c in centers):
                centers.append(point.zeta)

        nodes = self.grid.nodes.ravel()
        for center in centers:
            local = 2.0 * abs(center) * self.grid.spacing
            if eps <= local:
                raise EpsilonTooSmall(f"eps={eps} must exceed two grid cells ({local:.3e}) at zeta={center}")
            if np.min(np.abs(nodes - center)) < 1e-12 * (1.0 + abs(center)):
                raise StationaryPointOnGridNode(
                    f"Stationary point {center} is a grid node; perturb eps by half a cell ({0.5 * local:.3e})"
                )

        gaps = [abs(a - b) for i, a in enumerate(centers) for b in centers[i + 1 :]]
        cutoff = max(2.0 * eps, min(3.0 * eps, 0.45 * min(gaps, default=np.inf)))
        centers_arr = np.asarray(centers, dtype=complex)

        def partition(zeta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            chi = _bump(np.abs(zeta[:, np.newaxis] - centers_arr[np.newaxis, :]), cutoff)
            return chi, np.prod(1.0 - chi, axis=1)

        def exterior_terms(zeta: np.ndarray, weight: np.ndarray) -> Tuple[complex, complex]:
            keep = (weight != 0.0) & (zeta != 0)
            zeta, weight = zeta[keep], weight[keep]
            if zeta.size == 0:
                return 0j, 0j
            e = np.exp(1j * np.asarray(phase_raw(z, t, zeta)))
            first = np.asarray(phase_dzeta(u, zeta))
            second = np.asarray(phase_d2zeta(u, zeta))
            f = self.density(zeta)
            df = self.density.dzeta(zeta)
            term2 = 1j * compensated_sum(weight * df * e / first)
            term3 = -1j * compensated_sum(weight * f * e * second / first**2)
            return term2, term3

        chi, outside = partition(nodes)
        i2, i3 = exterior_terms(nodes, self.grid.weights.ravel() * outside)

        r_nodes, r_weights = np.polynomial.legendre.leggauss(n_radial)
        angles = 2.0 * np.pi * np.arange(n_angular) / n_angular
        d_angle = 2.0 * np.pi / n_angular
        i_int = 0j
        i1 = 0j
        for index, center in enumerate(centers):
            # disk interior, overlaps shared by multiplicity
            radii = 0.5 * eps * (r_nodes + 1.0)
            zeta = (center + radii[:, np.newaxis] * np.exp(1j * angles)[np.newaxis, :]).ravel()
            weight = np.repeat(0.5 * eps * r_weights * radii * d_angle, n_angular)
            covering = np.sum(np.abs(zeta[:, np.newaxis] - centers_arr[np.newaxis, :]) < eps, axis=1)
            keep = zeta != 0
            e = np.exp(1j * np.asarray(phase_raw(z, t, zeta[keep])))
            i_int += compensated_sum(weight[keep] * self.density(zeta[keep]) * e / np.maximum(covering[keep], 1))

            # annulus eps <= r <= cutoff, outside every disk, weighted by this disk's share of the partition
            radii = eps + 0.5 * (cutoff - eps) * (r_nodes + 1.0)
            zeta = (center + radii[:, np.newaxis] * np.exp(1j * angles)[np.newaxis, :]).ravel()
            weight = np.repeat(0.5 * (cutoff - eps) * r_weights * radii * d_angle, n_angular)
            chi_local, outside_local = partition(zeta)
            total = chi_local.sum(axis=1)
            share = np.where(total > 0.0, chi_local[:, index] / np.where(total > 0.0, total, 1.0), 0.0)
            in_disk = np.any(np.abs(zeta[:, np.newaxis] - centers_arr[np.newaxis, :]) < eps, axis=1)
            weight = np.where(in_disk, 0.0, weight * share * (1.0 - outside_local))
            a2, a3 = exterior_terms(zeta, weight)
            i2 += a2
            i3 += a3

            # boundary circle, arcs inside other disks removed
            circle_angles = 2.0 * np.pi * np.arange(n_circle) / n_circle
            zeta = center + eps * np.exp(1j * circle_angles)
            others = np.delete(centers_arr, index)
            visible = np.all(np.abs(zeta[:, np.newaxis] - others[np.newaxis, :]) >= eps, axis=1)
            zeta = zeta[visible]
            if zeta.size:
                d_conj = -1j * eps * np.exp(-1j * circle_angles[visible]) * (2.0 * np.pi / n_circle)
                e = np.exp(1j * np.asarray(phase_raw(z, t, zeta)))
                i1 += 0.5 * compensated_sum(self.density(zeta) * e / np.asarray(phase_dzeta(u, zeta)) * d_conj)

        i_ext = -(i1 - i2 - i3) / t
        direct = self.eval_I(t, u)
        mismatch = abs(direct - (i_int + i_ext))
        identity_error = mismatch / abs(direct) if direct != 0 else mismatch
        logger.debug("Decomposition t=%s u=%s eps=%s: identity error %.3e", t, u, eps, identity_error)
        return Decomposition(
            t=t,
            u=u,
            eps=eps,
            I=direct,
            I_int=i_int,
            I_ext=i_ext,
            I1=i1,
            I2=i2,
            I3=i3,
            centers=centers,
            identity_error=identity_error,
        )

    def decay_slope(self, t_list: Sequence[float], u: complex) -> SlopeFit:
        """Log-log fits of |I(t, u)| against t, raw and normalized by ln(3 + t) / (1 + t)."""
        ts = np.asarray(t_list, dtype=float)
        if ts.size < 2:
            raise InsufficientData(f"A slope needs at least 2 times, got {ts.size}")
        values = np.asarray([abs(self.eval_I(float(t), u)) for t in ts])
        if np.any(values <= 0.0):
            raise InsufficientData("|I| vanishes at some times, the log-log fit is undefined")
        raw = linregress(np.log(ts), np.log(values))
        normalized = linregress(np.log(ts), np.log(values * (1.0 + ts) / np.log(3.0 + ts)))
        return SlopeFit(
            slope=float(raw.slope),
            intercept=float(raw.intercept),
            normalized_slope=float(normalized.slope),
            values=values.tolist(),
        )

    def uniform_decay_scan(
        self, t_list: Sequence[float], u_values: Union[Sequence[complex], np.ndarray]
    ) -> UniformDecayScan:
        """Per t, the maximum of |I(t, u)| (1 + t) / ln(3 + t) over a set of velocities."""
        us = np.asarray(u_values, dtype=complex).ravel()
        maxima = []
        for t in t_list:
            values = np.abs(self.evaluate_many(float(t), us * t, "I"))
            maxima.append(float(values.max()) * (1.0 + abs(t)) / math.log(3.0 + abs(t)))
            logger.info("Uniform decay scan t=%s: max normalized |I| = %.4e", t, maxima[-1])
        return UniformDecayScan(t_list=[float(t) for t in t_list], maxima=maxima)
