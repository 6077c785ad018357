"""Phase S(u, zeta), its cubic of stationary points and the region geometry around the deltoid.

The phase of the linearized and nonlinear problems is

    S(u, zeta) = -Re(zeta * conj(u)) - Re(u / zeta) + 2 Re(zeta^3 + zeta^-3),

and S'_zeta = (3 / zeta^4) P(zeta^2) with P(xi) = xi^3 - (conj(u)/6) xi^2 + (u/6) xi - 1.
Stationary points are the six square roots of the roots of P. The curve
u = 6(2 e^{-i phi} + e^{2 i phi}) carries the degenerate stationary points and
bounds the region where all three roots lie on the unit circle.
"""

import logging
import math
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq

from nv_transparent.errors import AmbiguousClassification, PoleAtOrigin

logger = logging.getLogger(__name__)

ComplexLike = Union[complex, float, np.ndarray]

TOL_CIRCLE = 1e-7
"""A root is on the unit circle when ||xi| - 1| is below this value."""
TOL_BAND = 1e-6
"""A root is off the circle when ||xi| - 1| exceeds this value; in between is ambiguous."""
TOL_ROOT = 1e-6
"""Roots closer than this are treated as one multiple root."""
TOL_PAIRING = 1e-9
TOL_CUSP = 1e-7
CUSPS = tuple(18.0 * np.exp(2j * np.pi * k / 3) for k in range(3))

_OMEGA = np.exp(2j * np.pi / 3)


def _nonzero(zeta: ComplexLike) -> np.ndarray:
    z = np.asarray(zeta, dtype=complex)
    if np.any(z == 0):
        raise PoleAtOrigin("The phase has a pole at zeta = 0")
    return z


def _real_out(values: np.ndarray) -> Union[float, np.ndarray]:
    if np.ndim(values) == 0:
        return float(values)
    return values


def _complex_out(values: np.ndarray) -> Union[complex, np.ndarray]:
    if np.ndim(values) == 0:
        return complex(values)
    return values


def phase(u: complex, zeta: ComplexLike) -> Union[float, np.ndarray]:
    """S(u, zeta), real valued.

    Args:
        u: Velocity parameter z / t.
        zeta: Nonzero spectral point(s).

    Raises:
        PoleAtOrigin: if any zeta is zero.
    """
    z = _nonzero(zeta)
    values = -np.real(z * np.conj(u)) - np.real(u / z) + 2.0 * np.real(z**3 + z ** (-3))
    return _real_out(values)


def phase_raw(z: complex, t: float, lam: ComplexLike) -> Union[float, np.ndarray]:
    """S(lambda, z, t) = -Re(lambda conj(z)) - Re(z / lambda) + 2 t Re(lambda^3 + lambda^-3).

    Equals t * phase(z / t, lambda) for t != 0 and stays defined at t = 0.
    """
    lam_c = _nonzero(lam)
    values = -np.real(lam_c * np.conj(z)) - np.real(z / lam_c) + 2.0 * t * np.real(lam_c**3 + lam_c ** (-3))
    return _real_out(values)


def phase_dzeta(u: complex, zeta: ComplexLike) -> Union[complex, np.ndarray]:
    """S'_zeta = -conj(u)/2 + u/(2 zeta^2) + 3 zeta^2 - 3/zeta^4."""
    z = _nonzero(zeta)
    return _complex_out(-np.conj(u) / 2.0 + u / (2.0 * z**2) + 3.0 * z**2 - 3.0 / z**4)


def phase_d2zeta(u: complex, zeta: ComplexLike) -> Union[complex, np.ndarray]:
    """S''_zeta zeta = -u/zeta^3 + 6 zeta + 12/zeta^5."""
    z = _nonzero(zeta)
    return _complex_out(-u / z**3 + 6.0 * z + 12.0 / z**5)


def phase_raw_dzeta(z: complex, t: float, lam: ComplexLike) -> Union[complex, np.ndarray]:
    """d/dlambda of S(lambda, z, t): -conj(z)/2 + z/(2 lambda^2) + 3 t (lambda^2 - lambda^-4)."""
    lam_c = _nonzero(lam)
    return _complex_out(-np.conj(z) / 2.0 + z / (2.0 * lam_c**2) + 3.0 * t * (lam_c**2 - lam_c ** (-4)))


def phase_raw_d2zeta(z: complex, t: float, lam: ComplexLike) -> Union[complex, np.ndarray]:
    lam_c = _nonzero(lam)
    return _complex_out(-z / lam_c**3 + 6.0 * t * lam_c + 12.0 * t / lam_c**5)


def cubic_value(u: complex, xi: ComplexLike) -> Union[complex, np.ndarray]:
    """P(xi) = xi^3 - (conj(u)/6) xi^2 + (u/6) xi - 1."""
    x = np.asarray(xi, dtype=complex)
    return _complex_out(((x - np.conj(u) / 6.0) * x + u / 6.0) * x - 1.0)


def _cubic_derivative(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (3.0 * x - np.conj(u) / 3.0) * x + u / 6.0


def cubic_roots_array(u: ComplexLike) -> np.ndarray:
    """Roots of P for every u of an array, by Cardano's formula and two Newton steps.

    Returns:
        Array of shape ``u.shape + (3,)``, roots in no particular order.
    """
    uu = np.asarray(u, dtype=complex)[..., np.newaxis]
    a = -np.conj(uu) / 6.0
    b = uu / 6.0
    c = -1.0
    # depressed cubic y^3 + p y + q with xi = y - a/3
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    sqrt_disc = np.sqrt((q / 2.0) ** 2 + (p / 3.0) ** 3)
    w_plus = -q / 2.0 + sqrt_disc
    w_minus = -q / 2.0 - sqrt_disc
    w = np.where(np.abs(w_plus) >= np.abs(w_minus), w_plus, w_minus)
    big_c = np.power(w, 1.0 / 3.0)
    rotations = big_c * _OMEGA ** np.arange(3)
    degenerate = np.abs(big_c) == 0.0
    safe = np.where(degenerate, 1.0, rotations)
    y = np.where(degenerate, 0.0, rotations - p / (3.0 * safe))
    roots = y - a / 3.0

    for _ in range(2):
        value = ((roots + a) * roots + b) * roots + c
        slope = _cubic_derivative(uu, roots)
        usable = np.abs(slope) > 1e-300
        step = np.where(usable, value / np.where(usable, slope, 1.0), 0.0)
        candidate = roots - step
        better = np.abs(((candidate + a) * candidate + b) * candidate + c) <= np.abs(value)
        roots = np.where(better, candidate, roots)
    return roots


class CubicRoots(BaseModel):
    """Roots of P ordered with any off-circle root first and its reciprocal partner last."""

    u: complex
    xi: Tuple[complex, complex, complex]
    multiplicities: Tuple[int, int, int]
    """Number of roots (including itself) within TOL_ROOT of each root."""

    model_config = ConfigDict(frozen=True)

    @property
    def product(self) -> complex:
        return self.xi[0] * self.xi[1] * self.xi[2]

    @property
    def moduli(self) -> Tuple[float, float, float]:
        return (abs(self.xi[0]), abs(self.xi[1]), abs(self.xi[2]))

    def residuals(self) -> List[float]:
        return [abs(complex(cubic_value(self.u, x))) for x in self.xi]


def _order_roots(roots: np.ndarray) -> List[complex]:
    values = [complex(x) for x in roots]
    deviations = [abs(abs(x) - 1.0) for x in values]
    if max(deviations) > TOL_CIRCLE:
        by_modulus = sorted(values, key=abs)
        return [by_modulus[2], by_modulus[1], by_modulus[0]]
    pairs = [(abs(values[i] - values[j]), i, j) for i in range(3) for j in range(i + 1, 3)]
    gap, i, j = min(pairs)
    if gap < TOL_ROOT:
        other = 3 - i - j
        return [values[i], values[j], values[other]]
    return sorted(values, key=lambda x: math.atan2(x.imag, x.real) % (2.0 * math.pi))


def solve_cubic(u: complex) -> CubicRoots:
    """Solve P(xi) = 0 for one u.

    Off-circle roots are ordered by decreasing modulus, so xi0 is the largest and
    xi2 = 1/conj(xi0). Repeated unit-modulus roots come first, otherwise the
    roots are sorted by argument in [0, 2 pi).
    """
    u = complex(u)
    ordered = _order_roots(cubic_roots_array(u))
    multiplicities = tuple(sum(1 for y in ordered if abs(x - y) < TOL_ROOT) for x in ordered)
    return CubicRoots(u=u, xi=tuple(ordered), multiplicities=multiplicities)  # type: ignore[arg-type]


class StationaryPoint(BaseModel):
    zeta: complex
    xi_index: int
    """Index of the root xi = zeta^2 in the ordered cubic roots."""
    multiplicity: int
    degenerate: bool
    """True when S''_zeta zeta vanishes at the point."""

    model_config = ConfigDict(frozen=True)


def stationary_points(u: complex, tol_degenerate: float = 1e-5) -> List[StationaryPoint]:
    """The six stationary points +-sqrt(xi_i) of S(u, .).

    Args:
        u: Velocity parameter.
        tol_degenerate: |S''| below ``tol_degenerate * (1 + |u|)`` flags a degenerate point.
    """
    roots = solve_cubic(u)
    points = []
    for index, (xi, mult) in enumerate(zip(roots.xi, roots.multiplicities)):
        root = complex(np.sqrt(xi))
        for zeta in (root, -root):
            second = abs(complex(phase_d2zeta(u, zeta)))
            points.append(
                StationaryPoint(
                    zeta=zeta,
                    xi_index=index,
                    multiplicity=mult,
                    degenerate=second < tol_degenerate * (1.0 + abs(u)),
                )
            )
    return points


def curve_point(phi: ComplexLike) -> Union[complex, np.ndarray]:
    """Point 6(2 e^{-i phi} + e^{2 i phi}) of the deltoid carrying degenerate stationary points."""
    phi = np.asarray(phi, dtype=float)
    return _complex_out(6.0 * (2.0 * np.exp(-1j * phi) + np.exp(2j * phi)))


def tangent_line(phi: ComplexLike, s: ComplexLike) -> Union[complex, np.ndarray]:
    """Point at signed distance s along the tangent line of the deltoid at parameter phi."""
    phi = np.asarray(phi, dtype=float)
    return _complex_out(np.asarray(curve_point(phi)) + np.asarray(s, dtype=float) * np.exp(0.5j * phi))


class RegionKind(str, Enum):
    INTERIOR = "Interior"
    BOUNDARY_REGULAR = "BoundaryRegular"
    BOUNDARY_CUSP = "BoundaryCusp"
    EXTERIOR = "Exterior"


class RegionClass(BaseModel):
    """Position of u relative to the deltoid, with the witness data of the class."""

    kind: RegionKind
    roots: CubicRoots
    phi: Optional[float] = None
    """Curve parameter of the degenerate root (boundary) or argument of xi0 (exterior)."""
    omega: Optional[float] = Field(default=None, ge=0.0)
    """Exterior only: zeta0 = (1 + omega) e^{i phi / 2}."""
    tau: Optional[float] = Field(default=None, ge=0.0)
    """Exterior only: |xi0| = 1 + tau."""

    model_config = ConfigDict(frozen=True)


def _angle(x: complex) -> float:
    return math.atan2(x.imag, x.real) % (2.0 * math.pi)


def classify_region(u: complex) -> RegionClass:
    """Classify u by the moduli and multiplicities of the cubic roots.

    Raises:
        AmbiguousClassification: a root modulus sits between the on-circle and
            off-circle tolerances, or the root pattern fits no class.
    """
    u = complex(u)
    roots = solve_cubic(u)
    # a triple root splits by about eps^(1/3) in floating point
    if min(abs(u - cusp) for cusp in CUSPS) < TOL_CUSP:
        return RegionClass(kind=RegionKind.BOUNDARY_CUSP, roots=roots, phi=_angle(sum(roots.xi) / 3.0))

    moduli = roots.moduli
    deviations = [abs(m - 1.0) for m in moduli]
    if any(TOL_CIRCLE <= d <= TOL_BAND for d in deviations):
        raise AmbiguousClassification(u, moduli)

    on_circle = sum(d < TOL_CIRCLE for d in deviations)
    if on_circle == 3:
        if max(roots.multiplicities) == 3:
            return RegionClass(kind=RegionKind.BOUNDARY_CUSP, roots=roots, phi=_angle(roots.xi[0]))
        if max(roots.multiplicities) == 2:
            double = 0.5 * (roots.xi[0] + roots.xi[1])
            return RegionClass(kind=RegionKind.BOUNDARY_REGULAR, roots=roots, phi=_angle(double))
        return RegionClass(kind=RegionKind.INTERIOR, roots=roots)

    if on_circle == 1 and deviations[1] < TOL_CIRCLE:
        xi0, xi2 = roots.xi[0], roots.xi[2]
        if abs(xi0 * xi2.conjugate() - 1.0) >= TOL_PAIRING:
            raise AmbiguousClassification(u, moduli)
        tau = moduli[0] - 1.0
        return RegionClass(
            kind=RegionKind.EXTERIOR,
            roots=roots,
            phi=_angle(xi0),
            omega=math.sqrt(moduli[0]) - 1.0,
            tau=tau,
        )
    raise AmbiguousClassification(u, moduli)


def degenerate_system_residual(u: complex, xi: complex) -> complex:
    """xi^3 - (u/6) xi + 2, the second equation satisfied together with P at a double root."""
    return xi**3 - (u / 6.0) * xi + 2.0


def key_equation_residual(r: ComplexLike, phi: ComplexLike) -> Union[complex, np.ndarray]:
    """(r^2 - r^-2) e^{2 i phi} - (r - 1/r) e^{-i phi}; zero at r = 1 for every phi."""
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return _complex_out((r**2 - r ** (-2)) * np.exp(2j * phi) - (r - 1.0 / r) * np.exp(-1j * phi))


def _tangent_offset(phi: float, u: complex) -> float:
    return float(np.imag((u - complex(curve_point(phi))) * np.exp(-0.5j * phi)))


def tangent_cover_count(u: complex, n_scan: int = 4096) -> int:
    """Number of distinct phi in [0, 2 pi) whose tangent line passes through u.

    A unit root e^{i phi} of P exists exactly when u lies on the tangent line of
    parameter phi, so the count is 3 inside the deltoid and 1 outside.
    """
    u = complex(u)
    grid = np.linspace(0.0, 2.0 * np.pi, n_scan + 1)
    values = np.imag((u - np.asarray(curve_point(grid))) * np.exp(-0.5j * grid))
    zeros: List[float] = []
    for k in range(n_scan):
        left, right = values[k], values[k + 1]
        if left == 0.0:
            zeros.append(float(grid[k]))
        elif left * right < 0.0:
            zeros.append(brentq(_tangent_offset, grid[k], grid[k + 1], args=(u,), xtol=1e-14))
    distinct: List[float] = []
    for phi in sorted(zeros):
        if not distinct or phi - distinct[-1] > 1e-9:
            distinct.append(phi)
    if len(distinct) > 1 and distinct[0] + 2.0 * np.pi - distinct[-1] < 1e-9:
        distinct.pop()
    return len(distinct)


def sector_index(u: complex) -> int:
    """Sector containing u: 0 for arg u in [-pi/3, pi/3], 1 for (pi/3, pi], 2 otherwise."""
    angle = math.atan2(complex(u).imag, complex(u).real)
    if -math.pi / 3 <= angle <= math.pi / 3:
        return 0
    if math.pi / 3 < angle <= math.pi:
        return 1
    return 2


class PhaseContext(BaseModel):
    """The velocity u, optionally remembered together with the (z, t) it came from.

    Built with ``from_zt`` the context keeps z and t exactly and u = z / t is
    derived from them, so u * t may differ from z by rounding. The phase and its
    derivatives are then those of the raw phase S(lambda, z, t) = t S(u, lambda),
    all scaled by t. Built from u alone they are S(u, .) and its derivatives.
    """

    u: complex
    z: Optional[complex] = None
    t: Optional[float] = None

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_zt(cls, z: complex, t: float) -> "PhaseContext":
        if t == 0:
            raise ValueError("u = z / t is undefined at t = 0, use phase_raw for the raw phase")
        return cls(u=complex(z) / t, z=complex(z), t=float(t))

    @property
    def is_raw(self) -> bool:
        return self.z is not None and self.t is not None

    @property
    def scale(self) -> float:
        """Factor between the phase returned here and S(u, .): t for a raw context, 1 otherwise."""
        return self.t if self.t is not None and self.z is not None else 1.0

    def phase(self, zeta: ComplexLike) -> Union[float, np.ndarray]:
        if self.z is not None and self.t is not None:
            return phase_raw(self.z, self.t, zeta)
        return phase(self.u, zeta)

    def phase_dzeta(self, zeta: ComplexLike) -> Union[complex, np.ndarray]:
        if self.z is not None and self.t is not None:
            return phase_raw_dzeta(self.z, self.t, zeta)
        return phase_dzeta(self.u, zeta)

    def phase_d2zeta(self, zeta: ComplexLike) -> Union[complex, np.ndarray]:
        if self.z is not None and self.t is not None:
            return phase_raw_d2zeta(self.z, self.t, zeta)
        return phase_d2zeta(self.u, zeta)

    def roots(self) -> CubicRoots:
        return solve_cubic(self.u)

    def stationary_points(self) -> List[StationaryPoint]:
        return stationary_points(self.u)

    def region(self) -> RegionClass:
        return classify_region(self.u)
