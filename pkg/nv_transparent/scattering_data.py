"""Admissible scattering data b, its time evolution and the d-bar coefficient r.

The built-in family is real and radial in the spectral parameter,

    b(lambda) = c * exp(-(s/w)^2 - (w/s)^2),   s = ln|lambda|,

so both symmetries b(1/conj(lambda)) = b(lambda) and
b(-1/conj(lambda)) = conj(b(lambda)) hold exactly, and b vanishes to all
orders on the unit circle, at the origin and at infinity.
"""

import logging
import math
from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from nv_transparent.config import ScatteringFamily, ScatteringSettings
from nv_transparent.errors import InvalidSpectralPoint
from nv_transparent.phase_geometry import phase_raw

logger = logging.getLogger(__name__)

ComplexLike = Union[complex, float, np.ndarray]

FLAT_BAND = 1e-8
"""Below this |ln|lambda|| the profile is defined to be exactly zero."""


def _as_complex(lam: ComplexLike) -> np.ndarray:
    return np.asarray(lam, dtype=complex)


def _unwrap(values: np.ndarray, like: ComplexLike) -> Union[complex, np.ndarray]:
    if np.ndim(like) == 0:
        return complex(values)
    return values


def _require_nonzero(lam: np.ndarray, what: str) -> None:
    if np.any(lam == 0):
        raise InvalidSpectralPoint(f"{what} is undefined at lambda = 0")


def log_gaussian_profile(s: np.ndarray, c: float, width: float = 1.0) -> np.ndarray:
    """c * exp(-(s/w)^2 - (w/s)^2) as a function of the log-radius, zero where |s| < FLAT_BAND."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape, dtype=float)
    mask = np.isfinite(s) & (np.abs(s) >= FLAT_BAND)
    scaled = s[mask] / width
    out[mask] = c * np.exp(-(scaled**2) - 1.0 / scaled**2)
    return out


def default_b(lam: ComplexLike, c: float, width: float = 1.0) -> Union[complex, np.ndarray]:
    """Evaluate the default admissible data at lambda.

    lambda = 0 returns the flat limit 0 instead of raising.

    Args:
        lam: Spectral parameter, scalar or array.
        c: Strength, c >= 0.
        width: Width of the profile in the log-radius.

    Returns:
        The (real-valued) data as complex numbers, same shape as ``lam``.
    """
    z = _as_complex(lam)
    rho = np.abs(z)
    with np.errstate(divide="ignore"):
        s = np.log(rho)
    values = log_gaussian_profile(s, c, width).astype(complex)
    return _unwrap(values, lam)


def evolve_phase(lam: ComplexLike, t: float) -> np.ndarray:
    """t * (lambda^3 + conj(lambda)^3 + lambda^-3 + conj(lambda)^-3), a real number."""
    z = _as_complex(lam)
    _require_nonzero(z, "The time evolution of b")
    return 2.0 * t * np.real(z**3 + z ** (-3))


def evolve_b(b0: ComplexLike, lam: ComplexLike, t: float) -> Union[complex, np.ndarray]:
    """b(lambda, t) = b0 * exp(i t (lambda^3 + conj(lambda)^3 + lambda^-3 + conj(lambda)^-3))."""
    values = _as_complex(b0) * np.exp(1j * evolve_phase(lam, t))
    if np.ndim(values) == 0:
        return complex(values)
    return values


def r_static(lam: ComplexLike, c: float, width: float = 1.0) -> Union[complex, np.ndarray]:
    """r(lambda) = pi * sgn(|lambda|^2 - 1) / conj(lambda) * b(lambda, 0), with sgn(0) = 0."""
    z = _as_complex(lam)
    _require_nonzero(z, "r")
    sign = np.sign(np.abs(z) ** 2 - 1.0)
    values = np.pi * sign / np.conj(z) * _as_complex(default_b(z, c, width))
    return _unwrap(values, lam)


class ScatteringData(BaseModel):
    """Scattering data of the built-in family together with the derived d-bar coefficient."""

    family: ScatteringFamily = ScatteringFamily.DEFAULT
    c: float = Field(default=0.05, ge=0.0)
    """Strength of the data."""
    width: float = Field(default=0.25, gt=0.0)
    """Width w of the log-Gaussian profile in the log-radius."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    @classmethod
    def from_settings(cls, settings: ScatteringSettings) -> "ScatteringData":
        return cls(family=settings.family, c=settings.c, width=settings.width)

    @property
    def is_free(self) -> bool:
        """True when b vanishes identically."""
        return self.c == 0.0

    def support(self, tol: float = 1e-10) -> Tuple[float, float]:
        """Log-radii (s_lo, s_hi) such that b / c >= tol exactly when s_lo <= |ln|lambda|| <= s_hi.

        The profile exp(-x - 1/x), x = (s/w)^2, peaks at e^-2; for tol >= e^-2 or free
        data the support is empty and (0, 0) is returned.
        """
        if not 0.0 < tol < 1.0:
            raise ValueError(f"Support tolerance must lie in (0, 1), got {tol}")
        level = math.log(1.0 / tol)
        if self.is_free or level <= 2.0:
            return 0.0, 0.0
        root = math.sqrt(level * level - 4.0)
        x_hi = 0.5 * (level + root)
        return self.width * math.sqrt(1.0 / x_hi), self.width * math.sqrt(x_hi)

    def amplitude(self, lam: ComplexLike) -> Union[complex, np.ndarray]:
        return default_b(lam, self.c, self.width)

    def evolve(self, lam: ComplexLike, t: float) -> Union[complex, np.ndarray]:
        return evolve_b(self.amplitude(lam), lam, t)

    def r_static(self, lam: ComplexLike) -> Union[complex, np.ndarray]:
        return r_static(lam, self.c, self.width)

    def r(self, lam: ComplexLike, z: complex, t: float) -> Union[complex, np.ndarray]:
        """Full coefficient r(lambda, z, t) = exp(i S(lambda, z, t)) r(lambda)."""
        values = np.exp(1j * np.asarray(phase_raw(z, t, lam))) * _as_complex(self.r_static(lam))
        return _unwrap(values, lam)

    def check_symmetries(self, lam: ComplexLike) -> float:
        """Worst violation of both reflection symmetries over the sample points.

        Args:
            lam: Nonzero sample points.

        Returns:
            max |b(1/conj(l)) - b(l)| and |b(-1/conj(l)) - conj(b(l))| over the samples.
        """
        z = _as_complex(lam)
        _require_nonzero(z, "The symmetry check")
        b = _as_complex(self.amplitude(z))
        mirrored = _as_complex(self.amplitude(1.0 / np.conj(z)))
        flipped = _as_complex(self.amplitude(-1.0 / np.conj(z)))
        worst = max(
            float(np.max(np.abs(mirrored - b), initial=0.0)),
            float(np.max(np.abs(flipped - np.conj(b)), initial=0.0)),
        )
        if worst > 1e-12:
            logger.warning("Scattering data violate the reflection symmetries by %.3e", worst)
        return worst
