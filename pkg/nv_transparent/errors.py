"""Exceptions raised by the transparent-potential laboratory."""

from typing import Optional, Sequence


class NVLabError(Exception):
    """Base class of every error raised by this package."""


class InvalidSpectralPoint(NVLabError, ValueError):
    """A spectral parameter lies where the scattering data are undefined (lambda = 0)."""


class PoleAtOrigin(NVLabError, ValueError):
    """The phase or one of its derivatives was requested at zeta = 0."""


class NonFiniteSample(NVLabError, ValueError):
    """An integrand sampled on the grid produced NaN or infinity."""

    def __init__(self, message: str, count: int = 0):
        super().__init__(message)
        self.count = count


class AmbiguousClassification(NVLabError, RuntimeError):
    """Root moduli sit inside the tolerance band between two region classes."""

    def __init__(self, u: complex, moduli: Sequence[float]):
        formatted = ", ".join(f"{m:.17g}" for m in moduli)
        super().__init__(f"Cannot classify u={u!r}: root moduli ({formatted}) are inside the tolerance band")
        self.u = u
        self.moduli = tuple(moduli)


class NoConvergence(NVLabError, RuntimeError):
    """The Neumann iteration for mu failed its contraction gate or stalled."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class EpsilonTooSmall(NVLabError, ValueError):
    """The stationary-point disk radius does not cover two grid cells."""


class StationaryPointOnGridNode(NVLabError, ValueError):
    """A stationary point coincides with a quadrature node; perturb epsilon by half a cell."""


class WindowTooSmall(NVLabError, ValueError):
    """The sampling window does not contain the field (boundary values too large)."""

    def __init__(self, message: str, boundary_ratio: Optional[float] = None):
        super().__init__(message)
        self.boundary_ratio = boundary_ratio


class TooManyFailures(NVLabError, RuntimeError):
    """Too many lattice points of a sweep failed to converge."""

    def __init__(self, failed: int, total: int):
        super().__init__(f"{failed} of {total} lattice points failed to converge")
        self.failed = failed
        self.total = total


class InsufficientData(NVLabError, ValueError):
    """A fit was requested on too few samples."""


class UnderResolvedPhase(NVLabError, RuntimeError):
    """The grid cannot follow the oscillation of exp(i S) where the data live."""

    def __init__(self, message: str, step: float, required_nodes: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.required_nodes = required_nodes
