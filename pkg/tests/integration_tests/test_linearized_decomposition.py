"""Test the stationary-phase decomposition, the decay of I and the spectral gap of the linearized field."""

import math

import numpy as np
import pytest
from scipy.stats import linregress

from nv_transparent.asymptotics_lab import fit_decay_exponent
from nv_transparent.cplane_quadrature import RadialGrid
from nv_transparent.errors import EpsilonTooSmall, WindowTooSmall
from nv_transparent.linearized_flow import Density, LinearizedFlow, LogGaussianDensity
from nv_transparent.phase_geometry import RegionKind, classify_region, stationary_points


class StationaryBump(Density):
    """Gaussian bump exp(-|zeta - center|^2 / sigma^2)."""

    center: complex
    sigma: float

    def __call__(self, zeta: np.ndarray) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=complex)
        return np.exp(-np.abs(zeta - self.center) ** 2 / self.sigma**2).astype(complex)


@pytest.fixture(scope="module")
def resolved_flow() -> LinearizedFlow:
    grid = RadialGrid.resolving(t=1.0, z_abs=30.0, s_max=1.4, s_phase=1.2, samples_per_radian=0.75)
    return LinearizedFlow(density=LogGaussianDensity(c=1.0, width=0.35), grid=grid)


@pytest.fixture(scope="module")
def spectral_flow() -> LinearizedFlow:
    return LinearizedFlow(
        density=LogGaussianDensity(c=1.0, width=0.5), grid=RadialGrid(s_max=1.75, n_r=64, n_theta=160)
    )


class TestDecomposition:
    """I = I_int + I_ext with I_ext integrated by parts."""

    def test_identity_for_exterior_velocity(self, resolved_flow: LinearizedFlow) -> None:
        split = resolved_flow.decompose_integral(t=1.0, u=30.0, eps=0.07)
        assert len(split.centers) == 6
        assert abs(split.I) > 1e-4
        assert split.identity_error < 1e-3

    def test_parts_are_consistent(self, resolved_flow: LinearizedFlow) -> None:
        split = resolved_flow.decompose_integral(t=1.0, u=30.0, eps=0.07)
        assert split.I_ext == pytest.approx(-(split.I1 - split.I2 - split.I3) / split.t, rel=1e-12)
        assert split.I == pytest.approx(resolved_flow.eval_I(1.0, u=30.0), rel=1e-12)

    def test_epsilon_below_grid_spacing(self, resolved_flow: LinearizedFlow) -> None:
        with pytest.raises(EpsilonTooSmall):
            resolved_flow.decompose_integral(t=1.0, u=30.0, eps=1e-4)

    def test_zero_time_rejected(self, resolved_flow: LinearizedFlow) -> None:
        with pytest.raises(ValueError):
            resolved_flow.decompose_integral(t=0.0, u=30.0, eps=0.07)

    def test_interior_velocity_with_shrinking_disks(self) -> None:
        # the default density vanishes on |zeta| = 1, where all stationary points of an interior u lie
        assert classify_region(0.0).kind == RegionKind.INTERIOR
        density = LogGaussianDensity(c=1.0, width=0.15)
        peak = math.exp(-2.0)
        times = [3.0, 6.0, 12.0]
        scaled_exterior = []
        for t in times:
            grid = RadialGrid.resolving(t=t, z_abs=0.0, s_max=0.6, s_phase=0.55, samples_per_radian=0.75)
            eps = 1.0 / t
            split = LinearizedFlow(density=density, grid=grid).decompose_integral(t=t, u=0.0, eps=eps)
            assert len(split.centers) == 6
            assert abs(split.I_int) <= 6.0 * math.pi * eps**2 * peak
            scaled_exterior.append(t * abs(split.I_ext))
        assert linregress(np.log(times), scaled_exterior).slope <= 1.5


class TestDecay:
    """|I(t, u t)| along rays."""

    def test_exterior_velocity_decays_like_one_over_t(self) -> None:
        u = -10.0
        assert classify_region(u).kind == RegionKind.EXTERIOR
        center = max((p.zeta for p in stationary_points(u)), key=abs)
        density = StationaryBump(center=center, sigma=0.3)
        times = [2.0, 4.0, 8.0]
        values = []
        for t in times:
            grid = RadialGrid.resolving(t=t, z_abs=abs(u) * t, s_max=0.95, samples_per_radian=0.5)
            values.append(abs(LinearizedFlow(density=density, grid=grid).eval_I(t, u=u)))
        assert all(b < a for a, b in zip(values, values[1:]))
        assert fit_decay_exponent(times, values) == pytest.approx(-1.0, abs=0.2)

    def test_uniform_scan_is_bounded(self) -> None:
        grid = RadialGrid.resolving(t=4.0, z_abs=40.0, s_max=0.6, s_phase=0.55, samples_per_radian=0.75)
        flow = LinearizedFlow(density=LogGaussianDensity(c=1.0, width=0.15), grid=grid)
        scan = flow.uniform_decay_scan([1.0, 2.0, 4.0], np.array([0.0, 3.0 + 3.0j, 5.0 - 4.0j, 8.0j, -10.0]))
        assert len(scan.maxima) == 3
        assert all(m > 0 for m in scan.maxima)
        assert scan.is_bounded()


class TestSpectralGap:
    """The Fourier transform in z of I(t, .) vanishes for |p| < 2."""

    def test_gap_is_empty(self, spectral_flow: LinearizedFlow) -> None:
        gap = spectral_flow.born_support_check(t=0.1, half_width=20.0, n_points=160, boundary_tol=0.1)
        assert gap < 5e-2

    def test_small_window_is_rejected(self, spectral_flow: LinearizedFlow) -> None:
        with pytest.raises(WindowTooSmall) as info:
            spectral_flow.born_support_check(t=0.1, half_width=1.5, n_points=16)
        assert info.value.boundary_ratio is not None and info.value.boundary_ratio > 1e-3


@pytest.mark.slow
def test_identity_at_later_time() -> None:
    grid = RadialGrid.resolving(t=2.0, z_abs=60.0, s_max=1.4, s_phase=1.2, samples_per_radian=0.75)
    flow = LinearizedFlow(density=LogGaussianDensity(c=1.0, width=0.35), grid=grid)
    split = flow.decompose_integral(t=2.0, u=30.0, eps=0.05)
    assert len(split.centers) == 6
    assert split.identity_error < 1e-3
