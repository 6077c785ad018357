"""Test decay sweeps, ray scans and the constant fit."""

import math

import pytest
from pydantic import ValidationError

from nv_transparent.asymptotics_lab import (
    AsymptoticsLab,
    DecayCurve,
    DecayEntry,
    fit_constant,
    fit_decay_exponent,
    normalizer,
)
from nv_transparent.config import RunConfig, SweepSettings
from nv_transparent.cplane_quadrature import RadialGrid
from nv_transparent.dbar_solver import DBarSolver
from nv_transparent.errors import InsufficientData, TooManyFailures, WindowTooSmall
from nv_transparent.scattering_data import ScatteringData

# resolves the phase for |t| <= 0.5 and |z| <= 2 over the support of width 0.15 data
GRID = RadialGrid(s_max=0.75, n_r=56, n_theta=224)


def _lab(c: float, threads: int = 1) -> AsymptoticsLab:
    solver = DBarSolver(data=ScatteringData(c=c, width=0.15), grid=GRID)
    sweep = SweepSettings(t_list=[1.0, 2.0], z_half_width_factor=2.0, z_resolution=5)
    return AsymptoticsLab(solver=solver, sweep=sweep, threads=threads)


class TestConstantFit:
    """Fits on synthetic curves."""

    def test_normalizer(self) -> None:
        assert normalizer(5.0) == pytest.approx(math.log(8.0) / 6.0)
        assert normalizer(-5.0) == normalizer(5.0)
        assert normalizer(0.0) == pytest.approx(math.log(3.0))

    def test_exact_law(self) -> None:
        times = [5.0, 10.0, 20.0, 40.0]
        fit = fit_constant(DecayCurve.from_samples(times, [2.0 * normalizer(t) for t in times]))
        assert fit.c_hat == pytest.approx(2.0)
        assert fit.max_ratio == pytest.approx(1.0)
        assert fit.trend_ok

    def test_vanishing_curve(self) -> None:
        fit = fit_constant(DecayCurve.from_samples([5.0, 10.0, 20.0, 40.0], [0.0] * 4))
        assert fit.c_hat == 0.0
        assert fit.max_ratio == 0.0
        assert fit.trend_ok

    def test_growing_ratio_is_flagged(self) -> None:
        times = [5.0, 10.0, 20.0, 40.0]
        fit = fit_constant(DecayCurve.from_samples(times, [normalizer(t) * t for t in times]))
        assert fit.max_ratio == pytest.approx(8.0)
        assert not fit.trend_ok

    def test_one_over_t_constant(self) -> None:
        times = [5.0, 10.0, 20.0, 40.0]
        fit = fit_constant(DecayCurve.from_samples(times, [1.0 / (1.0 + t) for t in times]))
        assert fit.one_over_t_constant == pytest.approx(1.0)

    def test_too_few_entries(self) -> None:
        with pytest.raises(InsufficientData):
            fit_constant(DecayCurve.from_samples([5.0, 10.0, 20.0], [1.0, 0.5, 0.25]))

    def test_times_must_increase(self) -> None:
        entry = DecayEntry(t=5.0, sup_v=1.0, argmax_z=0j, normalizer=normalizer(5.0), ratio=1.0)
        with pytest.raises(ValidationError):
            DecayCurve(entries=[entry, entry])

    def test_decay_exponent(self) -> None:
        times = [1.0, 2.0, 4.0, 8.0]
        assert fit_decay_exponent(times, [3.0 / t for t in times]) == pytest.approx(-1.0)
        with pytest.raises(InsufficientData):
            fit_decay_exponent([1.0, 2.0], [1.0, 0.0])


class TestSweeps:
    """Sweeps driven by the d-bar solver."""

    def test_free_decay_sweep(self) -> None:
        curve = _lab(0.0).decay_sweep()
        assert [e.t for e in curve.entries] == [1.0, 2.0]
        assert all(e.sup_v == 0.0 for e in curve.entries)
        assert curve.failed_points == 0

    async def test_async_decay_sweep_matches(self) -> None:
        lab = _lab(0.0, threads=2)
        curve = await lab.adecay_sweep([2.0, 1.0])
        assert curve == lab.decay_sweep([1.0, 2.0])

    def test_lattice_grows_with_time(self) -> None:
        lab = _lab(0.0)
        assert abs(lab.z_lattice(3.0)[0, 0]) == pytest.approx(6.0 * math.sqrt(2.0))
        assert lab.z_lattice(0.5).shape == (5, 5)

    def test_default_lattice_contains_the_origin(self) -> None:
        lab = AsymptoticsLab(solver=DBarSolver(data=ScatteringData(c=0.0), grid=GRID), sweep=SweepSettings())
        lattice = lab.z_lattice(5.0)
        assert lattice.shape == (65, 65)
        assert lattice[32, 32] == 0.0

    def test_duplicate_times(self) -> None:
        with pytest.raises(ValueError):
            _lab(0.0).decay_sweep([1.0, 1.0])

    def test_failures_are_counted(self) -> None:
        with pytest.raises(TooManyFailures) as info:
            _lab(50.0).decay_sweep([1.0], resolution=3)
        assert info.value.failed == 9
        assert info.value.total == 9

    def test_ray_scan(self) -> None:
        scan = _lab(0.02).ray_scan(0.5, [0.5, 1.0])
        assert [s.t for s in scan.samples] == [0.5, 1.0]
        assert all(math.isfinite(s.abs_v) for s in scan.samples)

    async def test_async_ray_scan_matches(self) -> None:
        lab = _lab(0.02, threads=2)
        scan = await lab.aray_scan(0.5, [1.0, 0.5])
        expected = lab.ray_scan(0.5, [0.5, 1.0])
        assert [s.t for s in scan.samples] == [0.5, 1.0]
        for got, want in zip(scan.samples, expected.samples):
            assert got.abs_v == pytest.approx(want.abs_v, rel=1e-12, abs=1e-15)

    def test_free_time_reversal(self) -> None:
        assert _lab(0.0).time_reversal_gap(1.0) == (0.0, 0.0, 0.0)

    def test_from_config(self) -> None:
        config = RunConfig().with_overrides({"scattering.c": 0.0, "threads": 3})
        lab = AsymptoticsLab.from_config(config)
        assert lab.threads == 3
        assert lab.sweep.t_list == [5.0, 10.0, 20.0, 40.0]


class TestSmallData:
    """Sweeps on weak data, where the first-order field is a positive superposition of J0(|z| |p|)."""

    def test_decay_sweep_finds_the_peak(self) -> None:
        curve = _lab(0.02).decay_sweep([0.25, 0.0], half_width=6.0, resolution=7)
        assert [e.t for e in curve.entries] == [0.0, 0.25]
        first, later = curve.entries
        assert first.argmax_z == 0j
        for entry in curve.entries:
            assert entry.sup_v > 0.0
            assert entry.normalizer == pytest.approx(normalizer(entry.t))
            assert entry.ratio == pytest.approx(entry.sup_v / entry.normalizer)
            assert entry.failed_points == 0
        assert later.sup_v < first.sup_v

    def test_peak_on_the_window_boundary(self) -> None:
        with pytest.raises(WindowTooSmall):
            _lab(0.02).decay_sweep([0.0], half_width=6.0, resolution=2)

    def test_potential_decays_along_the_standing_ray(self) -> None:
        scan = _lab(0.02).ray_scan(0.0, [0.0, 1.0])
        assert scan.is_decaying()
        start, end = scan.samples
        assert start.abs_v > 0.0
        # |J0(x)| < 0.4 for x >= 4 caps the first-order field at t = 1
        assert end.abs_v <= 0.45 * start.abs_v

    def test_time_reversal(self) -> None:
        forward, backward, gap = _lab(0.02).time_reversal_gap(0.25, half_width=6.0, resolution=7)
        assert forward > 0.0
        assert backward == pytest.approx(forward, rel=1e-8)
        assert gap < 1e-8

    def test_small_window_has_no_spectral_gap_estimate(self) -> None:
        with pytest.raises(WindowTooSmall):
            _lab(0.005).transparency_gap(0.0, half_width=1.0, n_points=4)

    @pytest.mark.slow
    def test_transparency_gap(self) -> None:
        lab = _lab(0.005, threads=4)
        gap = lab.transparency_gap(0.0, half_width=6.0, n_points=16, gap_radius=0.3, boundary_tol=0.5)
        assert gap < 5e-2
