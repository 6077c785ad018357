"""Test the d-bar solver and the reconstruction of v on small grids."""

import math

import numpy as np
import pytest
from scipy import integrate, special

from nv_transparent.config import QuadratureSettings, RunConfig, SolverSettings
from nv_transparent.cplane_quadrature import MAX_PHASE_STEP, RadialGrid
from nv_transparent.dbar_solver import DBarSolver
from nv_transparent.errors import NoConvergence, UnderResolvedPhase
from nv_transparent.linearized_flow import BornDensity, LinearizedFlow
from nv_transparent.scattering_data import ScatteringData, log_gaussian_profile

WIDTH = 0.15


@pytest.fixture(scope="module")
def small_grid() -> RadialGrid:
    # resolves the phase for |t| <= 0.5 and |z| <= 2 over the support of WIDTH data
    return RadialGrid(s_max=0.75, n_r=56, n_theta=224)


@pytest.fixture(scope="module")
def solver(small_grid: RadialGrid) -> DBarSolver:
    return DBarSolver(data=ScatteringData(c=0.05, width=WIDTH), grid=small_grid)


def born_potential_at_origin(data: ScatteringData, t: float) -> float:
    """First-order v(0, t) = 4 pi Int_0^inf b(s) sinh(2s) J0(4 t cosh(3s)) ds."""

    def radial(s: float) -> float:
        profile = float(log_gaussian_profile(s, data.c, data.width))
        return 2.0 * math.sinh(2.0 * s) * profile * special.j0(4.0 * t * math.cosh(3.0 * s))

    value, _ = integrate.quad(radial, 0.0, 1.5, epsabs=0, epsrel=1e-11, limit=400)
    return 2.0 * math.pi * value


def first_order_potential(solver: DBarSolver, t: float, h: float = 1e-3) -> complex:
    """(2i/pi) d/dz B(1) at z = 0 by central differences."""
    local = solver.resolved(t, h)
    b = [local.apply_B(point, t, 1.0) for point in (h, -h, 1j * h, -1j * h)]
    dz = 0.5 * ((b[0] - b[1]) / (2.0 * h) - 1j * (b[2] - b[3]) / (2.0 * h))
    return 2j / math.pi * dz


class TestFreeData:
    """c = 0 gives mu = 1 and v = 0 exactly."""

    def test_free_solution(self, small_grid: RadialGrid) -> None:
        free = DBarSolver(data=ScatteringData(c=0.0), grid=small_grid)
        solution = free.solve_mu(0.3 + 0.2j, 1.0)
        assert np.all(solution.mu == 1.0)
        assert solution.mu_minus1 == 0
        assert free.reconstruct_v(0.3 + 0.2j, 1.0).v == 0
        assert np.all(free.apply_A(0.0, 0.0, 1.0) == 0)
        assert free.apply_B(0.0, 0.0, 1.0) == 0

    def test_free_ring_checks(self, small_grid: RadialGrid) -> None:
        solution = DBarSolver(data=ScatteringData(c=0.0), grid=small_grid).solve_mu(0.0, 0.0)
        assert solution.ring_jump_ratio() == 0.0
        assert solution.outer_ring_check(small_grid) == (0.0, 0.0)

    def test_free_data_is_never_refined(self, small_grid: RadialGrid) -> None:
        free = DBarSolver(data=ScatteringData(c=0.0), grid=small_grid)
        assert free.resolved(40.0, 100.0) is free

    def test_zero_field(self, solver: DBarSolver) -> None:
        assert np.all(solver.apply_A(0.4, 0.5, 0.0) == 0)
        assert solver.apply_B(0.4, 0.5, 0.0) == 0


class TestOperators:
    """A and B against independent quadratures."""

    def test_b_matches_bessel_integral(self) -> None:
        width = 0.5
        grid = RadialGrid(s_max=2.0, n_r=128, n_theta=64)
        data = ScatteringData(c=1.0, width=width)
        x = 0.5
        value = DBarSolver(data=data, grid=grid).apply_B(x, 0.0, 1.0)

        def radial(s: float) -> float:
            rho = math.exp(s)
            return math.copysign(1.0, s) * rho * float(log_gaussian_profile(s, 1.0, width)) * special.j1(
                x * (rho + 1.0 / rho)
            )

        inner, _ = integrate.quad(radial, -2.0, 0.0, epsabs=0, epsrel=1e-12, limit=200)
        outer, _ = integrate.quad(radial, 0.0, 2.0, epsabs=0, epsrel=1e-12, limit=200)
        expected = -2j * math.pi**2 * (inner + outer)
        assert abs(value - expected) < 1e-5 * abs(expected)

    def test_a_matches_refined_quadrature_at_defaults(self) -> None:
        z, t = 0.3 - 0.1j, 0.2
        solver = DBarSolver.from_config(RunConfig()).resolved(t, abs(z))
        grid = solver.grid
        assert solver.phase_step(t, abs(z)) <= MAX_PHASE_STEP
        applied = solver.apply_A(z, t, 1.0)
        fine_grid = grid.refined(4)
        for s_target, turn in [(-0.45, 0.05), (-0.25, 0.3), (0.15, 0.55), (0.3, 0.7), (0.5, 0.9)]:
            j = int(np.argmin(np.abs(grid.s - s_target)))
            k = int(turn * grid.n_theta)
            lam = grid.nodes[j, k]
            fine = fine_grid.integrate_cauchy(lambda zeta: solver.data.r(zeta, z, t), lam).value
            expected = -fine / math.pi
            assert abs(applied[j, k] - expected) < 1e-3 * abs(expected), (s_target, turn)

    def test_a_is_conjugate_linear(self, solver: DBarSolver) -> None:
        rng = np.random.default_rng(0)
        f = rng.normal(size=solver.grid.shape) + 1j * rng.normal(size=solver.grid.shape)
        scaled = solver.apply_A(0.2, 0.3, 2j * f)
        np.testing.assert_allclose(scaled, -2j * solver.apply_A(0.2, 0.3, f), rtol=1e-12, atol=1e-15)

    def test_b_of_one_decays_in_time(self) -> None:
        grid = RadialGrid(s_max=0.75, n_r=112, n_theta=224)
        solver = DBarSolver(data=ScatteringData(c=0.05, width=WIDTH), grid=grid)
        values = {t: first_order_potential(solver, t) for t in (0.0, 1.0, 2.0)}
        scale = born_potential_at_origin(solver.data, 0.0)
        assert scale > 0
        for t, value in values.items():
            assert abs(value - born_potential_at_origin(solver.data, t)) < 1e-4 * scale, t
        # |J0(x)| <= 0.4 for x >= 4 bounds the first-order field for t >= 1
        assert abs(values[1.0]) <= 0.4 * abs(values[0.0])
        assert abs(values[2.0]) <= 0.4 * abs(values[0.0])

    def test_second_power_does_not_grow_in_time(self, solver: DBarSolver) -> None:
        norms = []
        for t in (0.0, 0.75, 1.5):
            local = solver.resolved(t, 0.0)
            norms.append(float(np.max(np.abs(local.apply_A(0.0, t, local.apply_A(0.0, t, 1.0))))))
        assert norms[0] > 0
        assert norms[1] <= norms[0]
        assert norms[2] <= norms[1]


class TestResolution:
    """Grids are refined per time so that exp(i S) is sampled over the data."""

    def test_resolved_grid_is_kept(self, solver: DBarSolver) -> None:
        assert solver.phase_step(0.2, 0.5) <= MAX_PHASE_STEP
        assert solver.resolved(0.2, 0.5) is solver

    def test_finer_grid_for_larger_times(self, solver: DBarSolver) -> None:
        child = solver.resolved(1.0, 0.1)
        assert child is not solver
        assert child.grid.s_max == solver.grid.s_max
        assert child.grid.n_r >= solver.grid.n_r
        assert child.grid.n_theta > solver.grid.n_theta
        assert child.phase_step(1.0, 0.1) <= MAX_PHASE_STEP
        assert child.data == solver.data
        assert solver.resolved(1.0, 0.1) is child

    def test_under_resolved_operators_raise(self, solver: DBarSolver) -> None:
        with pytest.raises(UnderResolvedPhase) as info:
            solver.apply_A(0.1, 1.0, 1.0)
        assert info.value.step > MAX_PHASE_STEP
        with pytest.raises(UnderResolvedPhase):
            solver.solve_mu(0.1, 1.0)

    def test_mu_minus1_moves_to_the_resolved_grid(self, solver: DBarSolver) -> None:
        expected = solver.resolved(1.0, 0.1).solve_mu(0.1, 1.0).mu_minus1
        assert solver.mu_minus1(0.1, 1.0) == expected

    def test_node_budget(self, small_grid: RadialGrid) -> None:
        capped = DBarSolver(
            data=ScatteringData(c=0.05, width=WIDTH), grid=small_grid, quadrature=QuadratureSettings(max_nodes=20000)
        )
        with pytest.raises(UnderResolvedPhase) as info:
            capped.resolved(2.0, 0.0)
        assert info.value.required_nodes > 20000
        with pytest.raises(UnderResolvedPhase):
            capped.reconstruct_v(0.0, 2.0)

    def test_support_trims_the_grid(self) -> None:
        solver = DBarSolver.from_config(RunConfig())
        s_hi = ScatteringData(c=0.05, width=0.25).support(1e-10)[1]
        assert solver.grid.s_max == pytest.approx(s_hi)
        assert solver.support_limit == pytest.approx(s_hi)
        assert solver.grid.n_r == 128


class TestNeumannSeries:
    """Iteration, partial sums and diagnostics."""

    @pytest.mark.parametrize("z,t", [(0.0, 0.0), (0.5 + 0.5j, 0.5), (-1.0 + 0.2j, 0.4), (2.0j, -0.5)])
    def test_converges(self, solver: DBarSolver, z: complex, t: float) -> None:
        solution = solver.solve_mu(z, t)
        assert solution.iterations <= 50
        assert solution.residual < 1e-9
        assert solution.contraction < 0.5

    def test_fixed_point(self, solver: DBarSolver) -> None:
        solution = solver.solve_mu(0.5 + 0.5j, 0.5)
        mapped = 1.0 + solver.apply_A(0.5 + 0.5j, 0.5, solution.mu)
        assert np.max(np.abs(mapped - solution.mu)) < 1e-8

    def test_partial_sums_approach_solution(self, solver: DBarSolver) -> None:
        z, t = 0.3 - 0.4j, 0.5
        mu = solver.solve_mu(z, t).mu
        errors = [np.max(np.abs(mu - solver.neumann_partial_sum(z, t, n))) for n in range(1, 5)]
        assert all(b < a for a, b in zip(errors, errors[1:]))

    def test_diagnostics(self, solver: DBarSolver) -> None:
        solution = solver.solve_mu(0.3 - 0.4j, 0.5, record_diagnostics=True)
        diagnostics = solution.diagnostics
        assert diagnostics is not None
        assert len(diagnostics.series_coefficients) == 4
        assert diagnostics.series_coefficients[0] == pytest.approx(solution.b_dot_one / math.pi, rel=1e-12)
        norms = diagnostics.power_norms
        assert all(b < a for a, b in zip(norms, norms[1:]))
        partial = sum(diagnostics.series_coefficients)
        r_mass = float(np.sum(solver.grid.weights * np.abs(solver.data.r_static(solver.grid.nodes))))
        assert abs(partial - solution.mu_minus1) <= 4 * norms[-1] * r_mass / math.pi + 1e-15

    def test_outer_ring_follows_leading_coefficient(self) -> None:
        grid = RadialGrid(s_max=2.0, n_r=96, n_theta=224)
        solution = DBarSolver(data=ScatteringData(c=0.05, width=WIDTH), grid=grid).solve_mu(0.2 + 0.1j, 0.3)
        deviation, predicted = solution.outer_ring_check(grid)
        assert deviation <= 5.0 * predicted + 1e-12

    def test_mu_is_continuous_across_rings(self) -> None:
        data = ScatteringData(c=0.05, width=0.5)
        coarse = RadialGrid(s_max=1.6, n_r=64, n_theta=64)
        z = 0.3 + 0.2j
        solution = DBarSolver(data=data, grid=coarse).solve_mu(z, 0.0)
        refined = DBarSolver(data=data, grid=coarse.refined(2)).solve_mu(z, 0.0)
        assert 1.0 < solution.ring_jump_ratio() < 10.0
        jumps = [float(np.max(np.abs(np.diff(s.mu, axis=0)))) for s in (solution, refined)]
        assert jumps[1] < 0.6 * jumps[0]

    def test_gate_failure(self, small_grid: RadialGrid) -> None:
        strong = DBarSolver(data=ScatteringData(c=50.0, width=WIDTH), grid=small_grid)
        with pytest.raises(NoConvergence) as info:
            strong.solve_mu(0.0, 0.0)
        assert info.value.residual >= 0.5
        assert info.value.iterations == 0

    def test_stall_is_reported(self, small_grid: RadialGrid) -> None:
        impatient = DBarSolver(
            data=ScatteringData(c=0.05, width=WIDTH), grid=small_grid, settings=SolverSettings(max_iter=1)
        )
        with pytest.raises(NoConvergence):
            impatient.solve_mu(0.5 + 0.5j, 0.5)


class TestReconstruction:
    """The potential v = 2i d mu_{-1} / dz."""

    @pytest.mark.parametrize("z,t", [(0.3 + 0.1j, 0.0), (0.5 - 0.5j, 0.5), (-1.0 + 1.0j, 1.0)])
    def test_potential_is_real(self, solver: DBarSolver, z: complex, t: float) -> None:
        sample = solver.reconstruct_v(z, t)
        assert sample.is_real()
        assert math.isfinite(abs(sample.v))

    def test_threads_give_identical_values(self, small_grid: RadialGrid) -> None:
        data = ScatteringData(c=0.05, width=WIDTH)
        serial = DBarSolver(data=data, grid=small_grid).reconstruct_v(0.4 + 0.2j, 0.5)
        parallel = DBarSolver(data=data, grid=small_grid, threads=4).reconstruct_v(0.4 + 0.2j, 0.5)
        assert parallel.v == pytest.approx(serial.v, rel=1e-13, abs=1e-16)

    def test_small_data_matches_linear_field(self, small_grid: RadialGrid) -> None:
        z, t = 0.3 + 0.1j, 0.2
        relative = []
        for c in (0.01, 0.005):
            data = ScatteringData(c=c, width=WIDTH)
            v = DBarSolver(data=data, grid=small_grid).reconstruct_v(z, t).v
            linear = LinearizedFlow(density=BornDensity.from_data(data), grid=small_grid).eval_I(t, z=z)
            relative.append(abs(v - linear) / abs(linear))
        assert relative[0] < 0.1
        assert relative[1] < 0.75 * relative[0]

    def test_small_data_at_the_origin_follows_first_order(self) -> None:
        data = ScatteringData(c=0.005, width=WIDTH)
        solver = DBarSolver(data=data, grid=RadialGrid(s_max=0.75, n_r=56, n_theta=224))
        scale = born_potential_at_origin(data, 0.0)
        for t in (0.0, 1.0):
            sample = solver.reconstruct_v(0.0, t)
            assert abs(sample.v - born_potential_at_origin(data, t)) < 0.05 * scale, t

    def test_from_config(self) -> None:
        config = RunConfig().with_overrides({"quadrature.n_r": 16, "quadrature.n_theta": 16, "scattering.c": 0.0})
        solver = DBarSolver.from_config(config)
        assert solver.grid.shape == (16, 16)
        assert solver.data.is_free
