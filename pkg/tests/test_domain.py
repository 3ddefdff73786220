import numpy as np
import pytest

from nsf.domain import (AuxGrid, BoundaryCutoff, DomainError, Field, Mollifier, build_basis, build_domain,
                        default_viscosity, grid_size, mollify_field, mollify_points)
from nsf.galerkin import GalerkinSystem, project_initial
from nsf.presets import benchmark_s1, theta0_preset, u0_preset

PI = np.pi


def test_weights_sum_to_area():
    dom = build_domain(1.0, 4)
    assert dom.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert build_domain(2.5, 6).weights.sum() == pytest.approx(6.25, rel=1e-14)


def test_closed_form_integrals():
    dom = build_domain(1.0, 8)
    X, Y = dom.nodes
    assert dom.integrate(np.sin(PI * X) * np.sin(PI * Y)) == pytest.approx(4 / PI**2, rel=1e-12)
    assert dom.integrate(X**2 * Y**2) == pytest.approx(1 / 9, rel=1e-14)


@pytest.mark.parametrize("L, order", [(0.0, 4), (-1.0, 4), (1.0, 1)])
def test_build_domain_rejects(L, order):
    with pytest.raises(DomainError):
        build_domain(L, order)


def test_single_mode_vanishes_on_boundary():
    basis = build_basis(build_domain(1.0, 8), 1, 1)
    u = basis.vector(np.ones((2, 1, 1)))
    s = np.linspace(0, 1, 11)
    edges = [(s, 0 * s), (s, 0 * s + 1), (0 * s, s), (0 * s + 1, s)]
    for x, y in edges:
        assert np.max(np.abs(u.on_points(x, y))) < 1e-15


def test_temperature_mass_matrix_is_diagonal():
    basis = build_basis(build_domain(1.0, 8), 4, 4)
    M = basis.mass_matrix("temperature")
    np.testing.assert_allclose(M, 0.25 * np.eye(16), atol=1e-12)


def test_gradient_of_first_mode_at_center():
    basis = build_basis(build_domain(1.0, 8), 1, 1)
    th = basis.scalar(np.ones((1, 1)))
    g = th.gradient_on_points(np.array([0.5]), np.array([0.5]))
    assert np.max(np.abs(g)) < 1e-14


def test_aliasing_guard():
    dom = build_domain(1.0, 4, n_cells=2)
    with pytest.raises(DomainError):
        build_basis(dom, 16, 4)


def test_gradient_matches_finite_differences(rng):
    basis = build_basis(build_domain(1.0, 8), 5, 5)
    u = basis.vector(rng.standard_normal((2, 5, 5)))
    x, y, h = np.array([0.3, 0.71]), np.array([0.42, 0.2]), 1e-6
    g = u.gradient_on_points(x, y)
    gx = (u.on_points(x + h, y) - u.on_points(x - h, y)) / (2 * h)
    gy = (u.on_points(x, y + h) - u.on_points(x, y - h)) / (2 * h)
    np.testing.assert_allclose(g[0], gx, atol=1e-7)
    np.testing.assert_allclose(g[1], gy, atol=1e-7)


def test_viscosity_bounds_random_samples(rng):
    mu = default_viscosity()
    assert (mu.lower, mu.upper) == (1.0, 2.0)
    assert mu.check_bounds(rng.standard_normal(10_000) * 100)


# projections -------------------------------------------------------------


def test_zero_velocity_projects_to_zero():
    st = project_initial(benchmark_s1(u0=u0_preset("zero", (), 1.0)))
    assert not np.any(st.c)


def test_projection_is_idempotent():
    s = benchmark_s1()
    system = GalerkinSystem(s)
    st = project_initial(s, system)
    again = system.project_velocity(st.u_nodes) / system.mass
    np.testing.assert_allclose(again, st.c, atol=1e-12)


def test_sine_temperature_projection_recovers_single_mode():
    s = benchmark_s1(theta0=theta0_preset("sin11", (1.0,), 1.0))
    system = GalerkinSystem(s)
    X, Y = system.domain.nodes
    d = system.project_scalar(s.theta0(X, Y)) / system.mass
    assert d[0, 0] == pytest.approx(1.0, abs=1e-12)
    d[0, 0] = 0.0
    assert np.max(np.abs(d)) <= 1e-8


def test_mollified_sine_coefficient_converges_as_nu_shrinks():
    errs = []
    for nu in (0.08, 0.04, 0.02):
        s = benchmark_s1(theta0=theta0_preset("sin11", (1.0,), 1.0), nu=nu)
        errs.append(abs(project_initial(s).d[0, 0] - 1.0))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-3


def test_projected_smooth_theta0_is_nonnegative():
    s = benchmark_s1(theta0=theta0_preset("sin11", (1.0,), 1.0), nu=0.02)
    th = project_initial(s).theta_nodes
    assert th.min() >= -1e-6 * th.max()


def test_bump_projection_undershoot_shrinks_with_modes():
    mins = []
    for M in (8, 16):
        th = project_initial(benchmark_s1(N=4, M=M)).theta_nodes
        mins.append(th.min() / th.max())
    assert mins[1] > mins[0]


# mollification -----------------------------------------------------------


def test_kernel_has_unit_mass():
    grid = AuxGrid(1.0, grid_size(1.0, 0.05, 8))
    m = Mollifier(0.05, grid)
    assert m.total_mass() == pytest.approx(1.0, abs=1e-10)
    assert m.stencil.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(m.stencil >= 0)
    assert m.kernel(np.array([0.05, 0.07])).max() == 0.0


def test_cutoff_margin():
    chi = BoundaryCutoff(0.05, 1.0)
    assert chi(np.array([0.1]), np.array([0.5]))[0] == 0.0
    assert chi(np.array([0.1001]), np.array([0.5]))[0] == 1.0


def _grid_setup(nu=0.05):
    grid = AuxGrid(1.0, grid_size(1.0, nu, 8))
    return grid, Mollifier(nu, grid), BoundaryCutoff(nu, 1.0)


def test_mollified_constant_is_constant_in_the_interior():
    grid, moll, chi = _grid_setup()
    vals = np.ones((2, grid.n, grid.n)) * np.array([0.3, -1.2])[:, None, None]
    out = mollify_field(vals, moll, chi)
    X, Y = grid.mesh
    inner = np.minimum(np.minimum(X, 1 - X), np.minimum(Y, 1 - Y)) > 3 * moll.nu
    np.testing.assert_allclose(out[0][inner], 0.3, atol=1e-12)
    np.testing.assert_allclose(out[1][inner], -1.2, atol=1e-12)


def test_mollified_field_vanishes_near_the_boundary(rng):
    grid, moll, chi = _grid_setup()
    out = mollify_field(rng.standard_normal((2, grid.n, grid.n)), moll, chi)
    X, Y = grid.mesh
    near = np.minimum(np.minimum(X, 1 - X), np.minimum(Y, 1 - Y)) < moll.nu
    assert np.max(np.abs(out[:, near])) == 0.0


def test_mollified_rotation_matches_direct_convolution():
    from scipy import integrate

    grid, moll, chi = _grid_setup()
    X, Y = grid.mesh
    out = mollify_field(np.stack([Y, -X]), moll, chi)
    i = grid.n // 2
    x0, y0 = grid.centers[i], grid.centers[i]
    nu = moll.nu
    mass = integrate.dblquad(lambda b, a: moll.kernel(np.hypot(a, b)), -nu, nu, -nu, nu, epsabs=1e-12)[0]
    ref = integrate.dblquad(lambda b, a: (y0 - b) * moll.kernel(np.hypot(a, b)), -nu, nu, -nu, nu,
                            epsabs=1e-12)[0] / mass
    assert out[0, i, i] == pytest.approx(ref, abs=1e-3)


def test_mollification_is_a_contraction(rng):
    grid, moll, chi = _grid_setup()
    for _ in range(5):
        v = rng.standard_normal((2, grid.n, grid.n))
        assert grid.norm(mollify_field(v, moll, chi)) <= (1 + 1e-10) * grid.norm(v)


def test_mollify_rejects_large_radius():
    grid = AuxGrid(1.0, 32)
    with pytest.raises(DomainError):
        mollify_field(np.zeros((2, 32, 32)), Mollifier(0.26, grid), BoundaryCutoff(0.26, 1.0))


def test_point_mollification_of_constant():
    grid, moll, _ = _grid_setup()
    v = mollify_points(lambda x, y: np.ones_like(x), moll, 1.0, np.array([0.5, 0.0]), np.array([0.5, 0.5]))
    assert v[0] == pytest.approx(1.0, abs=1e-12)
    assert 0.3 < v[1] < 0.7


# scenario validation -------------------------------------------------------


def test_scenario_rejects_negative_theta0():
    with pytest.raises(DomainError):
        benchmark_s1(theta0=theta0_preset("sin11", (-1.0,), 1.0)).validate()


def test_scenario_rejects_divergent_u0():
    from nsf.domain import Preset

    bad = Preset("bad", (), lambda x, y: np.stack([np.asarray(x) * (1 - np.asarray(x)), np.zeros(np.shape(x))]))
    with pytest.raises(DomainError):
        benchmark_s1(u0=bad).validate()


def test_scenario_rejects_dt_not_dividing_T():
    with pytest.raises(DomainError):
        benchmark_s1(dt=0.003).validate()
