import numpy as np
import pytest
from scipy.optimize import linprog

from nsf.galerkin import run
from nsf.inequalities import (CutoffTest, InequalityError, ParabolicCylinder, check_e1, check_e1_many, check_e2,
                              check_e2_many, check_e3, check_e3_many, check_korn, energy_estimate, fit_constants,
                              higher_integrability_probe, local_mean, minimum_principle, pressure_split,
                              random_check_times, random_cutoffs, random_cylinders, reverse_holder_probe,
                              temperature_estimate)
from nsf.presets import benchmark_s1, theta0_preset, zero_scenario


@pytest.fixture(scope="module")
def zero_long():
    # long enough for cut-offs with interior time support
    return run(zero_scenario(T=0.2, dt=1e-2))


@pytest.fixture(scope="module")
def heat_only():
    s = zero_scenario(M=8, T=0.2, dt=2e-3).replace(theta0=theta0_preset("sin11", (1.0,), 1.0), nu=0.02)
    return run(s)


PHI = CutoffTest((0.5, 0.45), 0.1, 0.25, 0.08)


# cut-offs ------------------------------------------------------------------


@pytest.mark.parametrize("profile", ["bump", "plateau"])
def test_cutoff_derivatives_match_finite_differences(profile):
    phi = CutoffTest((0.5, 0.5), 0.1, 0.3, 0.05, profile)
    x = np.array([0.41, 0.57, 0.63, 0.5]), np.array([0.52, 0.38, 0.66, 0.5])
    h = 1e-5
    g, grad, lap = phi.spatial(*x)
    gx = (phi.spatial(x[0] + h, x[1])[0] - phi.spatial(x[0] - h, x[1])[0]) / (2 * h)
    gy = (phi.spatial(x[0], x[1] + h)[0] - phi.spatial(x[0], x[1] - h)[0]) / (2 * h)
    np.testing.assert_allclose(grad[0], gx, atol=1e-7)
    np.testing.assert_allclose(grad[1], gy, atol=1e-7)
    lap_fd = (phi.spatial(x[0] + h, x[1])[0] + phi.spatial(x[0] - h, x[1])[0] + phi.spatial(x[0], x[1] + h)[0]
              + phi.spatial(x[0], x[1] - h)[0] - 4 * g) / h**2
    np.testing.assert_allclose(lap, lap_fd, atol=2e-3 * max(1.0, np.max(np.abs(lap))))
    t, dt = 0.112, 1e-6
    dh = (phi.temporal(t + dt)[0] - phi.temporal(t - dt)[0]) / (2 * dt)
    assert phi.temporal(t)[1] == pytest.approx(dh, rel=1e-7)


def test_plateau_is_one_on_inner_half():
    phi = CutoffTest((0.5, 0.5), 0.1, 0.2, 0.05, "plateau")
    g, grad, lap = phi.spatial(np.array([0.5, 0.55, 0.59]), np.array([0.5, 0.52, 0.5]))
    np.testing.assert_allclose(g, 1.0)
    assert np.max(np.abs(grad)) == 0.0 and np.max(np.abs(lap)) == 0.0
    g_out, _, _ = phi.spatial(np.array([0.71]), np.array([0.5]))
    assert g_out[0] == 0.0


def test_cutoff_bounds():
    b = CutoffTest((0.5, 0.5), 0.1, 0.2, 0.04).bounds
    # max |d/dr (1 - r^2)^5| = 10 r (1 - r^2)^4 at r = 1/3
    assert b["C_grad"] == pytest.approx(10 / 3 * (8 / 9) ** 4, rel=1e-5)
    assert b["sup_h"] == pytest.approx(1.0)
    assert b["sup_lap"] == pytest.approx(20.0 / 0.04, rel=1e-6)


def test_cutoff_validation():
    with pytest.raises(InequalityError):
        CutoffTest((0.5, 0.5), 0.1, 0.0, 0.04)
    with pytest.raises(InequalityError):
        CutoffTest((0.5, 0.5), 0.1, 0.2, 0.04, "square")
    with pytest.raises(InequalityError):
        CutoffTest((0.1, 0.5), 0.1, 0.2, 0.04).check_support(1.0, 0.5)
    with pytest.raises(InequalityError):
        CutoffTest((0.5, 0.5), 0.02, 0.2, 0.04).check_support(1.0, 0.5)


def test_random_samplers_respect_supports(rng):
    for phi in random_cutoffs(rng, 20, 1.0, 0.5):
        phi.check_support(1.0, 0.5)
    for cyl in random_cylinders(rng, 20, 1.0, 0.5):
        cyl.check(1.0, 0.5)


def test_cylinder_precondition():
    with pytest.raises(InequalityError):
        ParabolicCylinder((0.15, 0.5), 0.3, 0.1).check(1.0, 0.5)
    with pytest.raises(InequalityError):
        ParabolicCylinder((0.5, 0.5), 0.03, 0.1).check(1.0, 0.5)


# identities on trivial trajectories -----------------------------------------


def test_e1_on_zero_trajectory_with_constant_shift(zero_long):
    rep = check_e1(zero_long, PHI, np.array([0.3, -0.2]), 0.15)
    assert rep.passed
    assert abs(rep.residual) <= 1e-12 * rep.scale
    assert rep.lhs > 0


def test_e2_e3_on_zero_trajectory(zero_long):
    # the time terms telescope exactly; what is left is the Gauss rule on the
    # compactly supported Laplacian of the cut-off
    for rep in (check_e2(zero_long, PHI, 0.5, 0.15), check_e3(zero_long, PHI, 0.5, 0.15)):
        assert rep.passed
        assert abs(rep.residual) <= 1e-4 * rep.scale
        assert rep.meta["gradient"] == 0.0


def test_korn_on_zero_trajectory(zero_long):
    rep = check_korn(zero_long, PHI)
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.passed


def test_cylinder_probes_on_zero_trajectory(zero_long):
    cyl = [ParabolicCylinder((0.5, 0.5), 0.15, 0.08)]
    rh = reverse_holder_probe(zero_long, cyl)
    assert rh.finite and not np.any(rh.B)
    hi = higher_integrability_probe(zero_long, cyl, 0.1)
    assert hi.C == 0.0 and hi.per_cylinder[0]["lhs"] == 0.0


def test_pressure_split_on_zero_trajectory(zero_long):
    sp = pressure_split(zero_long)
    assert all(v == 0.0 for v in sp.norms.values())


def test_local_mean_of_zero_velocity(zero_long):
    assert not np.any(local_mean(zero_long, PHI, 0.15))


# argument checks -------------------------------------------------------------


def test_argument_errors(zero_long):
    with pytest.raises(InequalityError):
        check_e2(zero_long, PHI, 0.0, 0.15)
    for xi in (0.0, 1.0):
        with pytest.raises(InequalityError):
            check_e3(zero_long, PHI, xi, 0.15)
    cyl = [ParabolicCylinder((0.5, 0.5), 0.15, 0.08)]
    for eps in (0.0, 0.25):
        with pytest.raises(InequalityError):
            higher_integrability_probe(zero_long, cyl, eps)
    with pytest.raises(InequalityError):
        reverse_holder_probe(zero_long, cyl, delta=1.0)


# heat-only and Stokes-limit runs ---------------------------------------------


def test_heat_only_temperature_inequalities(heat_only, rng):
    tests = random_cutoffs(rng, 8, 1.0, heat_only.scenario.T)
    times = random_check_times(rng, tests, heat_only)
    for zeta in (1.0, 0.1, 0.01):
        assert all(r.passed for r in check_e2_many(heat_only, tests, zeta, times))
    for xi in (0.25, 0.5, 0.75):
        assert all(r.passed for r in check_e3_many(heat_only, tests, xi, times))


def test_stokes_limit_has_no_convective_pressure():
    traj = run(benchmark_s1(N=4, M=4, convection=False).replace(T=0.02))
    sp = pressure_split(traj)
    assert not np.any(sp.p1)
    assert sp.norms["split_defect"] == 0.0


# global estimates --------------------------------------------------------------


def test_global_estimates_on_benchmark(s1_coarse):
    e = energy_estimate(s1_coarse)
    assert e.passed and e.lhs > 0
    th = temperature_estimate(s1_coarse)
    assert th.passed
    mp = minimum_principle(s1_coarse)
    assert mp.meta["min_theta"] <= mp.meta["max_theta"]


def test_checks_do_not_mutate_the_trajectory(s1_coarse, rng):
    c, d = s1_coarse.c.copy(), s1_coarse.d.copy()
    tests = random_cutoffs(rng, 3, 1.0, 0.5)
    times = random_check_times(rng, tests, s1_coarse)
    a = check_e1_many(s1_coarse, tests, [np.zeros(2)] * 3, times)
    b = check_e1_many(s1_coarse, tests, [np.zeros(2)] * 3, times)
    assert [r.residual for r in a] == [r.residual for r in b]
    assert np.array_equal(c, s1_coarse.c) and np.array_equal(d, s1_coarse.d)


# constant fitting --------------------------------------------------------------


def test_fit_constants_matches_linprog(rng):
    for _ in range(5):
        X = rng.uniform(0.1, 10.0, size=(12, 3)) * np.array([1.0, 100.0, 0.01])
        need = rng.normal(size=12) * 3
        B = fit_constants(need, X)
        assert np.all(B >= 0) and np.all(X @ B >= need - 1e-9 * np.abs(need).max())
        ref = linprog(X.mean(axis=0), A_ub=-X, b_ub=-need, bounds=[(0, None)] * 3, method="highs")
        assert ref.status == 0
        assert X.mean(axis=0) @ B == pytest.approx(ref.fun, rel=1e-7, abs=1e-12)


def test_fit_constants_edge_cases():
    assert not np.any(fit_constants(np.array([-1.0, 0.0]), np.ones((2, 3))))
    assert np.all(np.isinf(fit_constants(np.array([1.0]), np.zeros((1, 3)))))
