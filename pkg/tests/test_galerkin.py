import numpy as np
import pytest

from nsf.galerkin import (GalerkinSystem, SolverError, _advance, assemble_heat, assemble_momentum, joule_density,
                          project_initial, run, step)
from nsf.oracles import ode_reference, oversampled_quadrature
from nsf.presets import benchmark_s1, forcing_preset, theta0_preset, u0_preset, zero_scenario

PI = np.pi


@pytest.fixture(scope="module")
def small():
    s = benchmark_s1(N=4, M=4)
    system = GalerkinSystem(s)
    return system, project_initial(s, system)


def test_zero_state_has_zero_right_hand_side():
    system = GalerkinSystem(zero_scenario())
    st = project_initial(system.scenario, system)
    assert not np.any(assemble_momentum(st)) and not np.any(assemble_heat(st))
    new = step(st, 1e-2)
    assert not np.any(new.c) and not np.any(new.d)


def test_transport_matrix_is_skew(small):
    system, st = small
    B = system.transport_matrix(system.convecting_field(st.c).values, system.N)
    assert np.max(np.abs(B + B.T)) <= 1e-12 * max(1.0, np.max(np.abs(B)))
    H = system.transport_matrix(system.convecting_field(st.c).values, system.M)
    assert np.max(np.abs(H + H.T)) <= 1e-12 * max(1.0, np.max(np.abs(H)))


def test_pressure_matrix_is_negative_semidefinite(small):
    system, _ = small
    P = system.pressure_matrix
    np.testing.assert_allclose(P, P.T, atol=1e-10 * np.max(np.abs(P)))
    assert np.linalg.eigvalsh(0.5 * (P + P.T)).max() <= 1e-9 * np.max(np.abs(P))


def _heat_only(M=4, dt=1e-2, T=0.05):
    return zero_scenario(M=M, T=T, dt=dt).replace(theta0=theta0_preset("sin11", (1.0,), 1.0), nu=0.02)


def test_heat_mode_decays_by_implicit_factor():
    s = _heat_only()
    system = GalerkinSystem(s)
    st = system.state(0.0, np.zeros((2, 4, 4)), np.eye(4)[0][:, None] * np.eye(4)[0][None, :])
    new = step(st, 1e-2)
    factor = 1.0 / (1.0 + s.k * 2 * PI**2 * 1e-2)
    assert new.d[0, 0] == pytest.approx(factor, rel=1e-13)
    new.d[0, 0] = 0.0
    assert np.max(np.abs(new.d)) < 1e-15


def test_heat_only_run_decays_geometrically():
    s = _heat_only()
    traj = run(s)
    factor = 1.0 / (1.0 + s.k * 2 * PI**2 * s.dt)
    np.testing.assert_allclose(traj.d[:, 0, 0], traj.d[0, 0, 0] * factor ** np.arange(traj.nt), rtol=1e-12)


def test_joule_density_of_single_mode():
    s = zero_scenario(N=2, M=2)
    system = GalerkinSystem(s)
    c = np.zeros((2, 2, 2))
    c[0, 0, 0] = 1.0
    st = system.state(0.0, c, np.zeros((2, 2)))
    X, Y = system.domain.nodes
    du2 = (PI * np.cos(PI * X) * np.sin(PI * Y)) ** 2 + 0.5 * (PI * np.sin(PI * X) * np.cos(PI * Y)) ** 2
    np.testing.assert_allclose(joule_density(st), s.mu(0.0 * X) * du2, rtol=1e-12, atol=1e-12)


def test_joule_density_is_nonnegative(s1_coarse):
    for m in (0, s1_coarse.nt // 2, s1_coarse.nt - 1):
        assert s1_coarse.joule(m).min() >= 0.0


def test_joule_projection_matches_oversampled_quadrature(small):
    system, st = small
    proj = system.project_scalar(joule_density(st))
    th, u, mu = st.theta, st.u, system.scenario.mu

    def integrand(k, l):
        def fn(X, Y):
            x, y = X.ravel(), Y.ravel()
            g = u.gradient_on_points(x, y)
            du2 = g[0, 0] ** 2 + g[1, 1] ** 2 + 0.5 * (g[0, 1] + g[1, 0]) ** 2
            val = mu(th.on_points(x, y)) * du2 * np.sin((k + 1) * PI * x) * np.sin((l + 1) * PI * y)
            return val.reshape(X.shape)
        return fn

    for k, l in [(0, 0), (1, 2), (3, 3)]:
        ref = oversampled_quadrature(integrand(k, l))
        assert proj[k, l] == pytest.approx(ref, rel=1e-8, abs=1e-10)


def test_step_matches_ode_reference_to_first_order(small):
    system, st = small
    errs = []
    for dt in (2e-4, 1e-4):
        a = step(st, dt)
        ref = ode_reference(system, st, dt)
        errs.append(np.linalg.norm(np.concatenate([(a.c - ref.c).ravel(), (a.d - ref.d).ravel()])))
    # local error of a first-order scheme scales like dt^2
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_nonpositive_dt_raises(small):
    system, st = small
    with pytest.raises(SolverError):
        step(st, 0.0)


def test_zero_run_stays_zero(zero_traj):
    assert not zero_traj.failed
    assert not np.any(zero_traj.c) and not np.any(zero_traj.d)
    np.testing.assert_allclose(zero_traj.times, np.arange(6) * 1e-2)


def test_unforced_kinetic_energy_is_nonincreasing():
    s = benchmark_s1(N=4, M=4, f=forcing_preset("zero", (), 1.0))
    s = s.replace(T=0.1)
    k = np.asarray(run(s).ledger.kinetic)
    assert np.all(np.diff(k) <= 1e-14 * k[0])


def test_per_step_energy_identity(small):
    system, st = small
    dt = 1e-3
    new, info = _advance(st, dt, system)
    m = system.mass
    lhs = 0.5 * m * (np.sum(new.c**2) - np.sum(st.c**2) + np.sum((new.c - st.c) ** 2)) / dt
    rhs = -info.dissipation - info.penalty + info.forcing_work + info.convection_residual
    assert lhs == pytest.approx(rhs, rel=1e-9)
    assert info.penalty >= 0.0
    assert abs(info.convection_residual) <= 1e-10 * info.dissipation


def test_run_is_deterministic():
    s = benchmark_s1(N=4, M=4).replace(T=0.05)
    a, b = run(s), run(s)
    assert np.array_equal(a.c, b.c) and np.array_equal(a.d, b.d)
    assert a.ledger.rows() == b.ledger.rows()


def test_state_cache_is_consistent(s1_coarse):
    assert s1_coarse.state(s1_coarse.nt - 1).check_cache()


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_overflowing_forcing_fails_cleanly():
    s = benchmark_s1(N=4, M=4, f=forcing_preset("two_mode_decay", (1e308,), 1.0)).replace(T=0.01)
    traj = run(s)
    assert traj.failed and traj.message
    assert traj.nt < s.n_steps + 1
