import numpy as np
import pytest

from nsf.domain import AuxGrid
from nsf.galerkin import GalerkinSystem, project_initial
from nsf.oracles import (ManufacturedCase, OracleError, convergence_order, dense_neumann_oracle, ode_reference,
                         oversampled_quadrature)
from nsf.presets import benchmark_s1, theta0_preset, zero_scenario

PI = np.pi


def test_dense_oracle_zero_and_eigenmode():
    assert not np.any(dense_neumann_oracle(np.zeros((8, 8))))
    X, Y = AuxGrid(1.0, 16).mesh
    mode = np.cos(2 * PI * X) * np.cos(PI * Y)
    np.testing.assert_allclose(dense_neumann_oracle(mode), -mode / (5 * PI**2), atol=1e-13)


def test_dense_oracle_converges_to_closed_form():
    # p'' = x - 1/2 with zero flux and zero mean
    errs = []
    for n in (8, 16, 32):
        X, _ = AuxGrid(1.0, n).mesh
        p = dense_neumann_oracle(X - 0.5)
        errs.append(np.max(np.abs(p - (X**3 / 6 - X**2 / 4 + 1 / 24))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_dense_oracle_rejects_bad_input():
    with pytest.raises(OracleError):
        dense_neumann_oracle(np.ones((8, 8)))
    with pytest.raises(OracleError):
        dense_neumann_oracle(np.zeros((64, 64)))
    with pytest.raises(OracleError):
        dense_neumann_oracle(np.zeros((8, 6)))


def test_oversampled_quadrature():
    assert oversampled_quadrature(lambda X, Y: np.ones_like(X)) == pytest.approx(1.0, abs=1e-14)
    assert oversampled_quadrature(lambda X, Y: X**5 * Y**3) == pytest.approx(1 / 24, rel=1e-14)
    assert oversampled_quadrature(lambda X, Y: np.sin(PI * X) ** 2, L=2.0) == pytest.approx(2.0, rel=1e-13)
    with pytest.raises(OracleError):
        oversampled_quadrature(lambda X, Y: X, factor=2)


def test_ode_reference_heat_mode():
    s = zero_scenario(M=4).replace(theta0=theta0_preset("sin11", (1.0,), 1.0), nu=0.02)
    system = GalerkinSystem(s)
    d = np.zeros((4, 4))
    d[0, 0] = 1.0
    st = system.state(0.0, np.zeros((2, 4, 4)), d)
    ref = ode_reference(system, st, 0.1)
    assert ref.d[0, 0] == pytest.approx(np.exp(-s.k * 2 * PI**2 * 0.1), rel=1e-9)


def test_ode_reference_zero_and_size_limit():
    system = GalerkinSystem(zero_scenario())
    st = project_initial(system.scenario, system)
    ref = ode_reference(system, st, 0.05)
    assert not np.any(ref.c) and not np.any(ref.d)
    big = GalerkinSystem(benchmark_s1(N=12, M=4))
    with pytest.raises(OracleError):
        ode_reference(big, project_initial(big.scenario, big), 0.01)


def test_manufactured_fields_satisfy_the_equations():
    case = ManufacturedCase()
    x = np.array([0.13, 0.5, 0.77])
    y = np.array([0.61, 0.29, 0.5])
    res = case.residuals(x, y, 0.3)
    assert max(res.values()) <= 1e-10


def test_manufactured_fields_vanish_on_the_boundary():
    case = ManufacturedCase()
    s = np.linspace(0, 1, 7)
    assert np.max(np.abs(case.u(s, 0 * s, 0.2))) < 1e-14
    assert np.max(np.abs(case.theta(0 * s + 1, s, 0.2))) < 1e-14
    sc = case.scenario(4, 4, 0.1, T=0.2)
    assert sc.heat_source is not None and not sc.convection


def test_convergence_order():
    np.testing.assert_allclose(convergence_order([1.0, 0.25, 0.0625]), [2.0, 2.0])
    np.testing.assert_allclose(convergence_order([1.0, 0.5], 4.0), [0.5])
