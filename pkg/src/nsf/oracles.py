"""Independent brute-force references.

These are deliberately slow and share as little code as possible with the
solver: the Neumann oracle builds the cosine differentiation matrices from
``scipy.fft`` and solves a dense bordered system, the ODE reference calls an
adaptive Runge-Kutta integrator on the unsplit right-hand side, and the
manufactured case derives its forcing symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.linalg
import sympy as sp
from scipy.integrate import solve_ivp

from .domain import Scenario, build_domain, constant_viscosity, Preset
from .galerkin import GalerkinState, GalerkinSystem, assemble_heat, assemble_momentum


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# dense Neumann solve
# ---------------------------------------------------------------------------


def cosine_second_derivative(n: int, L: float) -> np.ndarray:
    """Dense 1D second-derivative matrix of the cell-centred cosine interpolant."""
    eye = np.eye(n)
    k = np.pi * np.arange(n) / L
    coeffs = scipy.fft.dct(eye, type=2, axis=0)
    return scipy.fft.idct(-(k**2)[:, None] * coeffs, type=2, axis=0)


def dense_neumann_oracle(rhs: np.ndarray, L: float = 1.0) -> np.ndarray:
    """Mean-zero ``p`` with ``Laplace p = rhs`` by a dense bordered LU solve."""
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if rhs.shape != (n, n):
        raise OracleError("rhs must be square")
    if n > 48:
        raise OracleError("dense oracle is meant for coarse grids (n <= 48)")
    if abs(rhs.mean()) > 1e-8 * max(np.abs(rhs).mean(), 1e-300):
        raise OracleError("incompatible right-hand side")
    D2 = cosine_second_derivative(n, L)
    eye = np.eye(n)
    A = np.kron(D2, eye) + np.kron(eye, D2)
    ones = np.ones((n * n, 1))
    K = np.block([[A, ones], [ones.T, np.zeros((1, 1))]])
    b = np.concatenate([rhs.ravel(), [0.0]])
    sol = scipy.linalg.solve(K, b)
    return sol[:-1].reshape(n, n)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def oversampled_quadrature(fn, L: float = 1.0, factor: int = 4, cells: int = 8, order: int = 8) -> float:
    """``int_Omega fn(x, y)`` with ``factor`` times the base node density."""
    if factor < 4:
        raise OracleError("oversampling factor must be at least 4")
    dom = build_domain(L, order, cells * factor)
    X, Y = dom.nodes
    return float(dom.integrate(fn(X, Y)))


# ---------------------------------------------------------------------------
# ODE reference
# ---------------------------------------------------------------------------


def ode_rhs(system: GalerkinSystem):
    """Unsplit Galerkin right-hand side ``y' = F(t, y)`` on stacked coefficients."""
    N, M = system.N, system.M
    nv = 2 * N * N
    mass = system.mass

    def F(t, y):
        st = system.state(t, y[:nv].reshape(2, N, N), y[nv:].reshape(M, M))
        dc = assemble_momentum(st, system).ravel() / mass
        dd = assemble_heat(st, system).ravel() / mass
        return np.concatenate([dc, dd])

    return F


def ode_reference(system: GalerkinSystem, state: GalerkinState, t_end: float, rtol: float = 1e-10,
                  atol: float = 1e-12) -> GalerkinState:
    """Integrate the Galerkin ODE from ``state`` to ``t_end`` with DOP853."""
    if max(system.N, system.M) > 8:
        raise OracleError("ODE reference is limited to N, M <= 8")
    y0 = np.concatenate([np.ravel(state.c), np.ravel(state.d)])
    sol = solve_ivp(ode_rhs(system), (state.t, t_end), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise OracleError(f"reference integration failed: {sol.message}")
    y = sol.y[:, -1]
    nv = 2 * system.N * system.N
    return system.state(t_end, y[:nv].reshape(2, system.N, system.N), y[nv:].reshape(system.M, system.M))


# ---------------------------------------------------------------------------
# manufactured solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact Stokes-Fourier fields with constant viscosity.

    ``u* = amp cos(omega t) curl(sin^q(pi x) sin^q(pi y))`` and
    ``theta* = (1 + t) sin(pi x) sin(pi y)`` on the unit square; ``f`` and the
    heat source are obtained by substitution into the equations without
    convection.  Larger ``q`` gives faster decay of the sine coefficients.
    """

    mu: float = 1.5
    k: float = 0.1
    amp: float = 1.0
    omega: float = 2.0
    power: int = 4

    @cached_property
    def symbols(self):
        x, y, t = sp.symbols("x y t", real=True)
        g = self.amp * sp.cos(self.omega * t)
        psi = sp.sin(sp.pi * x) ** self.power * sp.sin(sp.pi * y) ** self.power
        u = sp.Matrix([g * sp.diff(psi, y), -g * sp.diff(psi, x)])
        theta = (1 + t) * sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
        grad = sp.Matrix([[sp.diff(u[k], v) for k in range(2)] for v in (x, y)])  # grad[i, k] = d_i u_k
        D = (grad + grad.T) / 2
        divD = sp.Matrix([sum(sp.diff(self.mu * D[i, kk], (x, y)[i]) for i in range(2)) for kk in range(2)])
        f = sp.simplify(sp.diff(u, t) - divD)
        joule = self.mu * sum(D[i, j] ** 2 for i in range(2) for j in range(2))
        heat = sp.simplify(sp.diff(theta, t) - self.k * (sp.diff(theta, x, 2) + sp.diff(theta, y, 2)) - joule)
        return {"x": x, "y": y, "t": t, "u": u, "theta": theta, "f": f, "heat": heat, "D": D}

    def _fn(self, expr):
        sy = self.symbols
        args = (sy["x"], sy["y"], sy["t"])
        parts = list(expr) if isinstance(expr, sp.MatrixBase) else [expr]
        fns = [sp.lambdify(args, e, "numpy") for e in parts]

        def wrapped(x, y, t):
            shape = np.broadcast(x, y).shape
            vals = [np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), shape) for fn in fns]
            return np.stack(vals) if len(vals) > 1 else vals[0].copy()

        return wrapped

    def u(self, x, y, t):
        return self._fn(self.symbols["u"])(x, y, t)

    def theta(self, x, y, t):
        return self._fn(self.symbols["theta"])(x, y, t)

    def forcing(self, x, y, t):
        return self._fn(self.symbols["f"])(x, y, t)

    def heat_source(self, x, y, t):
        return self._fn(self.symbols["heat"])(x, y, t)

    def residuals(self, x, y, t, digits: int = 30) -> dict[str, float]:
        """Strong-form residuals at sample points.

        The exact fields are differentiated numerically in multiprecision, so
        this checks the symbolic forcing along an independent path.
        """
        import mpmath

        sy = self.symbols
        args = (sy["x"], sy["y"], sy["t"])
        old = mpmath.mp.dps
        mpmath.mp.dps = digits
        try:
            u = [sp.lambdify(args, e, "mpmath") for e in sy["u"]]
            th = sp.lambdify(args, sy["theta"], "mpmath")
            f = [sp.lambdify(args, e, "mpmath") for e in sy["f"]]
            g = sp.lambdify(args, sy["heat"], "mpmath")
            out = {"momentum": 0.0, "divergence": 0.0, "heat": 0.0}
            for xi, yi in zip(np.ravel(x), np.ravel(y)):
                pt = (mpmath.mpf(float(xi)), mpmath.mpf(float(yi)), mpmath.mpf(float(t)))
                d = lambda fn, order: mpmath.diff(fn, pt, order)
                grad = [[d(u[kk], (1, 0, 0)), d(u[kk], (0, 1, 0))] for kk in range(2)]  # grad[k][i] = d_i u_k
                for kk in range(2):
                    lap = d(u[kk], (2, 0, 0)) + d(u[kk], (0, 2, 0))
                    r = d(u[kk], (0, 0, 1)) - 0.5 * self.mu * lap - f[kk](*pt)
                    out["momentum"] = max(out["momentum"], abs(float(r)))
                out["divergence"] = max(out["divergence"], abs(float(grad[0][0] + grad[1][1])))
                D01 = 0.5 * (grad[0][1] + grad[1][0])
                joule = self.mu * (grad[0][0] ** 2 + grad[1][1] ** 2 + 2 * D01**2)
                lap_t = d(th, (2, 0, 0)) + d(th, (0, 2, 0))
                r = d(th, (0, 0, 1)) - self.k * lap_t - joule - g(*pt)
                out["heat"] = max(out["heat"], abs(float(r)))
        finally:
            mpmath.mp.dps = old
        return out

    def scenario(self, N: int, M: int, dt: float, T: float = 0.5, eps: float = 1e-2, nu: float = 0.05) -> Scenario:
        return Scenario(
            L=1.0, T=T, k=self.k, mu=constant_viscosity(self.mu),
            f=Preset("manufactured", (self.mu, self.k, self.amp), self.forcing),
            u0=Preset("manufactured", (self.amp,), lambda x, y: self.u(x, y, 0.0)),
            theta0=Preset("manufactured", (), lambda x, y: self.theta(x, y, 0.0)),
            eps=eps, nu=nu, N=N, M=M, dt=dt, convection=False,
            heat_source=self.heat_source,
        )

    def velocity_error(self, traj) -> float:
        """``||u - u*||_{L2(Q_T)}`` by Gauss in space and trapezoid in time."""
        dom = traj.system.domain
        X, Y = dom.nodes
        per = np.array([dom.integrate(np.sum((st.u_nodes - self.u(X, Y, st.t)) ** 2, axis=0))
                        for st in traj.states()])
        w = np.full(traj.nt, traj.dt)
        w[0] = w[-1] = 0.5 * traj.dt
        return float(np.sqrt(np.dot(w, per)))


def convergence_order(errors, factors=2.0) -> np.ndarray:
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(factors)


# ---------------------------------------------------------------------------
# two-resolution tolerance protocol
# ---------------------------------------------------------------------------

CALIBRATION_SEED = 1000
ZETAS = (1.0, 0.1, 0.01)
XIS = (0.25, 0.5, 0.75)


def local_inequality_floors(traj, seed: int, n_cutoffs: int = 32) -> dict[str, float]:
    """Most negative relative residual of each local inequality over a random
    sample of cut-offs (zero when all residuals are nonnegative)."""
    from . import inequalities as iq

    s = traj.scenario
    rng = np.random.default_rng(seed)
    cuts = iq.random_cutoffs(rng, n_cutoffs, s.L, s.T)
    ts = iq.random_check_times(rng, cuts, traj)
    means = [iq.local_mean(traj, c, t) for c, t in zip(cuts, ts)]
    reps = {
        "e1": iq.check_e1_many(traj, cuts, [np.zeros(2)] * len(cuts), ts)
        + iq.check_e1_many(traj, cuts, means, ts),
        "e2": [r for z in ZETAS for r in iq.check_e2_many(traj, cuts, z, ts)],
        "e3": [r for xi in XIS for r in iq.check_e3_many(traj, cuts, xi, ts)],
    }
    floors = {k: max(0.0, -min(r.relative for r in v)) for k, v in reps.items()}
    split = iq.pressure_split(traj).norms
    floors["split"] = split["split_defect"] / split["p"] if split["p"] > 0 else 0.0
    return floors


def calibrate_tolerances(N: int = 8, seed: int = CALIBRATION_SEED, factor: float = 3.0,
                         minimum: float = 1e-12) -> dict:
    """Run S1 at ``N`` and ``2N`` and set each tolerance to ``factor`` times
    the refined run's residual floor."""
    from .galerkin import run
    from .presets import benchmark_s1

    coarse = local_inequality_floors(run(benchmark_s1(N=N, M=N)), seed)
    fine = local_inequality_floors(run(benchmark_s1(N=2 * N, M=2 * N)), seed)
    tol = {k: max(factor * v, minimum) for k, v in fine.items()}
    return {"coarse_N": N, "fine_N": 2 * N, "seed": seed, "coarse": coarse, "fine": fine, "tolerance": tol}
