"""Faedo-Galerkin system for velocity and temperature, and its time stepper.

The stepper is first-order IMEX.  Each step solves two dense linear systems:

* momentum, with viscosity frozen at the old temperature, the quasi-compressible
  pressure implicit, and convection linearized around the old divergence-free
  convecting field (so the convective operator is skew and energy neutral);
* heat, with conduction and transport implicit and the Joule source taken from
  the new velocity.

Terms whose integrands are trigonometric polynomials (transport, pressure) are
integrated with the midpoint rule of the auxiliary grid, which is exact for
them; terms carrying ``mu(theta)`` or the data use the Gauss rule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .domain import (
    AuxGrid,
    Basis,
    BoundaryCutoff,
    Field,
    Mollifier,
    Scenario,
    build_basis,
    build_domain,
    grid_size,
    mollify_points,
    sine_table,
)
from .elliptic import HelmholtzField, NeumannSolver, helmholtz_mollify

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A time step failed (singular system or non-finite state)."""


def sumfactor(W: np.ndarray, Xa, Xb, Ya, Yb) -> np.ndarray:
    """``K[(i1,i2),(j1,j2)] = sum_xy W Xa[x,i1] Xb[x,j1] Ya[y,i2] Yb[y,j2]``."""
    T = np.einsum("xy,xi,xj->yij", W, Xa, Xb, optimize=True)
    K = np.einsum("yij,yk,yl->ikjl", T, Ya, Yb, optimize=True)
    n1, n2 = Xa.shape[1], Ya.shape[1]
    return K.reshape(n1 * n2, Xb.shape[1] * Yb.shape[1])


def sym_grad_sq(g: np.ndarray) -> np.ndarray:
    """``|Du|^2`` from a gradient array ``g[i, k] = d_i u_k``."""
    return g[0, 0] ** 2 + g[1, 1] ** 2 + 0.5 * (g[0, 1] + g[1, 0]) ** 2


class GalerkinSystem:
    """Everything fixed for a scenario: bases, grids, solvers and the constant
    parts of the discrete operators."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario.validate()
        s = scenario
        self.domain = build_domain(s.L, s.quad_order, s.cells())
        self.basis = build_basis(self.domain, s.N, s.M)
        self.grid = AuxGrid(s.L, grid_size(s.L, s.nu, max(s.N, s.M)))
        self.mollifier = Mollifier(s.nu, self.grid)
        self.chi = BoundaryCutoff(s.nu, s.L)
        self.solver = NeumannSolver(self.grid)
        self.mass = self.basis.mode_mass
        self.Sg_v, self.dSg_v = sine_table(s.L, s.N, self.grid.centers)
        self.Sg_t, self.dSg_t = sine_table(s.L, s.M, self.grid.centers)

    @property
    def N(self) -> int:
        return self.scenario.N

    @property
    def M(self) -> int:
        return self.scenario.M

    # pressure ------------------------------------------------------------
    @cached_property
    def pressure_columns(self) -> np.ndarray:
        """Pressure ``F_eps(w^j)`` on the grid for every velocity basis
        function, shape ``(n, n, 2 N^2)``."""
        S, dS = self.Sg_v, self.dSg_v
        N, n = self.N, self.grid.n
        div = np.zeros((n, n, 2, N, N))
        div[:, :, 0] = np.einsum("xj,yl->xyjl", dS, S)
        div[:, :, 1] = np.einsum("xj,yl->xyjl", S, dS)
        div = div.reshape(n, n, -1)
        sol = self.solver
        a = np.einsum("kx,xyc,ly->klc", sol.Cinv, div, sol.Cinv, optimize=True)
        a = -a * sol._inv_lam[:, :, None]
        p = np.einsum("xk,klc,yl->xyc", sol.C, a, sol.C, optimize=True) / self.scenario.eps
        self._basis_div = div
        return p

    @cached_property
    def pressure_matrix(self) -> np.ndarray:
        """``P[i, j] = (F_eps(w^j), div w^i)`` by the grid midpoint rule."""
        p = self.pressure_columns
        P = self.grid.h**2 * np.einsum("xyi,xyj->ij", self._basis_div, p, optimize=True)
        return 0.5 * (P + P.T)

    def pressure(self, c: np.ndarray) -> np.ndarray:
        return self.pressure_columns @ np.ravel(c)

    # convection ----------------------------------------------------------
    def convecting_field(self, c: np.ndarray) -> HelmholtzField:
        u = Field(self.basis, np.asarray(c).reshape(2, self.N, self.N))
        return helmholtz_mollify(u, self.mollifier, self.chi, self.solver)

    def transport_matrix(self, Mv: np.ndarray, n_modes: int) -> np.ndarray:
        """``B[i, j] = (M w^j, grad w^i)`` for scalar sine modes on the grid."""
        if n_modes == self.N:
            S, dS = self.Sg_v, self.dSg_v
        else:
            S, dS = self.Sg_t, self.dSg_t
        h2 = self.grid.h**2
        return sumfactor(h2 * Mv[0], dS, S, S, S) + sumfactor(h2 * Mv[1], S, S, dS, S)

    # viscosity -----------------------------------------------------------
    def viscous_matrix(self, mu_nodes: np.ndarray) -> np.ndarray:
        """``A[i, j] = (mu D w^j, D w^i)`` for the stacked velocity basis."""
        S, dS = self.basis.velocity_tables
        W = self.domain.weights * mu_nodes
        N2 = self.N * self.N
        xx = sumfactor(W, dS, dS, S, S)
        yy = sumfactor(W, S, S, dS, dS)
        A = np.empty((2 * N2, 2 * N2))
        A[:N2, :N2] = xx + 0.5 * yy
        A[N2:, N2:] = yy + 0.5 * xx
        # test w1 (d/dy), trial u2 (d/dx)
        A12 = 0.5 * sumfactor(W, S, dS, dS, S)
        A[:N2, N2:] = A12
        A[N2:, :N2] = A12.T
        return A

    # projections -----------------------------------------------------------
    def project_velocity(self, values: np.ndarray) -> np.ndarray:
        """``(v, w^i)`` for node values ``(2, nq, nq)``."""
        S, _ = self.basis.velocity_tables
        return np.einsum("xj,cxy,yl->cjl", S, values * self.domain.weights, S, optimize=True)

    def project_scalar(self, values: np.ndarray) -> np.ndarray:
        S, _ = self.basis.temperature_tables
        return np.einsum("xj,xy,yl->jl", S, values * self.domain.weights, S, optimize=True)

    def forcing(self, t: float) -> np.ndarray:
        X, Y = self.domain.nodes
        return self.scenario.f(X, Y, t)

    def heat_source(self, t: float) -> np.ndarray | None:
        g = self.scenario.heat_source
        if g is None:
            return None
        X, Y = self.domain.nodes
        return g(X, Y, t)

    def state(self, t: float, c, d) -> "GalerkinState":
        return GalerkinState(
            float(t),
            np.asarray(c, dtype=float).reshape(2, self.N, self.N),
            np.asarray(d, dtype=float).reshape(self.M, self.M),
            self,
        )


@dataclass(frozen=True, eq=False)
class GalerkinState:
    """Coefficients at time ``t``; node values are cached lazily."""

    t: float
    c: np.ndarray
    d: np.ndarray
    system: GalerkinSystem = field(repr=False)

    @cached_property
    def u(self) -> Field:
        return Field(self.system.basis, self.c)

    @cached_property
    def theta(self) -> Field:
        return Field(self.system.basis, self.d)

    @cached_property
    def u_nodes(self) -> np.ndarray:
        return self.u.value()

    @cached_property
    def grad_u(self) -> np.ndarray:
        return self.u.gradient()

    @cached_property
    def Du(self) -> np.ndarray:
        g = self.grad_u
        return 0.5 * (g + g.transpose(1, 0, 2, 3))

    @cached_property
    def theta_nodes(self) -> np.ndarray:
        return self.theta.value()

    @cached_property
    def grad_theta(self) -> np.ndarray:
        return self.theta.gradient()

    @cached_property
    def pressure(self) -> np.ndarray:
        return self.system.pressure(self.c)

    def check_cache(self, tol: float = 1e-12) -> bool:
        fresh = self.system.state(self.t, self.c, self.d)
        pairs = [
            (self.u_nodes, fresh.u_nodes),
            (self.grad_u, fresh.grad_u),
            (self.theta_nodes, fresh.theta_nodes),
            (self.grad_theta, fresh.grad_theta),
        ]
        return all(np.max(np.abs(a - b), initial=0.0) <= tol * (1 + np.max(np.abs(b), initial=0.0)) for a, b in pairs)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


def project_initial(scenario: Scenario, system: GalerkinSystem | None = None) -> GalerkinState:
    """L2 projections of ``u0`` and of the mollified, zero-extended ``theta0``."""
    system = system or GalerkinSystem(scenario)
    X, Y = system.domain.nodes
    mass = system.mass
    c = system.project_velocity(scenario.u0(X, Y)) / mass
    theta_moll = mollify_points(scenario.theta0, system.mollifier, scenario.L, X, Y)
    d = system.project_scalar(theta_moll) / mass
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(d))):
        raise SolverError("projection of the initial data failed")
    state = system.state(0.0, c, d)
    tmin = float(state.theta_nodes.min())
    if tmin < 0:
        logger.info("projected theta0 undershoots: min %.3e (not clipped)", tmin)
    return state


# ---------------------------------------------------------------------------
# right-hand sides of the ODE system
# ---------------------------------------------------------------------------


def joule_density(state: GalerkinState, system: GalerkinSystem | None = None) -> np.ndarray:
    """``mu(theta) |Du|^2`` at the quadrature nodes."""
    system = system or state.system
    return system.scenario.mu(state.theta_nodes) * sym_grad_sq(state.grad_u)


def assemble_momentum(state: GalerkinState, system: GalerkinSystem | None = None) -> np.ndarray:
    """Right-hand side of the velocity equations (mass matrix not inverted)."""
    system = system or state.system
    s = system.scenario
    c = state.c.ravel()
    N2 = system.N * system.N
    rhs = -system.viscous_matrix(s.mu(state.theta_nodes)) @ c
    rhs += system.pressure_matrix @ c
    if s.convection:
        B = system.transport_matrix(system.convecting_field(state.c).values, system.N)
        rhs[:N2] += B @ c[:N2]
        rhs[N2:] += B @ c[N2:]
    rhs += system.project_velocity(system.forcing(state.t)).ravel()
    return rhs.reshape(2, system.N, system.N)


def assemble_heat(state: GalerkinState, system: GalerkinSystem | None = None) -> np.ndarray:
    """Right-hand side of the temperature equations (mass matrix not inverted)."""
    system = system or state.system
    s = system.scenario
    d = state.d.ravel()
    lam = system.basis.stiffness_ratio(system.M).ravel()
    rhs = -s.k * system.mass * lam * d
    if s.convection:
        H = system.transport_matrix(system.convecting_field(state.c).values, system.M)
        rhs += H @ d
    rhs += system.project_scalar(joule_density(state, system)).ravel()
    g = system.heat_source(state.t)
    if g is not None:
        rhs += system.project_scalar(g).ravel()
    return rhs.reshape(system.M, system.M)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


@dataclass
class StepInfo:
    dissipation: float  # int mu(theta_old) |D u_new|^2
    penalty: float  # eps ||grad p_new||^2
    forcing_work: float  # (f_new, u_new)
    convection_residual: float  # c_new . B c_new
    cfl: float


def stability_bound(state: GalerkinState) -> float:
    """CFL-style ``h / ||u||_inf`` with ``h`` the smallest resolved wavelength."""
    system = state.system
    h = system.scenario.L / max(system.N, system.M)
    umax = float(np.max(np.abs(state.u_nodes), initial=0.0))
    return np.inf if umax == 0 else 0.5 * h / umax


def _advance(state: GalerkinState, dt: float, system: GalerkinSystem) -> tuple[GalerkinState, StepInfo]:
    if not dt > 0:
        raise SolverError(f"dt must be positive, got {dt}")
    s = system.scenario
    N2 = system.N * system.N
    mass = system.mass
    t_new = state.t + dt
    bound = stability_bound(state)
    if dt > bound:
        logger.warning("dt=%.3e exceeds the CFL estimate %.3e at t=%.4f", dt, bound, state.t)

    # momentum
    mu_old = s.mu(state.theta_nodes)
    A = system.viscous_matrix(mu_old)
    lhs = A - system.pressure_matrix
    lhs[np.diag_indices_from(lhs)] += mass / dt
    if s.convection:
        B = system.transport_matrix(system.convecting_field(state.c).values, system.N)
        lhs[:N2, :N2] -= B
        lhs[N2:, N2:] -= B
    F = system.project_velocity(system.forcing(t_new)).ravel()
    rhs = mass / dt * state.c.ravel() + F
    try:
        c_new = scipy.linalg.solve(lhs, rhs, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"momentum solve failed at t={t_new:.4f}: {exc}") from exc
    if not np.all(np.isfinite(c_new)):
        raise SolverError(f"non-finite velocity at t={t_new:.4f}")

    provisional = system.state(t_new, c_new, state.d)
    Du2 = sym_grad_sq(provisional.grad_u)
    joule = mu_old * Du2

    # heat
    lam = system.basis.stiffness_ratio(system.M).ravel()
    M2 = system.M * system.M
    hl = np.diag(mass / dt + s.k * mass * lam)
    if s.convection:
        H = system.transport_matrix(system.convecting_field(c_new).values, system.M)
        hl = hl - H
    hr = mass / dt * state.d.ravel() + system.project_scalar(joule).ravel()
    g = system.heat_source(t_new)
    if g is not None:
        hr += system.project_scalar(g).ravel()
    try:
        d_new = scipy.linalg.solve(hl, hr, check_finite=True) if s.convection else hr / np.diag(hl)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"heat solve failed at t={t_new:.4f}: {exc}") from exc
    if not np.all(np.isfinite(d_new)) or d_new.size != M2:
        raise SolverError(f"non-finite temperature at t={t_new:.4f}")

    new = system.state(t_new, c_new, d_new)
    conv = 0.0
    if s.convection:
        conv = float(c_new[:N2] @ B @ c_new[:N2] + c_new[N2:] @ B @ c_new[N2:])
    info = StepInfo(
        dissipation=float(system.domain.integrate(joule)),
        penalty=float(-c_new @ system.pressure_matrix @ c_new),
        forcing_work=float(F @ c_new),
        convection_residual=conv,
        cfl=bound,
    )
    return new, info


def step(state: GalerkinState, dt: float, system: GalerkinSystem | None = None) -> GalerkinState:
    return _advance(state, dt, system or state.system)[0]


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class EnergyLedger:
    time: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    pressure_penalty: list = field(default_factory=list)
    forcing_work: list = field(default_factory=list)
    theta_l1: list = field(default_factory=list)
    joule_cum: list = field(default_factory=list)
    min_theta: list = field(default_factory=list)
    max_theta: list = field(default_factory=list)
    du_sq: list = field(default_factory=list)  # ||Du||^2 per state
    convection_residual: list = field(default_factory=list)

    CSV_COLUMNS = ("time", "kinetic", "dissipation", "theta_l1", "joule_cum", "min_theta", "pressure_penalty")

    def record(self, state: GalerkinState, info: StepInfo | None, dt: float) -> None:
        dom = state.system.domain
        prev = (lambda name: getattr(self, name)[-1]) if self.time else (lambda name: 0.0)
        self.time.append(state.t)
        self.kinetic.append(0.5 * state.system.mass * float(np.sum(state.c**2)))
        add = info is not None
        self.dissipation.append(prev("dissipation") + (dt * info.dissipation if add else 0.0))
        self.joule_cum.append(prev("joule_cum") + (dt * info.dissipation if add else 0.0))
        self.pressure_penalty.append(prev("pressure_penalty") + (dt * info.penalty if add else 0.0))
        self.forcing_work.append(prev("forcing_work") + (dt * info.forcing_work if add else 0.0))
        self.convection_residual.append(info.convection_residual if add else 0.0)
        th = state.theta_nodes
        self.theta_l1.append(float(dom.integrate(np.abs(th))))
        self.min_theta.append(float(th.min()))
        self.max_theta.append(float(th.max()))
        self.du_sq.append(float(dom.integrate(sym_grad_sq(state.grad_u))))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v) for k, v in self.__dict__.items()}

    def rows(self):
        cols = [getattr(self, c) for c in self.CSV_COLUMNS]
        return list(zip(*cols))


@dataclass
class Trajectory:
    system: GalerkinSystem
    times: np.ndarray
    c: np.ndarray  # (nt, 2, N, N)
    d: np.ndarray  # (nt, M, M)
    ledger: EnergyLedger
    failed: bool = False
    message: str = ""

    @property
    def scenario(self) -> Scenario:
        return self.system.scenario

    @property
    def nt(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.nt > 1 else self.scenario.dt

    def state(self, m: int) -> GalerkinState:
        return self.system.state(self.times[m], self.c[m], self.d[m])

    def states(self):
        for m in range(self.nt):
            yield self.state(m)

    def pressure(self, m: int) -> np.ndarray:
        return self.system.pressure(self.c[m])

    def joule(self, m: int) -> np.ndarray:
        return joule_density(self.state(m))

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def run(scenario: Scenario, system: GalerkinSystem | None = None, initial: GalerkinState | None = None) -> Trajectory:
    """Integrate to ``T``.  A failing step ends the run with ``failed=True``."""
    system = system or GalerkinSystem(scenario)
    state = initial or project_initial(scenario, system)
    dt = scenario.dt
    ledger = EnergyLedger()
    ledger.record(state, None, dt)
    cs, ds, ts = [state.c], [state.d], [state.t]
    failed, message = False, ""
    for m in range(scenario.n_steps):
        try:
            state, info = _advance(state, dt, system)
        except SolverError as exc:
            failed, message = True, str(exc)
            logger.error("run aborted: %s", exc)
            break
        # the grid time is m*dt, not the accumulated sum
        state = system.state((m + 1) * dt, state.c, state.d)
        ledger.record(state, info, dt)
        cs.append(state.c)
        ds.append(state.d)
        ts.append(state.t)
    return Trajectory(system, np.asarray(ts), np.asarray(cs), np.asarray(ds), ledger, failed, message)
