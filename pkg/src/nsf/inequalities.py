"""Residual checks of the energy estimates and local energy inequalities on
computed trajectories.

Every check returns an :class:`InequalityReport` with ``residual = RHS - LHS``;
a check passes when the residual is at least ``-tolerance``.  Space integrals
use the Gauss rule of the trajectory's domain, time integrals the trapezoid
rule over the stored steps, except that terms carrying the time derivative
of the test function are integrated exactly against the piecewise-linear
interpolant of the fields.  Tolerances are relative to ``scale``, the
integral of the absolute value of every integrand entering the check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
import math

import numpy as np

from .domain import Field
from .elliptic import cosine_table
from .galerkin import Trajectory, sym_grad_sq


# Relative tolerances fixed by the two-resolution protocol (S1 at N = 8 and
# 16, calibration seed 1000, three times the refined floor); regenerate with
# ``nsf oracle tolerances``.
FROZEN_REL_TOL = {"e1": 1.74e-2, "e2": 2.09e-3, "e3": 7.2e-4, "korn": 1e-12, "split": 1e-12}


class InequalityError(ValueError):
    """A test object violates the hypotheses of the check."""


# ---------------------------------------------------------------------------
# test functions and cylinders
# ---------------------------------------------------------------------------


def _radial(profile: str, r: np.ndarray):
    """Profile ``g(r)`` on ``[0, 1]`` with ``g'``, ``g''`` and ``g'(r)/r``."""
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    if profile == "bump":
        # fifth power keeps the Laplacian C^2 across r = 1, which the Gauss
        # rule needs to integrate it to ~1e-4 on the coarsest grids
        s = np.where(inside, 1.0 - r * r, 0.0)
        g = s**5
        g_over_r = -10.0 * s**4
        g1 = r * g_over_r
        g2 = np.where(inside, -10.0 * s**4 + 80.0 * r * r * s**3, 0.0)
        return g, g1, g2, g_over_r
    if profile == "plateau":
        q = np.clip(2.0 * r - 1.0, 0.0, 1.0)
        S = 35 * q**4 - 84 * q**5 + 70 * q**6 - 20 * q**7
        S1 = 140 * q**3 * (1 - q) ** 3
        S2 = 420 * q**2 * (1 - q) ** 3 - 420 * q**3 * (1 - q) ** 2
        g = 1.0 - S
        g1 = -2.0 * S1
        g2 = -4.0 * S2
        g_over_r = np.where(r > 0.5, g1 / np.maximum(r, 0.5), 0.0)
        return g, g1, g2, g_over_r
    raise InequalityError(f"unknown cut-off profile {profile!r}")


@dataclass(frozen=True)
class CutoffTest:
    """``phi(x, t) = g(|x - x0|/R) h((t - t0)/tau)`` with ``h(s) = (1 - s^2)^3``.

    ``profile="plateau"`` makes ``g = 1`` on the inner half radius.
    """

    x0: tuple[float, float]
    t0: float
    R: float
    tau: float
    profile: str = "bump"

    def __post_init__(self):
        if not (self.R > 0 and self.tau > 0):
            raise InequalityError("cut-off radius and time width must be positive")
        _radial(self.profile, 0.0)

    @property
    def t_support(self) -> tuple[float, float]:
        return self.t0 - self.tau, self.t0 + self.tau

    def check_support(self, L: float, T: float, margin: float = 0.0) -> None:
        x0, y0 = self.x0
        lo, hi = self.t_support
        inside = min(x0, y0, L - x0, L - y0) >= self.R + margin and lo >= 0.0 and hi <= T
        if not inside:
            raise InequalityError(f"cut-off support leaves Q_T: {self}")

    def temporal(self, t: float) -> tuple[float, float]:
        s = (t - self.t0) / self.tau
        if abs(s) >= 1.0:
            return 0.0, 0.0
        w = 1.0 - s * s
        return w**3, -6.0 * s * w * w / self.tau

    def spatial(self, X, Y):
        """``g``, its gradient ``(2, ...)`` and Laplacian at points."""
        dx = (np.asarray(X) - self.x0[0]) / self.R
        dy = (np.asarray(Y) - self.x0[1]) / self.R
        r = np.hypot(dx, dy)
        g, g1, g2, gr = _radial(self.profile, r)
        grad = np.stack([gr * dx, gr * dy]) / self.R
        lap = (g2 + gr) / self.R**2
        lap = np.where(r < 1.0, lap, 0.0)
        return g, grad, lap

    def evaluate(self, X, Y, t: float):
        """``phi``, ``grad phi``, ``d_t phi`` and ``Laplace phi`` at time ``t``."""
        h, dh = self.temporal(t)
        g, grad, lap = self.spatial(X, Y)
        return g * h, grad * h, g * dh, lap * h

    @property
    def bounds(self) -> dict[str, float]:
        """``C`` in ``|grad phi| <= C/R``, ``|d_t phi| <= C/R^2`` and ``sup|Laplace phi|``."""
        r = np.linspace(0.0, 1.0, 4001)
        s = np.linspace(-1.0, 1.0, 4001)
        _, g1, g2, gr = _radial(self.profile, r)
        h = (1 - s * s) ** 3
        dh = -6.0 * s * (1 - s * s) ** 2
        return {
            "C_grad": float(np.max(np.abs(g1))),
            "C_t": float(np.max(np.abs(dh))) * self.R**2 / self.tau,
            "sup_lap": float(np.max(np.abs(g2 + gr))) / self.R**2,
            "sup_h": float(h.max()),
        }


@dataclass(frozen=True)
class ParabolicCylinder:
    """``Q(z0, R) = B(x0, R) x ]t0 - R^2, t0[``."""

    x0: tuple[float, float]
    t0: float
    R: float

    def check(self, L: float, T: float) -> None:
        x0, y0 = self.x0
        R2 = 2.0 * self.R
        ok = self.R > 0 and min(x0, y0, L - x0, L - y0) > R2 and self.t0 - R2 * R2 > 0 and self.t0 <= T
        if not ok:
            raise InequalityError(f"Q(z0, 2R) is not compactly inside Q_T: {self}")

    def scaled(self, factor: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.x0, self.t0, factor * self.R)


def random_cutoffs(rng: np.random.Generator, n: int, L: float, T: float, profile: str = "bump",
                   R_range=(0.12, 0.3), margin: float = 0.02) -> list[CutoffTest]:
    out = []
    while len(out) < n:
        R = rng.uniform(*R_range) * L
        x0 = tuple(rng.uniform(R + margin, L - R - margin, size=2))
        tau = min(rng.uniform(1.0, 4.0) * R * R, 0.45 * T)
        t0 = rng.uniform(tau, T - tau)
        out.append(CutoffTest((float(x0[0]), float(x0[1])), float(t0), float(R), float(tau), profile))
    return out


def random_cylinders(rng: np.random.Generator, n: int, L: float, T: float,
                     R_range=(0.04, 0.1)) -> list[ParabolicCylinder]:
    out = []
    while len(out) < n:
        R = rng.uniform(*R_range) * L
        lo = 2 * R + 1e-3 * L
        if lo >= L - lo or 4 * R * R >= T:
            continue
        x0 = rng.uniform(lo, L - lo, size=2)
        t0 = rng.uniform(4 * R * R + 1e-3 * T, T)
        out.append(ParabolicCylinder((float(x0[0]), float(x0[1])), float(t0), float(R)))
    return out


def random_check_times(rng: np.random.Generator, cutoffs, traj: Trajectory) -> list[float]:
    """A stored time inside the upper half of each cut-off's time support."""
    times = []
    for phi in cutoffs:
        t = rng.uniform(phi.t0, phi.t_support[1])
        times.append(float(traj.times[traj.index_of(t)]))
    return times


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class InequalityReport:
    ident: str
    lhs: float
    rhs: float
    tolerance: float
    scale: float
    meta: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.rhs - self.lhs

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual >= -self.tolerance

    def row(self) -> dict:
        return {"id": self.ident, "lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
                "relative": self.relative, "tolerance": self.tolerance, "passed": int(self.passed),
                **{k: v for k, v in self.meta.items() if np.isscalar(v)}}


def _report(ident, lhs_terms, rhs_terms, rel_tol, meta, scale=None) -> InequalityReport:
    lhs = float(sum(lhs_terms))
    rhs = float(sum(rhs_terms))
    if scale is None:
        scale = float(sum(abs(v) for v in list(lhs_terms) + list(rhs_terms)))
    return InequalityReport(ident, lhs, rhs, rel_tol * scale, float(scale), meta)


# ---------------------------------------------------------------------------
# node fields per stored step
# ---------------------------------------------------------------------------


class _NodeFields:
    """Values at the Gauss nodes for one stored step, computed on demand."""

    def __init__(self, traj: Trajectory, m: int):
        self.traj = traj
        self.m = m
        self.t = float(traj.times[m])
        self.state = traj.state(m)

    def __getattr__(self, name):
        st = self.state
        sys = self.traj.system
        if name == "u":
            v = st.u_nodes
        elif name == "gu":
            v = st.grad_u
        elif name == "du2":
            v = sym_grad_sq(st.grad_u)
        elif name == "Du":
            v = st.Du
        elif name == "th":
            v = st.theta_nodes
        elif name == "gth":
            v = st.grad_theta
        elif name == "mu":
            v = sys.scenario.mu(st.theta_nodes)
        elif name == "p":
            x = sys.domain.nodes1d
            v = sys.solver.series(st.pressure).on_tensor(x, x)
        elif name == "Mu":
            x = sys.domain.nodes1d
            v = sys.convecting_field(st.c).on_tensor(x, x) if sys.scenario.convection else np.zeros_like(st.u_nodes)
        elif name == "f":
            X, Y = sys.domain.nodes
            v = sys.scenario.f(X, Y, self.t)
        else:
            raise AttributeError(name)
        self.__dict__[name] = v
        return v


def _trapezoid_weights(m_end: int, dt: float) -> np.ndarray:
    w = np.full(m_end + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    if m_end == 0:
        w[:] = 0.0
    return w


def _product_weights(phi: CutoffTest, times: np.ndarray, m_end: int) -> tuple[np.ndarray, np.ndarray]:
    """Step weights ``W`` with ``sum_m F_m W_m = int_0^t F h' dt`` (and ``h h'``)
    exactly when ``F`` is linear between stored steps.

    Used for the terms carrying the time derivative of the test function, so
    that a constant integrand telescopes to the end-point value exactly.
    """
    g, gw = np.polynomial.legendre.leggauss(5)
    s = 0.5 * (g + 1.0)
    w1 = np.zeros(m_end + 1)
    w2 = np.zeros(m_end + 1)
    for m in range(m_end):
        ta, tb = times[m], times[m + 1]
        if tb <= phi.t_support[0] or ta >= phi.t_support[1]:
            continue
        tq = ta + (tb - ta) * s
        hq = np.array([phi.temporal(t) for t in tq])
        wq = 0.5 * (tb - ta) * gw
        for col, target in ((hq[:, 1], w1), (hq[:, 0] * hq[:, 1], w2)):
            target[m] += np.dot(wq * (1 - s), col)
            target[m + 1] += np.dot(wq * s, col)
    return w1, w2


def _plan(traj: Trajectory, tests, times):
    """For each test: end index, trapezoid and product weights, active range."""
    s = traj.scenario
    plans = []
    for phi, t in zip(tests, times):
        phi.check_support(s.L, s.T)
        m_end = traj.index_of(t)
        lo, hi = phi.t_support
        m_lo = max(0, int(math.floor(lo / traj.dt)))
        m_hi = min(m_end, int(math.ceil(hi / traj.dt)))
        w1, w2 = _product_weights(phi, traj.times, m_end)
        plans.append((m_end, _trapezoid_weights(m_end, traj.dt), w1, w2, m_lo, m_hi))
    return plans


@dataclass
class _TestValues:
    """Test function at the nodes for one step: spatial factor ``g`` and
    temporal factor ``h``, plus the product-integration weights."""

    g: np.ndarray
    grad_g: np.ndarray
    lap_g: np.ndarray
    h: float
    w_dh: float  # weight multiplying g for int F d_t phi
    w_hdh: float  # weight multiplying g^2 for int F phi d_t phi

    @property
    def phi(self):
        return self.g * self.h

    @property
    def grad(self):
        return self.grad_g * self.h

    @property
    def lap(self):
        return self.lap_g * self.h


def _sweep(traj: Trajectory, tests, times, body):
    """Call ``body(i, nf, weight, at_end, values)`` for every test ``i`` and
    every stored step inside its support, each step evaluated once."""
    plans = _plan(traj, tests, times)
    dom = traj.system.domain
    X, Y = dom.nodes
    spatial = [phi.spatial(X, Y) for phi in tests]
    steps = sorted({m for p in plans for m in range(p[4], p[5] + 1)} | {p[0] for p in plans})
    for m in steps:
        nf = _NodeFields(traj, m)
        for i, (phi, (m_end, w, w1, w2, lo, hi)) in enumerate(zip(tests, plans)):
            if m > m_end or not (lo <= m <= hi or m == m_end):
                continue
            g, grad_g, lap_g = spatial[i]
            vals = _TestValues(g, grad_g, lap_g, phi.temporal(nf.t)[0], float(w1[m]), float(w2[m]))
            body(i, nf, float(w[m]), m == m_end, vals)


# ---------------------------------------------------------------------------
# local energy inequalities
# ---------------------------------------------------------------------------


def _convecting(nf, form: str):
    """Transport velocity at the nodes: ``u`` itself or its mollified part."""
    if form == "limit":
        return nf.u
    if form == "approx":
        return nf.Mu
    raise InequalityError(f"unknown form {form!r}")


class _Acc:
    """Per-test accumulators of signed terms and of absolute integrands."""

    def __init__(self, n_tests: int, names):
        self.names = list(names)
        self.val = np.zeros((n_tests, len(self.names)))
        self.abs = np.zeros(n_tests)

    def add(self, i, name, w, integrate, integrand):
        j = self.names.index(name)
        self.val[i, j] += w * integrate(integrand)
        self.abs[i] += abs(w) * integrate(np.abs(integrand))

    def meta(self, i) -> dict:
        return dict(zip(self.names, map(float, self.val[i])))


def check_e1_many(traj: Trajectory, tests, a_list, times, rel_tol: float = FROZEN_REL_TOL["e1"],
                  form: str = "limit") -> list[InequalityReport]:
    """Velocity local energy inequality for many cut-offs in one pass.

    LHS: ``int |u-a|^2/2 phi^2 (t) + int_{Q_t} mu |Du|^2 phi^2``.
    RHS: ``int_{Q_t} |u-a|^2 phi (d_t phi + u.grad phi) - 2 mu phi Du:((u-a) x grad phi)
    + 2 p phi (u-a).grad phi + f.(u-a) phi^2``.

    ``form="approx"`` transports with the mollified field and adds the
    compressibility work ``int p phi^2 div u`` of the regularized system.
    """
    integ = traj.system.domain.integrate
    acc = _Acc(len(tests), ["end", "dissipation", "mixed", "transport", "pressure", "forcing", "compress"])
    a_arr = [np.asarray(a, dtype=float).reshape(2, 1, 1) for a in a_list]

    def body(i, nf, w, at_end, vals):
        phi, gphi = vals.phi, vals.grad
        v = nf.u - a_arr[i]
        v2 = np.sum(v * v, axis=0)
        if at_end:
            acc.add(i, "end", 1.0, integ, 0.5 * v2 * phi**2)
        if vals.w_hdh:
            acc.add(i, "transport", vals.w_hdh, integ, v2 * vals.g**2)
        if w == 0.0:
            return
        b = _convecting(nf, form)
        mixed = np.einsum("ik...,i...,k...->...", nf.Du, v, gphi)
        acc.add(i, "dissipation", w, integ, nf.mu * nf.du2 * phi**2)
        acc.add(i, "mixed", w, integ, -2.0 * nf.mu * phi * mixed)
        acc.add(i, "transport", w, integ, v2 * phi * np.sum(b * gphi, axis=0))
        acc.add(i, "pressure", w, integ, 2.0 * nf.p * phi * np.sum(v * gphi, axis=0))
        acc.add(i, "forcing", w, integ, np.sum(nf.f * v, axis=0) * phi**2)
        if form == "approx":
            div = nf.gu[0, 0] + nf.gu[1, 1]
            acc.add(i, "compress", w, integ, nf.p * phi**2 * div)

    _sweep(traj, tests, times, body)
    out = []
    for i, (phi, a, t) in enumerate(zip(tests, a_list, times)):
        m = acc.meta(i)
        meta = {"t": t, "R": phi.R, "x0": phi.x0[0], "y0": phi.x0[1], "t0": phi.t0, "tau": phi.tau,
                "a": tuple(np.ravel(a)), "form": form, **m}
        lhs = [m["end"], m["dissipation"]]
        rhs = [m["mixed"], m["transport"], m["pressure"], m["forcing"], m["compress"]]
        out.append(_report("e1", lhs, rhs, rel_tol, meta, acc.abs[i]))
    return out


def check_e1(traj: Trajectory, phi: CutoffTest, a, t: float, rel_tol: float = FROZEN_REL_TOL["e1"],
             form: str = "limit") -> InequalityReport:
    return check_e1_many(traj, [phi], [a], [t], rel_tol, form)[0]


def local_mean(traj: Trajectory, phi: CutoffTest, t: float) -> np.ndarray:
    """``phi^2``-weighted mean of ``u`` at the stored time nearest ``t``."""
    st = traj.state(traj.index_of(t))
    X, Y = traj.system.domain.nodes
    w = phi.evaluate(X, Y, st.t)[0] ** 2
    if not np.any(w):
        w, _, _ = phi.spatial(X, Y)
        w = w**2
    dom = traj.system.domain
    mass = dom.integrate(w)
    return np.array([dom.integrate(w * st.u_nodes[0]), dom.integrate(w * st.u_nodes[1])]) / mass


def check_e2_many(traj: Trajectory, tests, zeta: float, times, rel_tol: float = FROZEN_REL_TOL["e2"],
                  form: str = "limit") -> list[InequalityReport]:
    """Inequality for ``sqrt(zeta + theta^2)``."""
    if not zeta > 0:
        raise InequalityError(f"zeta must be positive, got {zeta}")
    integ = traj.system.domain.integrate
    k = traj.scenario.k
    acc = _Acc(len(tests), ["end", "gradient", "transport", "joule"])

    def body(i, nf, w, at_end, vals):
        psi, gpsi, lap = vals.phi, vals.grad, vals.lap
        if np.min(psi) < 0:
            raise InequalityError("psi must be nonnegative")
        r = np.sqrt(zeta + nf.th**2)
        if at_end:
            acc.add(i, "end", 1.0, integ, r * psi)
        if vals.w_dh:
            acc.add(i, "transport", vals.w_dh, integ, r * vals.g)
        if w == 0.0:
            return
        b = _convecting(nf, form)
        g2 = np.sum(nf.gth**2, axis=0)
        acc.add(i, "gradient", w, integ, zeta * k * g2 * r**-3 * psi)
        acc.add(i, "transport", w, integ, r * k * lap)
        acc.add(i, "transport", w, integ, r * np.sum(b * gpsi, axis=0))
        acc.add(i, "joule", w, integ, nf.mu * nf.du2 * nf.th * psi / r)

    _sweep(traj, tests, times, body)
    out = []
    for i, (phi, t) in enumerate(zip(tests, times)):
        m = acc.meta(i)
        meta = {"t": t, "zeta": zeta, "R": phi.R, "t0": phi.t0, "form": form, **m}
        out.append(_report("e2", [m["end"], m["gradient"]], [m["transport"], m["joule"]], rel_tol, meta,
                           acc.abs[i]))
    return out


def check_e2(traj: Trajectory, psi: CutoffTest, zeta: float, t: float, rel_tol: float = FROZEN_REL_TOL["e2"],
             form: str = "limit") -> InequalityReport:
    return check_e2_many(traj, [psi], zeta, [t], rel_tol, form)[0]


def check_e3_many(traj: Trajectory, tests, xi: float, times, rel_tol: float = FROZEN_REL_TOL["e3"],
                  form: str = "limit", delta: float = 1e-8) -> list[InequalityReport]:
    """Inequality for ``(1 + theta)^(1 - xi)``."""
    if not 0.0 < xi < 1.0:
        raise InequalityError(f"xi must lie in (0, 1), got {xi}")
    integ = traj.system.domain.integrate
    k = traj.scenario.k
    acc = _Acc(len(tests), ["gradient", "joule", "end", "bulk"])

    def body(i, nf, w, at_end, vals):
        psi, gpsi, lap = vals.phi, vals.grad, vals.lap
        if np.min(psi) < 0:
            raise InequalityError("psi must be nonnegative")
        on = vals.g > 0
        if np.any(nf.th[on] <= -1.0 + delta):
            raise InequalityError("theta <= -1 on the support of psi")
        q = np.where(on, 1.0 + nf.th, 1.0)
        if at_end:
            acc.add(i, "end", 1.0, integ, q ** (1 - xi) * psi / (1 - xi))
        if vals.w_dh:
            acc.add(i, "bulk", vals.w_dh, integ, -(q ** (1 - xi)) / (1 - xi) * vals.g)
        if w == 0.0:
            return
        b = _convecting(nf, form)
        g2 = np.sum(nf.gth**2, axis=0)
        acc.add(i, "gradient", w, integ, xi * k * g2 * q ** (-xi - 1) * psi)
        acc.add(i, "joule", w, integ, nf.mu * nf.du2 * q**-xi * psi)
        qx = -(q ** (1 - xi)) / (1 - xi)
        acc.add(i, "bulk", w, integ, qx * k * lap)
        acc.add(i, "bulk", w, integ, qx * np.sum(b * gpsi, axis=0))

    _sweep(traj, tests, times, body)
    out = []
    for i, (phi, t) in enumerate(zip(tests, times)):
        m = acc.meta(i)
        meta = {"t": t, "xi": xi, "R": phi.R, "t0": phi.t0, "form": form, **m}
        out.append(_report("e3", [m["gradient"], m["joule"]], [m["end"], m["bulk"]], rel_tol, meta,
                           acc.abs[i]))
    return out


def check_e3(traj: Trajectory, psi: CutoffTest, xi: float, t: float, rel_tol: float = FROZEN_REL_TOL["e3"],
             form: str = "limit") -> InequalityReport:
    return check_e3_many(traj, [psi], xi, [t], rel_tol, form)[0]


def check_korn_many(traj: Trajectory, tests, rel_tol: float = 1e-12) -> list[InequalityReport]:
    """``int phi^2 |grad u|^2 <= 2 int phi^2 |Du|^2 + 4 int |grad phi|^2 |u|^2`` over ``Q_T``."""
    s = traj.scenario
    times = [s.T] * len(tests)
    dom = traj.system.domain
    terms = np.zeros((len(tests), 3))

    def body(i, nf, w, at_end, vals):
        phi, gphi = vals.phi, vals.grad
        if w == 0.0:
            return
        g2 = np.sum(nf.gu**2, axis=(0, 1))
        terms[i, 0] += w * dom.integrate(phi**2 * g2)
        terms[i, 1] += w * 2.0 * dom.integrate(phi**2 * np.sum(nf.Du**2, axis=(0, 1)))
        terms[i, 2] += w * 4.0 * dom.integrate(np.sum(gphi**2, axis=0) * np.sum(nf.u**2, axis=0))

    _sweep(traj, tests, times, body)
    return [_report("korn", terms[i, :1], terms[i, 1:], rel_tol, {"R": phi.R, "t0": phi.t0})
            for i, phi in enumerate(tests)]


def check_korn(traj: Trajectory, phi: CutoffTest, rel_tol: float = 1e-12) -> InequalityReport:
    return check_korn_many(traj, [phi], rel_tol)[0]


# ---------------------------------------------------------------------------
# cylinder integrals
# ---------------------------------------------------------------------------


def disc_rule(x0, R: float, n_r: int = 12, n_theta: int = 32):
    """Polar Gauss rule on ``B(x0, R)``: points ``(X, Y)`` and weights."""
    g, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * R * (g + 1.0)
    wr = 0.5 * R * w * r
    ang = 2 * np.pi * np.arange(n_theta) / n_theta
    X = x0[0] + np.outer(r, np.cos(ang))
    Y = x0[1] + np.outer(r, np.sin(ang))
    W = np.outer(wr, np.full(n_theta, 2 * np.pi / n_theta))
    return X.ravel(), Y.ravel(), W.ravel()


def time_rule(traj: Trajectory, t_lo: float, t_hi: float, order: int = 2):
    """Gauss points on every stored step intersecting ``[t_lo, t_hi]``."""
    g, w = np.polynomial.legendre.leggauss(order)
    edges = traj.times[(traj.times > t_lo) & (traj.times < t_hi)]
    edges = np.concatenate([[t_lo], edges, [t_hi]])
    a, b = edges[:-1], edges[1:]
    ts = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * g).ravel()
    ws = (0.5 * (b - a)[:, None] * w).ravel()
    return ts, ws


class _CylinderSampler:
    """Fields at scattered space-time points, coefficients linear in time."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self._pcoef: dict[int, np.ndarray] = {}

    def _pressure_coeffs(self, m: int) -> np.ndarray:
        if m not in self._pcoef:
            sys = self.traj.system
            self._pcoef[m] = sys.solver.cos_coeffs(sys.pressure(self.traj.c[m]))
        return self._pcoef[m]

    def _bracket(self, t: float):
        times = self.traj.times
        m = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
        lam = (t - times[m]) / (times[m + 1] - times[m])
        return m, float(np.clip(lam, 0.0, 1.0))

    def sample(self, X, Y, t: float, need_p: bool = True) -> dict:
        traj, sys = self.traj, self.traj.system
        if traj.nt == 1:
            m, lam = 0, 0.0
            c = traj.c[0]
        else:
            m, lam = self._bracket(t)
            c = (1 - lam) * traj.c[m] + lam * traj.c[m + 1]
        u = Field(sys.basis, c)
        out = {"u": u.on_points(X, Y), "gu": u.gradient_on_points(X, Y), "f": sys.scenario.f(X, Y, t)}
        if need_p:
            a = self._pressure_coeffs(m)
            if traj.nt > 1 and lam > 0:
                a = (1 - lam) * a + lam * self._pressure_coeffs(m + 1)
            n = a.shape[0]
            Cx, _ = cosine_table(sys.grid.L, n, X)
            Cy, _ = cosine_table(sys.grid.L, n, Y)
            out["p"] = np.einsum("pk,kl,pl->p", Cx, a, Cy, optimize=True)
        return out


def cylinder_integrals(traj: Trajectory, cyl: ParabolicCylinder, funcs: dict, sampler=None,
                       n_r: int = 12, n_theta: int = 32, t_order: int = 2) -> dict[str, float]:
    """``int_{Q(z0, R)} fn(sample)`` for each named function of the sampled fields."""
    sampler = sampler or _CylinderSampler(traj)
    X, Y, W = disc_rule(cyl.x0, cyl.R, n_r, n_theta)
    ts, wt = time_rule(traj, cyl.t0 - cyl.R**2, cyl.t0, t_order)
    totals = dict.fromkeys(funcs, 0.0)
    for t, w in zip(ts, wt):
        smp = sampler.sample(X, Y, float(t))
        for name, fn in funcs.items():
            totals[name] += w * float(np.dot(W, fn(smp)))
    return totals


def _mean(total: float, R: float, n: int = 2) -> float:
    omega = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    return total / (omega * R ** (n + 2))


def reverse_holder_terms(traj: Trajectory, cyl: ParabolicCylinder, sampler=None, **rule) -> dict[str, float]:
    """The mean values entering the reverse estimate on ``Q(z0, R)`` and ``Q(z0, 2R)``."""
    n = 2
    R = cyl.R
    big = cyl.scaled(2.0)
    grad2 = lambda s: np.sum(s["gu"] ** 2, axis=(0, 1))
    inner = cylinder_integrals(traj, cyl, {"g": grad2}, sampler, **rule)
    outer = cylinder_integrals(traj, big, {
        "g": grad2,
        "u2": lambda s: np.sum(s["u"] ** 2, axis=0),
        "u3": lambda s: np.sum(s["u"] ** 2, axis=0) ** 1.5,
        "f2": lambda s: np.sum(s["f"] ** 2, axis=0),
        "p": lambda s: np.abs(s["p"]) ** ((n + 2) / n),
    }, sampler, **rule)
    m = {k: _mean(v, 2 * R) for k, v in outer.items()}
    return {
        "grad_R": _mean(inner["g"], R),
        "grad_2R": m["g"],
        "u2": m["u2"] / R ** (n + 1),
        "u3": m["u3"] / R,
        "f2": m["f2"],
        "p": R * m["p"],
    }


@dataclass
class ReverseHolderReport:
    delta: float
    B: np.ndarray  # (B1, B2, B3); inf when no admissible constants exist
    terms: list[dict]
    slack: np.ndarray

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.B)))


def fit_constants(need: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Least-slack ``B >= 0`` with ``X @ B >= need`` row-wise.

    The objective (mean slack) is linear, so an optimum sits on a vertex of
    the feasible set; vertices are enumerated as triples of active
    constraints drawn from the rows and the coordinate planes.
    """
    need = np.asarray(need, dtype=float)
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if np.all(need <= 0):
        return np.zeros(d)
    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    A = np.vstack([Xs, np.eye(d)])
    b = np.concatenate([need, np.zeros(d)])
    cost = Xs.mean(axis=0)
    tol = 1e-10 * (1.0 + np.max(np.abs(need)))
    best, best_cost = None, np.inf
    for idx in combinations(range(A.shape[0]), d):
        sub = A[list(idx)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        B = np.linalg.solve(sub, b[list(idx)])
        if np.any(B < -1e-12) or np.any(Xs @ B < need - tol):
            continue
        val = float(cost @ B)
        if val < best_cost:
            best, best_cost = np.maximum(B, 0.0), val
    if best is None:
        return np.full(d, np.inf)
    return best / scale


def reverse_holder_probe(traj: Trajectory, cylinders, delta: float = 0.5, **rule) -> ReverseHolderReport:
    if not 0.0 <= delta < 1.0:
        raise InequalityError(f"delta must lie in [0, 1), got {delta}")
    s = traj.scenario
    for cyl in cylinders:
        cyl.check(s.L, s.T)
    sampler = _CylinderSampler(traj)
    terms = [reverse_holder_terms(traj, cyl, sampler, **rule) for cyl in cylinders]
    need = np.array([t["grad_R"] - delta * t["grad_2R"] - t["p"] for t in terms])
    X = np.array([[t["u2"], t["u3"], t["f2"]] for t in terms])
    B = fit_constants(need, X)
    slack = X @ B - need if np.all(np.isfinite(B)) else np.full(len(terms), -np.inf)
    return ReverseHolderReport(delta, B, terms, slack)


@dataclass
class HigherIntegrabilityReport:
    eps: float
    C: float
    per_cylinder: list[dict]


def higher_integrability_probe(traj: Trajectory, cylinders, eps: float, **rule) -> HigherIntegrabilityReport:
    """Both sides of the ``L^{2(1+eps)}`` gradient estimate and the implied constant."""
    n = 2
    s = traj.scenario
    bound = min((4 - n) / (3 * n), 1 / (n + 2), s.eps0)
    if not 0.0 < eps < bound:
        raise InequalityError(f"eps must lie in (0, {bound:g}), got {eps}")
    q = 2 * (1 + eps)
    qf = 2 * (1 + s.eps0)
    sampler = _CylinderSampler(traj)
    rows = []
    for cyl in cylinders:
        cyl.check(s.L, s.T)
        g = lambda smp: np.sqrt(np.sum(smp["gu"] ** 2, axis=(0, 1)))
        inner = cylinder_integrals(traj, cyl, {"g": lambda smp: g(smp) ** q}, sampler, **rule)
        outer = cylinder_integrals(traj, cyl.scaled(2.0), {
            "g": lambda smp: g(smp) ** 2,
            "u": lambda smp: np.sum(smp["u"] ** 2, axis=0) ** ((n + 2) / n),
            "f": lambda smp: np.sqrt(np.sum(smp["f"] ** 2, axis=0)) ** qf,
            "p": lambda smp: np.abs(smp["p"]) ** ((n + 2) / n),
        }, sampler, **rule)
        lhs = inner["g"] ** (1 / q)
        rhs = (outer["g"] ** 0.5 + outer["u"] ** (n / (2 * (n + 2))) + outer["f"] ** (1 / qf)
               + outer["p"] ** (n / (2 * (n + 2))))
        rows.append({"R": cyl.R, "lhs": lhs, "rhs": rhs, "C": lhs / rhs if rhs > 0 else 0.0})
    C = max((r["C"] for r in rows), default=0.0)
    return HigherIntegrabilityReport(eps, C, rows)


# ---------------------------------------------------------------------------
# pressure splitting
# ---------------------------------------------------------------------------


@dataclass
class PressureSplit:
    p1: np.ndarray  # (nt, n, n) convective part on the grid
    p2: np.ndarray  # (nt, n, n) remainder p - p1
    p2_dual: np.ndarray  # (nt, n, n) viscous/forcing part from its own dual problem
    norms: dict


def _cos_tables(sys, n):
    x = sys.domain.nodes1d
    C, dC = cosine_table(sys.grid.L, n, x)
    k = np.pi * np.arange(n) / sys.grid.L
    d2C = -(k**2) * C
    return C, dC, d2C


def _dual_coeffs(sys, T, C, dC, d2C) -> np.ndarray:
    """Cosine coefficients ``q_kl`` with ``lambda_kl ||phi_kl||^2 q_kl = <T, grad grad phi_kl>``
    for ``phi_kl = cos(k pi x) cos(l pi y)``; ``T`` is ``(2, 2, nq, nq)``."""
    W = sys.domain.weights
    n = C.shape[1]
    L = sys.grid.L
    # int T_ik d_i d_k phi
    s = (np.einsum("xy,xk,yl->kl", W * T[0, 0], d2C, C, optimize=True)
         + np.einsum("xy,xk,yl->kl", W * (T[0, 1] + T[1, 0]), dC, dC, optimize=True)
         + np.einsum("xy,xk,yl->kl", W * T[1, 1], C, d2C, optimize=True))
    norm = np.full(n, L / 2.0)
    norm[0] = L
    k = np.pi * np.arange(n) / L
    lam = k[:, None] ** 2 + k[None, :] ** 2
    lam[0, 0] = 1.0
    q = s / (lam * np.outer(norm, norm))
    q[0, 0] = 0.0
    return q


def pressure_split(traj: Trajectory, n_modes: int | None = None) -> PressureSplit:
    """Split ``p = p1 + p2`` with ``-<p1, Laplace phi> = <u x M(u), grad grad phi>``.

    ``p2`` is the remainder.  For comparison ``p2_dual`` solves its own dual
    problem ``<p2, Laplace phi> = <mu Du, grad grad phi> - <f, grad phi>``
    over the Neumann cosine modes.  Dual problems are solved mode by mode in
    the cosine eigenbasis with Gauss quadrature for the pairings.
    """
    sys = traj.system
    s = sys.scenario
    n = n_modes or sys.grid.n
    C, dC, d2C = _cos_tables(sys, n)
    x = sys.domain.nodes1d
    Cg = cosine_table(sys.grid.L, n, sys.grid.centers)[0]
    W = sys.domain.weights
    L = sys.grid.L
    norm = np.full(n, L / 2.0)
    norm[0] = L
    k = np.pi * np.arange(n) / L
    lam = k[:, None] ** 2 + k[None, :] ** 2
    lam[0, 0] = 1.0
    X, Y = sys.domain.nodes
    p1s, p2s, p2d = [], [], []
    for m in range(traj.nt):
        st = traj.state(m)
        if s.convection:
            Mv = sys.convecting_field(st.c).on_tensor(x, x)
            T1 = np.einsum("i...,k...->ik...", st.u_nodes, Mv)
            a1 = _dual_coeffs(sys, T1, C, dC, d2C)
        else:
            a1 = np.zeros((n, n))
        p1 = np.einsum("xk,kl,yl->xy", Cg, a1, Cg, optimize=True)
        p = st.pressure
        p1s.append(p1)
        p2s.append(p - p1)
        T2 = s.mu(st.theta_nodes) * st.Du
        a2 = -_dual_coeffs(sys, T2, C, dC, d2C)
        f = s.f(X, Y, st.t)
        fg = (np.einsum("xy,xk,yl->kl", W * f[0], dC, C, optimize=True)
              + np.einsum("xy,xk,yl->kl", W * f[1], C, dC, optimize=True))
        corr = fg / (lam * np.outer(norm, norm))
        corr[0, 0] = 0.0
        a2 = a2 + corr
        p2d.append(np.einsum("xk,kl,yl->xy", Cg, a2, Cg, optimize=True))
    p1s, p2s, p2d = np.asarray(p1s), np.asarray(p2s), np.asarray(p2d)
    grid = sys.grid
    w = _trapezoid_weights(traj.nt - 1, traj.dt)

    def st_norm(v, q=2.0):
        per = np.array([grid.integrate(np.abs(x) ** q) for x in v])
        return float(np.dot(w, per) ** (1 / q)) if traj.nt > 1 else float(per[0] ** (1 / q))

    p_all = np.asarray([traj.pressure(m) for m in range(traj.nt)])
    norms = {
        "p": st_norm(p_all),
        "p1": st_norm(p1s, 2.0),  # (n+2)/n = 2 for n = 2
        "p2": st_norm(p2s),
        "p2_dual": st_norm(p2d),
        "split_defect": st_norm(p1s + p2s - p_all),
        "dual_defect": st_norm(p1s + p2d - p_all),
    }
    return PressureSplit(p1s, p2s, p2d, norms)


# ---------------------------------------------------------------------------
# global estimates
# ---------------------------------------------------------------------------


def poincare_constant(L: float, mu_lower: float) -> float:
    """``C_P`` in the energy bound: ``2 / (lambda_1 mu_#)`` with ``lambda_1 = 2 pi^2 / L^2``."""
    return L * L / (math.pi**2 * mu_lower)


def _forcing_sq(traj: Trajectory) -> np.ndarray:
    dom = traj.system.domain
    X, Y = dom.nodes
    f = traj.scenario.f
    return np.array([dom.integrate(np.sum(f(X, Y, t) ** 2, axis=0)) for t in traj.times])


def energy_estimate(traj: Trajectory, rel_tol: float = 1e-8) -> InequalityReport:
    """``sup_m (||u^m||^2 + mu_# dt sum_{j<=m} ||Du^j||^2) <= ||u^0||^2 + C_P ||f||^2_{2,Q_T}``.

    Time sums use the right end point of each step, as the implicit scheme does.
    """
    s = traj.scenario
    led = traj.ledger
    u2 = 2.0 * np.asarray(led.kinetic)
    du2 = np.asarray(led.du_sq)
    dt = traj.dt
    running = u2 + s.mu.lower * dt * np.concatenate([[0.0], np.cumsum(du2[1:])])
    f2 = dt * float(np.sum(_forcing_sq(traj)[1:]))
    CP = poincare_constant(s.L, s.mu.lower)
    lhs = float(running.max())
    return _report("cotau", [lhs], [u2[0], CP * f2], rel_tol,
                   {"sup_u2": float(u2.max()), "dissipation": float(running[-1] - u2[-1]), "f2": f2, "C_P": CP})


def temperature_estimate(traj: Trajectory, abs_tol: float = 1e-6) -> InequalityReport:
    """``sup_m ||theta^m||_1 <= mu^# ||Du|^2||_{1,Q_T} + T ||theta_0||_1 + |Q_T|/2``."""
    s = traj.scenario
    led = traj.ledger
    dom = traj.system.domain
    X, Y = dom.nodes
    du2 = np.asarray(led.du_sq)
    joule = s.mu.upper * traj.dt * float(np.sum(du2[1:]))
    th0 = float(dom.integrate(np.abs(s.theta0(X, Y))))
    QT = dom.area * s.T
    lhs = float(np.max(led.theta_l1))
    rep = _report("cotaei", [lhs], [joule, s.T * th0, 0.5 * QT], 0.0,
                  {"joule": joule, "theta0_l1": th0, "QT": QT})
    rep.tolerance = abs_tol
    return rep


def minimum_principle(traj: Trajectory, rel_tol: float = 1e-4) -> InequalityReport:
    """``min theta >= -rel_tol * max theta`` over nodes and steps."""
    led = traj.ledger
    tmin = float(np.min(led.min_theta))
    tmax = float(np.max(led.max_theta))
    rep = _report("min_principle", [-tmin], [0.0], 0.0, {"min_theta": tmin, "max_theta": tmax})
    rep.scale = max(tmax, 0.0)
    rep.tolerance = rel_tol * rep.scale
    return rep
