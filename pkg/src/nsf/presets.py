"""Named data presets and the benchmark scenarios.

A preset is written in scenario files as its name followed by numeric
parameters, e.g. ``f = two_mode_decay 1.0``.
"""

from __future__ import annotations

import numpy as np

from .domain import DomainError, Preset, Scenario, ViscosityLaw, constant_viscosity, default_viscosity

PI = np.pi


# velocity from a stream function psi = B(x) B(y) P(x, y) with B = sin^2 -----


def _stream_velocity(L, terms):
    """Velocity ``(d_y psi, -d_x psi)`` for ``psi = sum amp * s_a(x)^2 s_b(y)^2
    cos(p pi x/L) cos(q pi y/L)`` over ``terms = [(amp, a, b, p, q), ...]``."""

    def u(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ux = np.zeros(np.broadcast(x, y).shape)
        uy = np.zeros_like(ux)
        for amp, a, b, p, q in terms:
            sx, sy = np.sin(a * PI * x / L), np.sin(b * PI * y / L)
            cx, cy = np.cos(a * PI * x / L), np.cos(b * PI * y / L)
            Bx, By = sx * sx, sy * sy
            dBx, dBy = 2 * sx * cx * a * PI / L, 2 * sy * cy * b * PI / L
            Px, Py = np.cos(p * PI * x / L), np.cos(q * PI * y / L)
            dPx, dPy = -p * PI / L * np.sin(p * PI * x / L), -q * PI / L * np.sin(q * PI * y / L)
            ux = ux + amp * Bx * Px * (dBy * Py + By * dPy)
            uy = uy - amp * By * Py * (dBx * Px + Bx * dPx)
        return np.stack([ux, uy])

    return u


def u0_preset(name: str, params: tuple, L: float) -> Preset:
    params = tuple(float(p) for p in params)
    if name == "zero":
        return Preset(name, (), lambda x, y: np.zeros((2,) + np.broadcast(x, y).shape))
    if name == "swirl2":
        (amp,) = params or (1.0,)
        terms = [(amp, 1, 1, 0, 0), (0.5 * amp, 2, 2, 0, 0)]
        return Preset(name, (amp,), _stream_velocity(L, terms))
    if name == "random":
        amp, seed = params
        rng = np.random.default_rng(int(seed))
        terms = [(amp * rng.uniform(-1, 1) / (1 + p + q), 1, 1, p, q) for p in range(3) for q in range(3)]
        return Preset(name, (amp, seed), _stream_velocity(L, terms))
    raise DomainError(f"unknown u0 preset {name!r}")


def theta0_preset(name: str, params: tuple, L: float) -> Preset:
    params = tuple(float(p) for p in params)
    if name == "zero":
        return Preset(name, (), lambda x, y: np.zeros(np.broadcast(x, y).shape))
    if name == "bump":
        amp, x0, y0, r0 = params if len(params) == 4 else (params[0] if params else 1.0, 0.5 * L, 0.5 * L, 0.3 * L)

        def bump(x, y):
            r2 = ((np.asarray(x) - x0) ** 2 + (np.asarray(y) - y0) ** 2) / r0**2
            out = np.zeros(np.shape(r2))
            inside = r2 < 1
            out[inside] = amp * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
            return out

        return Preset(name, (amp, x0, y0, r0), bump)
    if name == "sin11":
        (amp,) = params or (1.0,)
        return Preset(name, (amp,), lambda x, y: amp * np.sin(PI * np.asarray(x) / L) * np.sin(PI * np.asarray(y) / L))
    raise DomainError(f"unknown theta0 preset {name!r}")


def forcing_preset(name: str, params: tuple, L: float) -> Preset:
    params = tuple(float(p) for p in params)
    if name == "zero":
        return Preset(name, (), lambda x, y, t: np.zeros((2,) + np.broadcast(x, y).shape))
    if name == "two_mode_decay":
        (amp,) = params or (1.0,)

        def f(x, y, t):
            x = np.asarray(x) * PI / L
            y = np.asarray(y) * PI / L
            a = amp * np.exp(-2.0 * t)
            return a * np.stack([np.sin(x) * np.sin(2 * y), -np.sin(2 * x) * np.sin(y)])

        return Preset(name, (amp,), f)
    raise DomainError(f"unknown forcing preset {name!r}")


def viscosity_preset(name: str, params: tuple) -> ViscosityLaw:
    if name == "default":
        return default_viscosity()
    if name == "constant":
        return constant_viscosity(float(params[0]))
    raise DomainError(f"unknown viscosity preset {name!r}")


def benchmark_s1(N: int = 8, M: int = 8, dt: float = 1e-3, **overrides) -> Scenario:
    """Two-mode swirl, nonnegative bump temperature, decaying two-mode force."""
    L = 1.0
    s = Scenario(
        L=L,
        T=0.5,
        k=0.1,
        mu=default_viscosity(),
        f=forcing_preset("two_mode_decay", (4.0,), L),
        u0=u0_preset("swirl2", (1.0,), L),
        theta0=theta0_preset("bump", (1.0, 0.5, 0.5, 0.3), L),
        eps=1e-2,
        nu=0.05,
        N=N,
        M=M,
        dt=dt,
        seed=0,
        eps0=0.25,
    )
    return s.replace(**overrides) if overrides else s


def random_scenario(seed: int, N: int = 8, M: int = 8, dt: float = 1e-3) -> Scenario:
    rng = np.random.default_rng(seed)
    L = 1.0
    return Scenario(
        L=L,
        T=0.5,
        k=float(rng.uniform(0.05, 0.2)),
        mu=default_viscosity(),
        f=forcing_preset("two_mode_decay", (float(rng.uniform(0.0, 5.0)),), L),
        u0=u0_preset("random", (float(rng.uniform(0.5, 2.0)), seed), L),
        theta0=theta0_preset(
            "bump",
            (float(rng.uniform(0.2, 1.0)), float(rng.uniform(0.4, 0.6)), float(rng.uniform(0.4, 0.6)), 0.25),
            L,
        ),
        eps=1e-2,
        nu=0.05,
        N=N,
        M=M,
        dt=dt,
        seed=seed,
        eps0=0.25,
    )


def zero_scenario(N: int = 4, M: int = 4, T: float = 0.05, dt: float = 1e-2) -> Scenario:
    L = 1.0
    return Scenario(
        L=L,
        T=T,
        k=0.1,
        mu=default_viscosity(),
        f=forcing_preset("zero", (), L),
        u0=u0_preset("zero", (), L),
        theta0=theta0_preset("zero", (), L),
        eps=1e-2,
        nu=0.05,
        N=N,
        M=M,
        dt=dt,
    )
