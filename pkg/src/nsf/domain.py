"""Square domain, quadrature, sine bases, fields, mollifier and scenario types.

All fields live on the square ``[0, L]^2``.  Arrays sampled on a tensor grid
are indexed ``[ix, iy]``; coefficient arrays are indexed ``[j, l]`` for the
mode ``sin(j pi x / L) sin(l pi y / L)`` with ``j, l = 1..N``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate

logger = logging.getLogger(__name__)


class DomainError(ValueError):
    """Invalid geometry, discretization or data."""


# ---------------------------------------------------------------------------
# geometry and quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain2D:
    """Square ``[0, L]^2`` with a tensor Gauss-Legendre rule on uniform cells."""

    L: float
    order: int
    n_cells: int
    nodes1d: np.ndarray = field(repr=False)
    weights1d: np.ndarray = field(repr=False)

    @property
    def exactness(self) -> int:
        """Polynomial degree integrated exactly on each cell, per direction."""
        return 2 * self.order - 1

    @property
    def nq(self) -> int:
        return self.nodes1d.size

    @cached_property
    def weights(self) -> np.ndarray:
        return np.outer(self.weights1d, self.weights1d)

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.nodes1d, self.nodes1d, indexing="ij"))

    @property
    def area(self) -> float:
        return self.L * self.L

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate node values over the square; leading axes are kept."""
        return np.tensordot(values, self.weights, axes=([-2, -1], [0, 1]))

    def dist(self, x, y):
        """Distance to the boundary of the square."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.minimum(np.minimum(x, self.L - x), np.minimum(y, self.L - y))

    def boundary_points(self, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
        s = np.linspace(0.0, self.L, n)
        z = np.zeros_like(s)
        full = np.full_like(s, self.L)
        return np.concatenate([s, s, z, full]), np.concatenate([z, full, s, s])


def gauss_rule(L: float, order: int, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on ``[0, L]``."""
    xi, wi = np.polynomial.legendre.leggauss(order)
    h = L / n_cells
    left = h * np.arange(n_cells)
    nodes = (left[:, None] + 0.5 * h * (xi[None, :] + 1.0)).ravel()
    weights = np.tile(0.5 * h * wi, n_cells)
    return nodes, weights


def build_domain(L: float = 1.0, quad_order: int = 8, n_cells: int = 8) -> Domain2D:
    if not L > 0:
        raise DomainError(f"side length must be positive, got {L}")
    if quad_order < 2:
        raise DomainError(f"quadrature order must be >= 2, got {quad_order}")
    if n_cells < 1:
        raise DomainError(f"need at least one cell, got {n_cells}")
    nodes, weights = gauss_rule(L, quad_order, n_cells)
    return Domain2D(float(L), int(quad_order), int(n_cells), nodes, weights)


# ---------------------------------------------------------------------------
# sine bases and fields
# ---------------------------------------------------------------------------


def sine_table(L: float, n_modes: int, x) -> tuple[np.ndarray, np.ndarray]:
    """``sin(j pi x/L)`` and its x-derivative for ``j = 1..n_modes``."""
    x = np.asarray(x, dtype=float)
    k = np.pi * np.arange(1, n_modes + 1) / L
    arg = np.multiply.outer(x, k)
    return np.sin(arg), k * np.cos(arg)


@dataclass(frozen=True)
class Basis:
    """Tensor-product sine bases: ``N x N`` modes per velocity component and
    ``M x M`` temperature modes, tabulated at the quadrature nodes."""

    domain: Domain2D
    N: int
    M: int

    @property
    def L(self) -> float:
        return self.domain.L

    @cached_property
    def velocity_tables(self) -> tuple[np.ndarray, np.ndarray]:
        return sine_table(self.L, self.N, self.domain.nodes1d)

    @cached_property
    def temperature_tables(self) -> tuple[np.ndarray, np.ndarray]:
        return sine_table(self.L, self.M, self.domain.nodes1d)

    @property
    def mode_mass(self) -> float:
        """``int sin^2 sin^2`` of one mode, identical for every mode."""
        return (self.L / 2.0) ** 2

    def mode_numbers(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        j = np.arange(1, n + 1)
        return np.meshgrid(j, j, indexing="ij")

    def stiffness_ratio(self, n: int) -> np.ndarray:
        """Eigenvalue ``(pi/L)^2 (j^2 + l^2)`` of ``-Laplace`` per mode."""
        j, l = self.mode_numbers(n)
        return (np.pi / self.L) ** 2 * (j**2 + l**2)

    def mass_matrix(self, kind: str = "temperature") -> np.ndarray:
        """Mass matrix assembled by quadrature (diagonal up to round-off)."""
        S, _ = self.temperature_tables if kind == "temperature" else self.velocity_tables
        w = self.domain.weights1d
        m1 = S.T @ (w[:, None] * S)
        n = S.shape[1]
        return np.einsum("jJ,lL->jlJL", m1, m1).reshape(n * n, n * n)

    def scalar(self, coeffs) -> "Field":
        return Field(self, np.asarray(coeffs, dtype=float).reshape(self.M, self.M))

    def vector(self, coeffs) -> "Field":
        return Field(self, np.asarray(coeffs, dtype=float).reshape(2, self.N, self.N))


def build_basis(domain: Domain2D, N: int, M: int) -> Basis:
    if N < 1 or M < 1:
        raise DomainError(f"N and M must be >= 1, got N={N}, M={M}")
    # a product of two modes of index n oscillates like mode 2n; keep >= 2
    # nodes per half-wave of that product
    limit = domain.nq // 4
    if max(N, M) > limit:
        raise DomainError(
            f"max(N, M)={max(N, M)} exceeds the quadrature resolution limit {limit}; "
            "increase quad_order or n_cells"
        )
    return Basis(domain, int(N), int(M))


def _eval2(X: np.ndarray, C: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # X: (nx, n) table, C: (..., n, n), Y: (ny, n) table -> (..., nx, ny)
    return np.einsum("xj,...jl,yl->...xy", X, C, Y, optimize=True)


@dataclass(frozen=True)
class Field:
    """Coefficients over a :class:`Basis`.  A ``(2, N, N)`` array is a velocity
    field, an ``(M, M)`` array a temperature field."""

    basis: Basis
    coeffs: np.ndarray

    def __post_init__(self):
        c = self.coeffs
        if c.ndim == 3:
            if c.shape != (2, self.basis.N, self.basis.N):
                raise DomainError(f"vector coefficients have shape {c.shape}")
        elif c.shape != (self.basis.M, self.basis.M):
            raise DomainError(f"scalar coefficients have shape {c.shape}")

    @property
    def is_vector(self) -> bool:
        return self.coeffs.ndim == 3

    def _tables(self):
        b = self.basis
        return b.velocity_tables if self.is_vector else b.temperature_tables

    def value(self) -> np.ndarray:
        S, _ = self._tables()
        return _eval2(S, self.coeffs, S)

    def gradient(self) -> np.ndarray:
        """Stacked ``(d/dx, d/dy)`` of the field: axis 0 is the derivative
        direction, so for vectors ``g[i, k] = d_i u_k``."""
        S, dS = self._tables()
        return np.stack([_eval2(dS, self.coeffs, S), _eval2(S, self.coeffs, dS)])

    def sym_gradient(self) -> np.ndarray:
        if not self.is_vector:
            raise DomainError("symmetric gradient of a scalar field")
        g = self.gradient()
        return 0.5 * (g + g.transpose(1, 0, 2, 3))

    def divergence(self) -> np.ndarray:
        if not self.is_vector:
            raise DomainError("divergence of a scalar field")
        g = self.gradient()
        return g[0, 0] + g[1, 1]

    def on_points(self, x, y) -> np.ndarray:
        """Values at scattered points (flattened input shape kept)."""
        n = self.coeffs.shape[-1]
        Sx, _ = sine_table(self.basis.L, n, np.ravel(x))
        Sy, _ = sine_table(self.basis.L, n, np.ravel(y))
        vals = np.einsum("pj,...jl,pl->...p", Sx, self.coeffs, Sy, optimize=True)
        return vals.reshape(self.coeffs.shape[:-2] + np.shape(x))

    def gradient_on_points(self, x, y) -> np.ndarray:
        """Gradient at scattered points, axis 0 the derivative direction."""
        n = self.coeffs.shape[-1]
        Sx, dSx = sine_table(self.basis.L, n, np.ravel(x))
        Sy, dSy = sine_table(self.basis.L, n, np.ravel(y))
        gx = np.einsum("pj,...jl,pl->...p", dSx, self.coeffs, Sy, optimize=True)
        gy = np.einsum("pj,...jl,pl->...p", Sx, self.coeffs, dSy, optimize=True)
        return np.stack([gx, gy]).reshape((2,) + self.coeffs.shape[:-2] + np.shape(x))

    def on_tensor(self, x1d, y1d) -> np.ndarray:
        n = self.coeffs.shape[-1]
        Sx, _ = sine_table(self.basis.L, n, x1d)
        Sy, _ = sine_table(self.basis.L, n, y1d)
        return _eval2(Sx, self.coeffs, Sy)

    def __add__(self, other: "Field") -> "Field":
        return Field(self.basis, self.coeffs + other.coeffs)

    def __rmul__(self, alpha: float) -> "Field":
        return Field(self.basis, alpha * self.coeffs)


# ---------------------------------------------------------------------------
# physical laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ViscosityLaw:
    lower: float
    upper: float
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    name: str = "default"
    params: tuple = ()

    def __post_init__(self):
        if not (0 < self.lower <= self.upper):
            raise DomainError(f"need 0 < mu_lower <= mu_upper, got {self.lower}, {self.upper}")

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float))

    def check_bounds(self, samples) -> bool:
        v = self(samples)
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))


def default_viscosity() -> ViscosityLaw:
    return ViscosityLaw(1.0, 2.0, lambda s: 1.0 + 1.0 / (1.0 + s * s), "default")


def constant_viscosity(mu: float) -> ViscosityLaw:
    mu = float(mu)
    return ViscosityLaw(mu, mu, lambda s: np.full(np.shape(s), mu), "constant", (mu,))


# ---------------------------------------------------------------------------
# auxiliary grid, mollifier, cutoff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuxGrid:
    """Uniform cell-centred ``n x n`` grid on the square."""

    L: float
    n: int

    @property
    def h(self) -> float:
        return self.L / self.n

    @cached_property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.centers, self.centers, indexing="ij"))

    def integrate(self, values) -> np.ndarray:
        return self.h**2 * np.sum(values, axis=(-2, -1))

    def norm(self, values) -> float:
        """Discrete L2 norm (summed over any leading component axes)."""
        return float(np.sqrt(self.h**2 * np.sum(np.asarray(values) ** 2)))


def grid_size(L: float, nu: float, n_modes: int, minimum: int = 32) -> int:
    """Cells per direction: at least 8 samples across the kernel support and
    twice the largest basis mode."""
    n = max(minimum, math.ceil(4.0 * L / nu), 2 * n_modes + 2)
    return n + (n % 2)


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


_BUMP_MASS = 2.0 * np.pi * integrate.quad(lambda s: float(_bump(s)) * s, 0.0, 1.0, epsabs=1e-15, epsrel=1e-14)[0]


@dataclass(frozen=True)
class Mollifier:
    """Radial bump ``omega`` supported in the ball of radius ``nu`` and its
    discrete stencil on the auxiliary grid."""

    nu: float
    grid: AuxGrid

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError(f"mollifier radius must be positive, got {self.nu}")

    def kernel(self, r) -> np.ndarray:
        return _bump(np.asarray(r, dtype=float) / self.nu) / (_BUMP_MASS * self.nu**2)

    def total_mass(self) -> float:
        val, _ = integrate.quad(lambda r: 2 * np.pi * r * float(self.kernel(r)), 0.0, self.nu, epsabs=1e-14, epsrel=1e-13)
        return val

    def offsets(self, spacing: float) -> tuple[np.ndarray, np.ndarray]:
        """Stencil offsets (m, 2) and normalized weights for a given spacing."""
        m = int(math.ceil(self.nu / spacing))
        a = np.arange(-m, m + 1)
        ox, oy = np.meshgrid(a, a, indexing="ij")
        r = spacing * np.hypot(ox, oy)
        w = self.kernel(r)
        keep = w > 0
        w = w[keep]
        if w.size == 0:
            return np.zeros((1, 2)), np.ones(1)
        return spacing * np.stack([ox[keep], oy[keep]], axis=1), w / w.sum()

    @cached_property
    def stencil(self) -> np.ndarray:
        """Square weight array on the grid spacing, summing to one."""
        h = self.grid.h
        m = int(math.ceil(self.nu / h))
        a = np.arange(-m, m + 1)
        ox, oy = np.meshgrid(a, a, indexing="ij")
        w = self.kernel(h * np.hypot(ox, oy))
        if w.sum() == 0:
            w[m, m] = 1.0
        return w / w.sum()


@dataclass(frozen=True)
class BoundaryCutoff:
    """``chi = 0`` within distance ``2 nu`` of the boundary, ``1`` elsewhere."""

    nu: float
    L: float

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = np.minimum(np.minimum(x, self.L - x), np.minimum(y, self.L - y))
        return np.where(d <= 2.0 * self.nu, 0.0, 1.0)


def mollify_points(fn: Callable, mollifier: Mollifier, L: float, x, y, samples: int = 8) -> np.ndarray:
    """``(f 1_Omega) * omega`` at scattered points by a local stencil with
    ``samples`` points per kernel radius."""
    off, w = mollifier.offsets(mollifier.nu / samples)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(x.shape)
    for (dx, dy), wk in zip(off, w):
        px, py = x - dx, y - dy
        inside = (px > 0) & (px < L) & (py > 0) & (py < L)
        vals = np.where(inside, fn(np.clip(px, 0, L), np.clip(py, 0, L)), 0.0)
        out += wk * vals
    return out


def mollify_field(u, mollifier: Mollifier, chi: BoundaryCutoff) -> np.ndarray:
    """``(chi u) * omega`` sampled on the mollifier's auxiliary grid.

    ``u`` is a velocity :class:`Field` or grid values of shape ``(2, n, n)``.
    """
    grid = mollifier.grid
    if mollifier.nu >= grid.L / 4:
        raise DomainError(f"nu={mollifier.nu} >= L/4 leaves no interior after the cutoff")
    if isinstance(u, Field):
        vals = u.on_tensor(grid.centers, grid.centers)
    else:
        vals = np.asarray(u, dtype=float)
    X, Y = grid.mesh
    cut = vals * chi(X, Y)
    from scipy import ndimage

    return np.stack([ndimage.correlate(c, mollifier.stencil, mode="constant", cval=0.0) for c in cut])


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    """Named data: ``fn`` is the evaluator, ``name``/``params`` serialize it."""

    name: str
    params: tuple
    fn: Callable = field(compare=False, repr=False)

    def __call__(self, *args):
        return self.fn(*args)


@dataclass(frozen=True)
class Scenario:
    L: float
    T: float
    k: float
    mu: ViscosityLaw
    f: Preset  # f(x, y, t) -> (2, ...) array
    u0: Preset  # u0(x, y) -> (2, ...) array
    theta0: Preset  # theta0(x, y) -> array
    eps: float
    nu: float
    N: int
    M: int
    dt: float
    seed: int = 0
    eps0: float = 0.25
    convection: bool = True
    heat_source: Preset | None = None  # g(x, y, t), manufactured cases only
    quad_order: int = 8
    n_cells: int | None = None

    def cells(self) -> int:
        if self.n_cells is not None:
            return self.n_cells
        return max(8, max(self.N, self.M))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def replace(self, **kw) -> "Scenario":
        from dataclasses import replace

        return replace(self, **kw)

    def validate(self) -> "Scenario":
        problems = []
        for name in ("L", "T", "k", "eps", "nu", "dt", "eps0"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.N < 1 or self.M < 1:
            problems.append("N and M must be >= 1")
        if self.nu >= self.L / 4:
            problems.append("nu must be below L/4")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * self.T:
            problems.append("T must be an integer multiple of dt")
        if problems:
            raise DomainError("; ".join(problems))
        dom = build_domain(self.L, self.quad_order, self.cells())
        X, Y = dom.nodes
        if np.min(self.theta0(X, Y)) < 0:
            raise DomainError("theta0 must be nonnegative")
        # divergence of u0 by central differences at interior nodes
        hfd = 1e-5 * self.L
        inner = dom.dist(X, Y) > 2 * hfd
        xs, ys = X[inner], Y[inner]
        div = (self.u0(xs + hfd, ys)[0] - self.u0(xs - hfd, ys)[0]) / (2 * hfd) + (
            self.u0(xs, ys + hfd)[1] - self.u0(xs, ys - hfd)[1]
        ) / (2 * hfd)
        grad_scale = np.max(np.abs(self.u0(xs + hfd, ys) - self.u0(xs - hfd, ys))) / (2 * hfd) + 1e-300
        if np.max(np.abs(div)) > 1e-5 * grad_scale:
            raise DomainError("u0 must be divergence free")
        return self
