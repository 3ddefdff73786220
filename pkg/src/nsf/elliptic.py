"""Neumann-Laplace solves on the auxiliary grid.

Grid functions are represented by cosine series ``sum a_kl cos(k pi x/L)
cos(l pi y/L)`` (``k, l = 0..n-1``), which sample exactly onto the cell
centres.  The Neumann Laplacian is diagonal in that basis, so a solve is two
dense 1D transforms per direction plus a diagonal scaling.  Vector fields use
the mixed series of the Helmholtz split: the x-component is sine in x and
cosine in y, the y-component the reverse, which makes the normal component
vanish on the boundary and the divergence a plain cosine series.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .domain import AuxGrid, BoundaryCutoff, Field, Mollifier, mollify_field, sine_table


class EllipticError(ArithmeticError):
    """Incompatible data or a failed solve."""


def cosine_table(L: float, n: int, x) -> tuple[np.ndarray, np.ndarray]:
    """``cos(k pi x/L)`` for ``k = 0..n-1`` and its x-derivative."""
    x = np.asarray(x, dtype=float)
    k = np.pi * np.arange(n) / L
    arg = np.multiply.outer(x, k)
    return np.cos(arg), -k * np.sin(arg)


def _sine0_table(L: float, n: int, x) -> tuple[np.ndarray, np.ndarray]:
    """``sin(k pi x/L)`` for ``k = 0..n-1`` (column 0 identically zero)."""
    x = np.asarray(x, dtype=float)
    k = np.pi * np.arange(n) / L
    arg = np.multiply.outer(x, k)
    return np.sin(arg), k * np.cos(arg)


def _apply(A: np.ndarray, F: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("xk,...kl,yl->...xy", A, F, B, optimize=True)


@dataclass(frozen=True)
class CosineSeries:
    """Scalar grid function with its cosine coefficients."""

    L: float
    coeffs: np.ndarray

    def at(self, x, y) -> np.ndarray:
        n = self.coeffs.shape[0]
        Cx, _ = cosine_table(self.L, n, np.ravel(x))
        Cy, _ = cosine_table(self.L, n, np.ravel(y))
        return np.einsum("pk,kl,pl->p", Cx, self.coeffs, Cy, optimize=True).reshape(np.shape(x))

    def on_tensor(self, x1d, y1d) -> np.ndarray:
        n = self.coeffs.shape[0]
        Cx, _ = cosine_table(self.L, n, x1d)
        Cy, _ = cosine_table(self.L, n, y1d)
        return _apply(Cx, self.coeffs, Cy)


@dataclass(frozen=True)
class HelmholtzField:
    """Divergence-free vector field: grid values plus the mixed series.

    ``a[k, l]`` multiplies ``sin(k pi x) cos(l pi y)`` (x-component) and
    ``b[k, l]`` multiplies ``cos(k pi x) sin(l pi y)`` (y-component).
    """

    L: float
    values: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def on_tensor(self, x1d, y1d) -> np.ndarray:
        n = self.a.shape[0]
        Sx, _ = _sine0_table(self.L, n, x1d)
        Cx, _ = cosine_table(self.L, n, x1d)
        Sy, _ = _sine0_table(self.L, n, y1d)
        Cy, _ = cosine_table(self.L, n, y1d)
        return np.stack([_apply(Sx, self.a, Cy), _apply(Cx, self.b, Sy)])

    def at(self, x, y) -> np.ndarray:
        n = self.a.shape[0]
        xr, yr = np.ravel(x), np.ravel(y)
        Sx, _ = _sine0_table(self.L, n, xr)
        Cx, _ = cosine_table(self.L, n, xr)
        Sy, _ = _sine0_table(self.L, n, yr)
        Cy, _ = cosine_table(self.L, n, yr)
        vx = np.einsum("pk,kl,pl->p", Sx, self.a, Cy, optimize=True)
        vy = np.einsum("pk,kl,pl->p", Cx, self.b, Sy, optimize=True)
        return np.stack([vx, vy]).reshape((2,) + np.shape(x))

    def divergence_coeffs(self) -> np.ndarray:
        n = self.a.shape[0]
        k = np.pi * np.arange(n) / self.L
        return self.a * k[:, None] + self.b * k[None, :]


class NeumannSolver:
    """``-Laplace`` with zero normal flux on the auxiliary grid.

    The factorization cache is the pair of 1D transform matrices and the
    eigenvalues; the nullspace is pinned by removing the constant mode.
    """

    def __init__(self, grid: AuxGrid):
        self.grid = grid
        n, L = grid.n, grid.L
        x = grid.centers
        self.C, _ = cosine_table(L, n, x)
        self.Cinv = np.linalg.inv(self.C)
        S, _ = _sine0_table(L, n + 1, x)
        # sine modes 1..n-1 only; the highest sampled mode is dropped
        self.S = S[:, 1:n]
        self.Sinv = np.linalg.pinv(S[:, 1:n + 1])[: n - 1]
        k = np.pi * np.arange(n) / L
        self.k = k
        lam = k[:, None] ** 2 + k[None, :] ** 2
        lam[0, 0] = 1.0
        self._inv_lam = 1.0 / lam
        self._inv_lam[0, 0] = 0.0
        self._lam = k[:, None] ** 2 + k[None, :] ** 2

    # transforms -----------------------------------------------------------
    def cos_coeffs(self, f: np.ndarray) -> np.ndarray:
        return _apply(self.Cinv, f, self.Cinv)

    def cos_values(self, a: np.ndarray) -> np.ndarray:
        return _apply(self.C, a, self.C)

    def series(self, f: np.ndarray) -> CosineSeries:
        return CosineSeries(self.grid.L, self.cos_coeffs(f))

    def vector_coeffs(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mixed-series coefficients of a vector grid function (2, n, n)."""
        n = self.grid.n
        a = np.zeros((n, n))
        b = np.zeros((n, n))
        a[1:] = _apply(self.Sinv, v[0], self.Cinv)
        b[:, 1:] = _apply(self.Cinv, v[1], self.Sinv)
        return a, b

    def vector_values(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.stack([_apply(self.S, a[1:], self.C), _apply(self.C, b[:, 1:], self.S)])

    # operators -------------------------------------------------------------
    def laplacian(self, p: np.ndarray) -> np.ndarray:
        return self.cos_values(-self._lam * self.cos_coeffs(p))

    def gradient_sq_integral(self, p: np.ndarray) -> float:
        """``int |grad p|^2`` of the cosine interpolant."""
        a = self.cos_coeffs(p)
        n = self.grid.n
        w = np.full(n, self.grid.L / 2.0)
        w[0] = self.grid.L
        return float(np.sum(self._lam * a * a * np.outer(w, w)))

    def h2_norm(self, p: np.ndarray) -> float:
        """``W^{2,2}`` norm of the cosine interpolant (value, gradient, Hessian)."""
        a = self.cos_coeffs(p)
        n = self.grid.n
        w = np.full(n, self.grid.L / 2.0)
        w[0] = self.grid.L
        k2 = self.k**2
        weight = 1.0 + self._lam + k2[:, None] ** 2 + 2 * np.outer(k2, k2) + k2[None, :] ** 2
        return float(np.sqrt(np.sum(weight * a * a * np.outer(w, w))))

    def solve(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        """Mean-zero ``p`` with ``Laplace p = rhs`` and zero normal flux."""
        rhs = np.asarray(rhs, dtype=float)
        if not np.all(np.isfinite(rhs)):
            raise EllipticError("non-finite right-hand side")
        if check:
            total = abs(self.grid.integrate(rhs))
            l1 = self.grid.integrate(np.abs(rhs))
            if total > 1e-8 * l1:
                raise EllipticError(f"incompatible right-hand side: integral {total:.3e} vs L1 {l1:.3e}")
        a = self.cos_coeffs(rhs)
        return self.cos_values(-a * self._inv_lam)


def solve_neumann(rhs: np.ndarray, solver: NeumannSolver) -> np.ndarray:
    return solver.solve(rhs)


def grid_divergence(u: Field, grid: AuxGrid) -> np.ndarray:
    """Exact divergence of a velocity field sampled at the grid centres."""
    S, dS = sine_table(u.basis.L, u.basis.N, grid.centers)
    c = u.coeffs
    return np.einsum("xj,jl,yl->xy", dS, c[0], S, optimize=True) + np.einsum(
        "xj,jl,yl->xy", S, c[1], dS, optimize=True
    )


def pressure_F_eps(u, eps: float, solver: NeumannSolver) -> np.ndarray:
    """``p`` with ``eps Laplace p = div u``, zero flux and zero mean.

    ``u`` is a velocity :class:`Field` or the grid divergence itself.
    """
    if not eps > 0:
        raise EllipticError(f"eps must be positive, got {eps}")
    div = grid_divergence(u, solver.grid) if isinstance(u, Field) else np.asarray(u, dtype=float)
    return solver.solve(div) / eps


def helmholtz_split(v: np.ndarray, solver: NeumannSolver) -> HelmholtzField:
    """Remove the gradient part of a vector grid function ``v`` vanishing near
    the boundary: ``v - grad h`` with ``Laplace h = div v``, zero flux."""
    a, b = solver.vector_coeffs(v)
    k = solver.k
    div = a * k[:, None] + b * k[None, :]
    hhat = -div * solver._inv_lam
    # grad of cos-cos mode: d/dx -> -k sin cos, d/dy -> -l cos sin
    a = a + hhat * k[:, None]
    b = b + hhat * k[None, :]
    a[0] = 0.0
    b[:, 0] = 0.0
    return HelmholtzField(solver.grid.L, solver.vector_values(a, b), a, b)


def helmholtz_mollify(u, mollifier: Mollifier, chi: BoundaryCutoff, solver: NeumannSolver) -> HelmholtzField:
    """Divergence-free part of ``(chi u) * omega``."""
    return helmholtz_split(mollify_field(u, mollifier, chi), solver)


def grid_div_spectral(values: np.ndarray, solver: NeumannSolver) -> np.ndarray:
    """Divergence of a vector grid function by re-transforming its values."""
    a, b = solver.vector_coeffs(values)
    k = solver.k
    return solver.cos_values(a * k[:, None] + b * k[None, :])


def eta_eps(p: np.ndarray, solver: NeumannSolver) -> tuple[np.ndarray, float]:
    """Solve ``Laplace eta = p - mean(p)`` with zero flux and zero mean.

    Returns ``eta`` and the ratio ``||eta||_{2,2} / ||p||_2``.
    """
    p = np.asarray(p, dtype=float)
    rhs = p - np.mean(p)
    eta = solver.solve(rhs, check=False)
    pn = solver.grid.norm(p)
    ratio = solver.h2_norm(eta) / pn if pn > 0 else 0.0
    return eta, ratio
