"""Heterogeneous Helmholtz problem -div(kappa grad u) + eta^2 u = f on
[-pi, pi]^2 with u = 0 on the boundary.

kappa and eta are 1 + a Gaussian bump each; the six bump parameters are the
trainable quantities. The discretization is a flux-form 5-point stencil with
arithmetic face averages of kappa, so the operator is linear in the nodal
arrays (kappa, eta^2). That linearity is what makes dA/dlambda cheap: it is
the same stencil applied with the parameter-derivative arrays.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core import DIRICHLET_ZERO, Grid2D, ScalarField

AMPLITUDE_FLOOR = -0.99
SOLVE_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class HelmholtzParams:
    alpha1: float = 4.0
    c1x: float = -1.0
    c1y: float = -1.0
    alpha2: float = 1.0
    c2x: float = 2.0
    c2y: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(astuple(self))):
            raise ValueError("Helmholtz parameters must be finite")

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "HelmholtzParams":
        return cls(*map(float, np.asarray(a, dtype=np.float64).ravel()))

    def projected(self) -> "HelmholtzParams":
        """Clamp both amplitudes to >= -0.99 so kappa and eta stay positive."""
        a = self.to_array()
        a[[0, 3]] = np.maximum(a[[0, 3]], AMPLITUDE_FLOOR)
        return HelmholtzParams.from_array(a)


TRUE_PARAMS = HelmholtzParams()
PARAM_NAMES = ("alpha1", "c1x", "c1y", "alpha2", "c2x", "c2y")


def helmholtz_grid(n: int) -> Grid2D:
    return Grid2D(n, n, -np.pi, np.pi, -np.pi, np.pi, DIRICHLET_ZERO)


def gaussian_bump(x, y, amplitude, cx, cy):
    return amplitude * np.exp(-(x - cx) ** 2 - (y - cy) ** 2)


def gaussian_bump_partials(x, y, amplitude, cx, cy):
    """d/d(amplitude, cx, cy) of the bump, stacked on a leading axis."""
    e = np.exp(-(x - cx) ** 2 - (y - cy) ** 2)
    return np.stack([e, 2.0 * amplitude * (x - cx) * e, 2.0 * amplitude * (y - cy) * e])


def coefficients(params: HelmholtzParams, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Nodal kappa and eta."""
    X, Y = grid.meshgrid()
    kappa = 1.0 + gaussian_bump(X, Y, params.alpha1, params.c1x, params.c1y)
    eta = 1.0 + gaussian_bump(X, Y, params.alpha2, params.c2x, params.c2y)
    return kappa, eta


def coefficient_partials(params: HelmholtzParams, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """``(6, ny, nx)`` derivatives of kappa and of eta^2 in the six parameters."""
    X, Y = grid.meshgrid()
    dk = np.zeros((6, *grid.shape))
    de2 = np.zeros((6, *grid.shape))
    dk[:3] = gaussian_bump_partials(X, Y, params.alpha1, params.c1x, params.c1y)
    eta = 1.0 + gaussian_bump(X, Y, params.alpha2, params.c2x, params.c2y)
    de2[3:] = 2.0 * eta * gaussian_bump_partials(X, Y, params.alpha2, params.c2x, params.c2y)
    return dk, de2


def apply_operator(kappa: np.ndarray, eta2: np.ndarray, u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Matrix-free stencil on node arrays; returns the interior rows.

    ``u`` is a full ``(ny, nx)`` node array whose boundary entries are taken
    as given (zero for admissible states).
    """
    ke = 0.5 * (kappa[1:-1, 1:-1] + kappa[1:-1, 2:])
    kw = 0.5 * (kappa[1:-1, 1:-1] + kappa[1:-1, :-2])
    kn = 0.5 * (kappa[1:-1, 1:-1] + kappa[2:, 1:-1])
    ks = 0.5 * (kappa[1:-1, 1:-1] + kappa[:-2, 1:-1])
    uc = u[1:-1, 1:-1]
    return (
        (ke * (uc - u[1:-1, 2:]) + kw * (uc - u[1:-1, :-2])) / hx ** 2
        + (kn * (uc - u[2:, 1:-1]) + ks * (uc - u[:-2, 1:-1])) / hy ** 2
        + eta2[1:-1, 1:-1] * uc
    )


def _assemble_matrix(kappa: np.ndarray, eta2: np.ndarray, hx: float, hy: float) -> sp.csc_matrix:
    ny, nx = kappa.shape
    mx, my = nx - 2, ny - 2
    ke = 0.5 * (kappa[1:-1, 1:-1] + kappa[1:-1, 2:]) / hx ** 2
    kw = 0.5 * (kappa[1:-1, 1:-1] + kappa[1:-1, :-2]) / hx ** 2
    kn = 0.5 * (kappa[1:-1, 1:-1] + kappa[2:, 1:-1]) / hy ** 2
    ks = 0.5 * (kappa[1:-1, 1:-1] + kappa[:-2, 1:-1]) / hy ** 2
    diag = (ke + kw + kn + ks + eta2[1:-1, 1:-1]).ravel()
    idx = np.arange(mx * my).reshape(my, mx)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag]
    # east/west couplings share a face coefficient, so the matrix is symmetric
    rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals += [-ke[:, :-1].ravel(), -ke[:, :-1].ravel()]
    rows += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
    cols += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
    vals += [-kn[:-1, :].ravel(), -kn[:-1, :].ravel()]
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(mx * my,) * 2)
    return A.tocsc()


@dataclass(frozen=True, eq=False)
class HelmholtzSystem:
    grid: Grid2D
    params: HelmholtzParams
    kappa: np.ndarray
    eta: np.ndarray
    matrix: sp.csc_matrix
    rhs: np.ndarray

    @cached_property
    def lu(self):
        return spla.splu(self.matrix)

    def interior_shape(self) -> tuple[int, int]:
        return (self.grid.ny - 2, self.grid.nx - 2)


def helmholtz_assemble(params: HelmholtzParams, grid: Grid2D, f: ScalarField) -> HelmholtzSystem:
    if grid.periodic:
        raise ValueError("Helmholtz problem needs a Dirichlet grid")
    kappa, eta = coefficients(params, grid)
    if np.any(kappa <= 0):
        raise ValueError("kappa must be positive on the whole grid")
    A = _assemble_matrix(kappa, eta * eta, grid.hx, grid.hy)
    rhs = np.array(f.values[1:-1, 1:-1]).ravel()
    return HelmholtzSystem(grid, params, kappa, eta, A, rhs)


def _checked_solve(system: HelmholtzSystem, b: np.ndarray, trans: str = "N") -> np.ndarray:
    x = system.lu.solve(b, trans=trans)
    M = system.matrix if trans == "N" else system.matrix.T
    bn = np.linalg.norm(b)
    res = np.linalg.norm(M @ x - b)
    if not np.all(np.isfinite(x)) or (bn > 0 and res > SOLVE_RTOL * bn):
        raise SolverError(f"linear solve residual {res / max(bn, 1e-300):.3e} exceeds {SOLVE_RTOL}")
    return x


def helmholtz_solve(system: HelmholtzSystem) -> ScalarField:
    """Sparse LU solve; the relative residual is checked against 1e-10."""
    u = np.zeros(system.grid.shape)
    u[1:-1, 1:-1] = _checked_solve(system, system.rhs).reshape(system.interior_shape())
    return ScalarField(system.grid, u)


def helmholtz_grad_adjoint(system: HelmholtzSystem, u: ScalarField, dloss_du: np.ndarray,
                           transpose: bool = True) -> np.ndarray:
    """Gradient of a loss L(u) in the six parameters via one adjoint solve.

    ``dloss_du`` is dL/du on the full node array; boundary entries are ignored
    because u is pinned there. ``transpose=False`` reuses the forward solve,
    which is valid because the matrix is symmetric.
    """
    g = np.asarray(dloss_du, dtype=np.float64).reshape(system.grid.shape)
    b = np.array(g[1:-1, 1:-1]).ravel()
    if not np.any(b):
        return np.zeros(6)
    w = np.zeros(system.grid.shape)
    w[1:-1, 1:-1] = _checked_solve(system, b, "T" if transpose else "N").reshape(system.interior_shape())
    dk, de2 = coefficient_partials(system.params, system.grid)
    hx, hy = system.grid.hx, system.grid.hy
    grad = np.empty(6)
    for p in range(6):
        grad[p] = -np.sum(w[1:-1, 1:-1] * apply_operator(dk[p], de2[p], u.values, hx, hy))
    return grad


def reference_solution(grid: Grid2D) -> ScalarField:
    """u(x, y) = sin x sin y on the nodes (zero on the boundary up to round-off)."""
    X, Y = grid.meshgrid()
    u = np.sin(X) * np.sin(Y)
    u[[0, -1], :] = 0.0
    u[:, [0, -1]] = 0.0
    return ScalarField(grid, u)


def compute_forcing(grid: Grid2D, params: HelmholtzParams = TRUE_PARAMS) -> ScalarField:
    """Forcing that makes sin x sin y an exact solution of the continuous problem."""
    X, Y = grid.meshgrid()
    s = np.sin(X) * np.sin(Y)
    ux = np.cos(X) * np.sin(Y)
    uy = np.sin(X) * np.cos(Y)
    lap = -2.0 * s
    phi1 = gaussian_bump(X, Y, params.alpha1, params.c1x, params.c1y)
    kappa = 1.0 + phi1
    kx = -2.0 * (X - params.c1x) * phi1
    ky = -2.0 * (Y - params.c1y) * phi1
    eta = 1.0 + gaussian_bump(X, Y, params.alpha2, params.c2x, params.c2y)
    return ScalarField(grid, -(kappa * lap + kx * ux + ky * uy) + eta ** 2 * s)
