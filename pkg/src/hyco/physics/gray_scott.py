"""Explicit finite-difference Gray-Scott solver on a periodic grid, with
forward sensitivities of the whole trajectory in the two diffusivities.

Two reaction-sign conventions are available:

``printed``
    ``u_t = D_u Δu + u v² - F (1 - u)``, ``v_t = D_v Δv - u v² + (F + k) v``
``classical``
    the usual Gray-Scott signs, ``u_t = D_u Δu - u v² + F (1 - u)``,
    ``v_t = D_v Δv + u v² - (F + k) v``.

With the indicator initial data below the ``printed`` system leaves every
bounded set in finite time (a few time units for F = 0.018, k = 0.051), so
long benchmark runs use ``classical``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import PERIODIC, Grid2D, ScalarField, bilinear_stencil

CONVENTIONS = {"printed": 1.0, "classical": -1.0}


class StabilityError(ValueError):
    """Explicit step violates the diffusion stability bound."""


class BlowUpError(FloatingPointError):
    """The state became non-finite during time stepping."""


@dataclass(frozen=True)
class GrayScottParams:
    D_u: float = 2e-6
    D_v: float = 0.8e-6
    F: float = 0.018
    k: float = 0.051
    convention: str = "printed"

    def __post_init__(self):
        if not (self.D_u > 0 and self.D_v > 0):
            raise ValueError("diffusivities must be positive")
        if self.F < 0 or self.k < 0:
            raise ValueError("F and k must be nonnegative")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {sorted(CONVENTIONS)}")


TRUE_PARAMS = GrayScottParams()


@dataclass(frozen=True)
class GrayScottState:
    u: ScalarField
    v: ScalarField
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValueError("u and v must share a grid")

    @property
    def grid(self) -> Grid2D:
        return self.u.grid


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Strided snapshots. ``sens[s, c, p]`` is d(component c)/d(parameter p)
    at snapshot ``s`` with components (u, v) and parameters (D_u, D_v)."""

    grid: Grid2D
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    sens: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase strictly")
        if self.u.shape != (len(self.times), *self.grid.shape) or self.v.shape != self.u.shape:
            raise ValueError("snapshot arrays do not match times/grid")
        if self.sens is not None and self.sens.shape != (len(self.times), 2, 2, *self.grid.shape):
            raise ValueError("sensitivity array has the wrong shape")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def states(self) -> np.ndarray:
        """``(S, 2, ny, nx)`` stack of (u, v)."""
        return np.stack([self.u, self.v], axis=1)

    def snapshot(self, s: int) -> GrayScottState:
        return GrayScottState(ScalarField(self.grid, self.u[s]), ScalarField(self.grid, self.v[s]), float(self.times[s]))


def unit_square_grid(n: int) -> Grid2D:
    return Grid2D(n, n, 0.0, 1.0, 0.0, 1.0, PERIODIC)


def gray_scott_initial_state(grid: Grid2D) -> GrayScottState:
    """u = 1 on the closed ball of radius 0.1 around (1/2, 1/2), v its complement."""
    if not grid.periodic:
        raise ValueError("Gray-Scott runs on a periodic grid")
    X, Y = grid.meshgrid()
    inside = ((X - 0.5) ** 2 + (Y - 0.5) ** 2 <= 0.1 ** 2).astype(np.float64)
    return GrayScottState(ScalarField(grid, inside), ScalarField(grid, 1.0 - inside), 0.0)


def laplacian(a: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Periodic 5-point Laplacian of a ``(..., ny, nx)`` array."""
    return ((np.roll(a, 1, -1) + np.roll(a, -1, -1) - 2.0 * a) / (hx * hx)
            + (np.roll(a, 1, -2) + np.roll(a, -1, -2) - 2.0 * a) / (hy * hy))


def check_stability(grid: Grid2D, params: GrayScottParams, dt: float) -> None:
    if dt <= 0:
        raise StabilityError("time step must be positive")
    number = max(params.D_u, params.D_v) * dt * (2.0 / grid.hx ** 2 + 2.0 / grid.hy ** 2)
    if number > 1.0:
        raise StabilityError(f"explicit diffusion number {number:.3g} exceeds 1 (dt={dt})")


def _rhs(u, v, params, lap_u, lap_v):
    sgn = CONVENTIONS[params.convention]
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow is reported as BlowUpError by the callers
        uvv = u * (v * v)
    du = params.D_u * lap_u + sgn * (uvv - params.F * (1.0 - u))
    dv = params.D_v * lap_v + sgn * ((params.F + params.k) * v - uvv)
    return du, dv


def gray_scott_step(state: GrayScottState, params: GrayScottParams, dt: float) -> GrayScottState:
    """One forward-Euler step."""
    grid = state.grid
    check_stability(grid, params, dt)
    u, v = state.u.values, state.v.values
    du, dv = _rhs(u, v, params, laplacian(u, grid.hx, grid.hy), laplacian(v, grid.hx, grid.hy))
    with np.errstate(over="ignore", invalid="ignore"):
        u1, v1 = u + dt * du, v + dt * dv
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(v1))):
        raise BlowUpError(f"non-finite Gray-Scott state at t={state.t + dt}")
    return GrayScottState(ScalarField(grid, u1), ScalarField(grid, v1), state.t + dt)


def simulate_gray_scott(
    params: GrayScottParams,
    initial: GrayScottState,
    n_steps: int,
    dt: float,
    snapshot_stride: int = 1,
    with_sensitivities: bool = False,
) -> Trajectory:
    """Integrate ``n_steps`` Euler steps, keeping every ``snapshot_stride``-th
    state plus the final one. With ``with_sensitivities`` the Euler recursion
    is differentiated in (D_u, D_v) and co-integrated."""
    grid = initial.grid
    check_stability(grid, params, dt)
    if n_steps < 0 or snapshot_stride < 1:
        raise ValueError("n_steps must be >= 0 and snapshot_stride >= 1")
    hx, hy = grid.hx, grid.hy
    sgn = CONVENTIONS[params.convention]
    F, fk = params.F, params.F + params.k
    Du, Dv = params.D_u, params.D_v

    u = np.array(initial.u.values)
    v = np.array(initial.v.values)
    # s[c, p]: derivative of component c in parameter p
    s = np.zeros((2, 2, *grid.shape)) if with_sensitivities else None

    keep = list(range(0, n_steps + 1, snapshot_stride))
    if keep[-1] != n_steps:
        keep.append(n_steps)
    S = len(keep)
    U = np.empty((S, *grid.shape))
    V = np.empty((S, *grid.shape))
    SENS = np.empty((S, 2, 2, *grid.shape)) if with_sensitivities else None
    U[0], V[0] = u, v
    if with_sensitivities:
        SENS[0] = s
    slot = 1
    for n in range(1, n_steps + 1):
        lap_u = laplacian(u, hx, hy)
        lap_v = laplacian(v, hx, hy)
        du, dv = _rhs(u, v, params, lap_u, lap_v)
        if with_sensitivities:
            vv = v * v
            # reaction Jacobian entries of the sign-adjusted right-hand side
            j_uu = sgn * (vv + F)
            j_uv = sgn * 2.0 * u * v
            j_vu = -sgn * vv
            j_vv = sgn * (fk - 2.0 * u * v)
            lap_s = laplacian(s, hx, hy)
            su, sv = s[0], s[1]
            ds_u = Du * lap_s[0] + j_uu * su + j_uv * sv
            ds_v = Dv * lap_s[1] + j_vu * su + j_vv * sv
            ds_u[0] += lap_u
            ds_v[1] += lap_v
            s = s + dt * np.stack([ds_u, ds_v])
        with np.errstate(over="ignore", invalid="ignore"):
            u = u + dt * du
            v = v + dt * dv
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise BlowUpError(f"non-finite Gray-Scott state at step {n} (t={n * dt:g})")
        if slot < S and keep[slot] == n:
            U[slot], V[slot] = u, v
            if with_sensitivities:
                SENS[slot] = s
            slot += 1
    times = initial.t + dt * np.asarray(keep, dtype=np.float64)
    return Trajectory(grid, times, U, V, SENS)


def _time_weights(times: np.ndarray, t: np.ndarray):
    t = np.asarray(t, dtype=np.float64)
    tol = 1e-9 * max(1.0, abs(times[-1]))
    if np.any(t < times[0] - tol) or np.any(t > times[-1] + tol):
        raise ValueError(f"query time outside trajectory span [{times[0]}, {times[-1]}]")
    if len(times) == 1:
        return np.zeros(len(t), dtype=np.intp), np.zeros(len(t))
    j = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
    w = np.clip((t - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0)
    return j, w


def predict_spacetime(traj: Trajectory, points: np.ndarray, with_jacobian: bool = False):
    """Evaluate (u, v) at space-time points: bilinear in space, linear in time.

    Returns ``(n, 2)`` values, and with ``with_jacobian`` also the ``(n, 2, 2)``
    derivatives in (D_u, D_v) interpolated the same way.
    """
    pts = np.atleast_2d(points)
    idx, wx = bilinear_stencil(traj.grid, pts[:, 0], pts[:, 1])
    j, wt = _time_weights(traj.times, pts[:, 2])
    j1 = np.minimum(j + 1, len(traj.times) - 1)
    n = len(idx)

    def interp(arr):
        # arr: (S, *extra, ny, nx) -> (n, *extra)
        extra = arr.shape[1:-2]
        flat = arr.reshape(arr.shape[0], -1, arr.shape[-2] * arr.shape[-1])
        k = np.arange(flat.shape[1])[None, :, None]
        g0 = (flat[j[:, None, None], k, idx[:, None, :]] * wx[:, None, :]).sum(-1)
        g1 = (flat[j1[:, None, None], k, idx[:, None, :]] * wx[:, None, :]).sum(-1)
        return ((1.0 - wt)[:, None] * g0 + wt[:, None] * g1).reshape(n, *extra)

    vals = interp(traj.states())
    if not with_jacobian:
        return vals
    if traj.sens is None:
        raise ValueError("trajectory was simulated without sensitivities")
    return vals, interp(traj.sens)
