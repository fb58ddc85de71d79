"""
Solver for the per-step nonlinear elliptic problem

    u - tau * div(|grad u|^(p-2) grad u + f(u)) = rhs        (Dirichlet, 1-D)

Newton's method with a halving line search on the discrete L2 residual norm.
The Jacobian is tridiagonal; a stack of problems (shape ``(batch, n)``) is
solved as one block-tridiagonal banded system, so every batch member goes
through exactly the same arithmetic as a lone solve. Members whose Newton
iteration stalls are handed to a damped Picard (frozen-diffusivity) iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg.lapack import dgtsv as _gtsv

from .errors import ConfigError, SolverError
from .grid import (
    Grid,
    divergence,
    edge_average,
    gradient_edges,
    p_flux,
    p_flux_derivative,
)

_ARMIJO = 1e-4


@dataclass(frozen=True)
class NewtonSettings:
    residual_tol: float = 1e-10
    max_iters: int = 50
    max_halvings: int = 30
    stall_reduction: float = 1e-3
    fallback_iters: int = 200
    fallback_damping: float = 0.5
    smoothing: float = 0.0

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ConfigError("newton.residual_tol must be positive", key="newton.residual_tol")
        if self.max_iters < 1:
            raise ConfigError("newton.max_iters must be >= 1", key="newton.max_iters")
        if self.smoothing < 0:
            raise ConfigError("newton.smoothing must be >= 0", key="newton.smoothing")


class SolveResult(NamedTuple):
    u: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray


def residual(u, rhs, tau, p, f, grid: Grid, delta=0.0):
    flux = p_flux(gradient_edges(u, grid), p, delta) + edge_average(f(u), grid)
    return u - tau * divergence(flux, grid) - rhs


def residual_norm(r, grid: Grid):
    return np.sqrt(grid.spacing * np.sum(r * r, axis=-1))


def jacobian_bands(u, tau, p, f, grid: Grid, delta=0.0):
    """(lower, diag, upper) of the residual Jacobian; lower/upper have length n-1."""
    h = grid.spacing
    c = tau / h
    a = p_flux_derivative(gradient_edges(u, grid), p, delta) / h
    df = 0.5 * f.derivative(u)
    diag = 1.0 + c * (a[..., 1:] + a[..., :-1])
    upper = -c * (a[..., 1:-1] + df[..., 1:])
    lower = -c * (a[..., 1:-1] - df[..., :-1])
    return lower, diag, upper


def solve_tridiagonal(lower, diag, upper, rhs, transpose=False):
    """Solve a stack of tridiagonal systems (last axis) as one LAPACK gtsv call.

    Neighbouring systems are joined by zero couplings, which leaves each
    member's elimination untouched."""
    if transpose:
        lower, upper = upper, lower
    n = diag.shape[-1]
    lead = diag.shape[:-1]
    if diag.size == 1:
        if diag.reshape(-1)[0] == 0.0:
            raise SolverError("singular tridiagonal system (zero pivot)")
        return np.asarray(rhs, dtype=float) / diag
    dl = np.zeros(lead + (n,))
    du = np.zeros(lead + (n,))
    dl[..., :-1] = lower
    du[..., :-1] = upper
    _, _, _, x, info = _gtsv(
        dl.reshape(-1)[:-1], np.array(diag, dtype=float).reshape(-1), du.reshape(-1)[:-1],
        np.array(rhs, dtype=float).reshape(-1), True, True, True, True,
    )
    if info != 0:
        raise SolverError(f"singular tridiagonal system (gtsv info={info})")
    return x.reshape(np.shape(rhs))


def _picard(u, rhs, tau, p, f, grid, s: NewtonSettings):
    """Damped frozen-diffusivity iteration; returns (u, iterations, residual)."""
    h = grid.spacing
    c = tau / h
    u = u.copy()
    its = np.zeros(u.shape[0], dtype=int)
    res = residual_norm(residual(u, rhs, tau, p, f, grid, s.smoothing), grid)
    live = res > s.residual_tol
    w = s.fallback_damping
    for _ in range(s.fallback_iters):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        ui = u[idx]
        g = gradient_edges(ui, grid)
        kappa = (g * g + s.smoothing**2) ** (0.5 * (p - 2)) / h
        diag = 1.0 + c * (kappa[:, 1:] + kappa[:, :-1])
        off = -c * kappa[:, 1:-1]
        b = rhs[idx] + tau * divergence(edge_average(f(ui), grid), grid)
        v = solve_tridiagonal(off, diag, off, b)
        ui = (1.0 - w) * ui + w * v
        u[idx] = ui
        its[idx] += 1
        res[idx] = residual_norm(residual(ui, rhs[idx], tau, p, f, grid, s.smoothing), grid)
        if not np.all(np.isfinite(res[idx])):
            break
        live[idx] = res[idx] > s.residual_tol
    return u, its, res


def solve(rhs, u_init, tau, p, f, grid: Grid, settings: NewtonSettings) -> SolveResult:
    """Solve ``u - tau*div(phi_p(grad u) + avg f(u)) = rhs`` for every row of ``rhs``."""
    rhs = np.asarray(rhs, dtype=float)
    shape = rhs.shape
    n = grid.n_interior
    b = rhs.reshape(-1, n)
    u = np.array(u_init, dtype=float).reshape(-1, n)
    s = settings
    tol = s.residual_tol
    delta = s.smoothing
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(u))):
        raise SolverError("non-finite data entering the implicit solve")

    R = residual(u, b, tau, p, f, grid, delta)
    res = residual_norm(R, grid)
    its = np.zeros(b.shape[0], dtype=int)
    stalled = np.zeros(b.shape[0], dtype=bool)
    live = res > tol
    for _ in range(s.max_iters):
        idx = np.flatnonzero(live & ~stalled)
        if idx.size == 0:
            break
        ua, Ra, ra, ba = u[idx], R[idx], res[idx], b[idx]
        lo, di, up = jacobian_bands(ua, tau, p, f, grid, delta)
        d = solve_tridiagonal(lo, di, up, -Ra)
        alpha = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        new_u, new_R, new_r = ua.copy(), Ra.copy(), ra.copy()
        for _ in range(s.max_halvings + 1):
            j = np.flatnonzero(pending)
            trial = ua[j] + alpha[j, None] * d[j]
            Rt = residual(trial, ba[j], tau, p, f, grid, delta)
            rt = residual_norm(Rt, grid)
            ok = np.isfinite(rt) & (rt <= (1.0 - _ARMIJO * alpha[j]) * ra[j])
            acc = j[ok]
            new_u[acc], new_R[acc], new_r[acc] = trial[ok], Rt[ok], rt[ok]
            pending[acc] = False
            if not pending.any():
                break
            alpha[pending] *= 0.5
        u[idx], R[idx], res[idx] = new_u, new_R, new_r
        its[idx] += 1
        slow = new_r > (1.0 - s.stall_reduction) * ra
        stalled[idx] = pending | (slow & (new_r > tol))
        live = res > tol

    todo = np.flatnonzero(res > tol)
    if todo.size:
        uf, itf, rf = _picard(u[todo], b[todo], tau, p, f, grid, s)
        u[todo], res[todo] = uf, rf
        its[todo] += itf
        if np.any(~(res[todo] <= tol)):
            worst = float(np.nanmax(np.where(np.isfinite(res), res, np.inf)))
            raise SolverError("implicit solve did not converge", residual=worst)
    return SolveResult(u.reshape(shape), its.reshape(shape[:-1]), res.reshape(shape[:-1]))
