"""
Semi-implicit time stepping for

    du - div(|grad u|^(p-2) grad u + f(u)) dt = H(u) dW

and its controlled / Girsanov-shifted relatives. Diffusion and flux are
implicit, the noise coefficient H is evaluated at the old level:

    u_{k+1} - tau*div(phi_p(grad u_{k+1}) + f(u_{k+1})) = u_k + forcing_k

with forcing_k = tau*H(u_k)*h_{k+1}                         (skeleton)
                 eps*H(u_k)*dW_{k+1}                        (small noise)
                 eps*H(u_k)*dW_{k+1} + tau*H(u_k)*g_{k+1}   (shifted measure)

The initial datum is regularised once by solving u - tau*Lap_p u = u_0.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import solver
from .control import BrownianPath, Control
from .errors import ConfigError, SolverError
from .families import Family, diffusion_family, flux_family
from .grid import Grid, check_field, inner, l2_norm, w1p_power
from .solver import NewtonSettings

_ZERO = Family("zero")


@dataclass(frozen=True)
class ModelParams:
    p: float
    f_family: Family = field(default_factory=lambda: Family("zero"))
    h_family: Family = field(default_factory=lambda: Family("zero"))
    horizon_T: float = 1.0
    n_steps: int = 100
    epsilon: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.p) and self.p >= 2):
            raise ConfigError(f"model.p must be >= 2, got {self.p}", key="model.p")
        if not (np.isfinite(self.horizon_T) and self.horizon_T > 0):
            raise ConfigError("model.T must be positive", key="model.T")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("model.n_steps must be an integer >= 1", key="model.n_steps")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigError("model.epsilon must be >= 0", key="model.epsilon")
        object.__setattr__(self, "f_family", flux_family(self.f_family))
        object.__setattr__(self, "h_family", diffusion_family(self.h_family))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def tau(self) -> float:
        return self.horizon_T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def with_(self, **changes) -> ModelParams:
        return replace(self, **changes)


LEDGER_COLUMNS = (
    "step",
    "t",
    "l2_before",
    "l2_after",
    "increment_l2",
    "w1p_term",
    "forcing_inner_product",
    "newton_iters",
    "newton_residual",
)


@dataclass(eq=False)
class Ledger:
    """Per-step energy bookkeeping; arrays are indexed by step k = 0..N-1
    (the step producing u_{k+1}). ``w1p_term`` already carries the factor tau."""

    tau: float
    l2_before: np.ndarray
    l2_after: np.ndarray
    increment_l2: np.ndarray
    w1p_term: np.ndarray
    forcing_inner_product: np.ndarray
    newton_iters: np.ndarray
    newton_residual: np.ndarray

    def __len__(self):
        return len(self.l2_before)

    def rows(self):
        for k in range(len(self)):
            yield (
                k + 1,
                (k + 1) * self.tau,
                self.l2_before[k],
                self.l2_after[k],
                self.increment_l2[k],
                self.w1p_term[k],
                self.forcing_inner_product[k],
                int(self.newton_iters[k]),
                self.newton_residual[k],
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for row in self.rows():
            w.writerow([x if isinstance(x, int) else repr(float(x)) for x in row])
        return buf.getvalue()


@dataclass(eq=False)
class Trajectory:
    fields: np.ndarray  # (N+1, n_interior)
    ledger: Ledger

    @property
    def n_steps(self) -> int:
        return self.fields.shape[0] - 1

    @property
    def terminal(self) -> np.ndarray:
        return self.fields[-1]


def regularize_initial(u0, tau: float, p: float, grid: Grid, settings: NewtonSettings | None = None):
    """Solve u - tau*Lap_p u = u0 (no flux term)."""
    if not tau > 0:
        raise ConfigError("tau must be positive", key="model.T")
    settings = settings or NewtonSettings()
    u0 = check_field(u0, grid)
    return solver.solve(u0, u0, tau, p, _ZERO, grid, settings).u


def solve_step(u_prev, forcing, params: ModelParams, grid: Grid, settings: NewtonSettings | None = None):
    """One implicit step; returns a SolveResult (u, iterations, residual)."""
    settings = settings or NewtonSettings()
    u_prev = check_field(u_prev, grid)
    rhs = u_prev + check_field(forcing, grid)
    return solver.solve(rhs, u_prev, params.tau, params.p, params.f_family, grid, settings)


def implicit_step(u_prev, forcing, params: ModelParams, grid: Grid, settings: NewtonSettings | None = None):
    return solve_step(u_prev, forcing, params, grid, settings).u


def _march(params, grid, settings, ubar0, forcing_of, keep_fields=True):
    """Advance a stack of states (shape (B, n)) through N steps.

    ``forcing_of(k, H_k)`` returns the assembled forcing for step k.
    Returns (fields or terminal, ledger-array dict).
    """
    tau = params.tau
    H = params.h_family
    u = np.array(ubar0, dtype=float)
    B = u.shape[0]
    N = params.n_steps
    fields = np.empty((B, N + 1, u.shape[1])) if keep_fields else None
    if keep_fields:
        fields[:, 0] = u
    cols = {c: np.empty((B, N)) for c in LEDGER_COLUMNS[2:]}
    before = l2_norm(u, grid)
    for k in range(N):
        forcing = forcing_of(k, H(u))
        try:
            res = solver.solve(u + forcing, u, tau, params.p, params.f_family, grid, settings)
        except SolverError as exc:
            exc.step = k + 1
            raise
        new = res.u
        after = l2_norm(new, grid)
        cols["l2_before"][:, k] = before
        cols["l2_after"][:, k] = after
        cols["increment_l2"][:, k] = l2_norm(new - u, grid)
        cols["w1p_term"][:, k] = tau * w1p_power(new, params.p, grid)
        cols["forcing_inner_product"][:, k] = inner(forcing, new, grid)
        cols["newton_iters"][:, k] = res.iterations
        cols["newton_residual"][:, k] = res.residual
        u, before = new, after
        if keep_fields:
            fields[:, k + 1] = u
    return (fields if keep_fields else u), cols


def _ledger(cols, tau, b=0):
    return Ledger(tau=tau, **{c: v[b] for c, v in cols.items()})


def _start(params, u0, grid, settings):
    try:
        return regularize_initial(u0, params.tau, params.p, grid, settings)
    except SolverError as exc:
        exc.step = 0  # the initial regularisation counts as step 0
        raise


def _check_len(x, n, what):
    if x.shape[-1] != n:
        raise ConfigError(f"{what} has {x.shape[-1]} entries, expected n_steps={n}", key="model.n_steps")


def run_skeleton(params: ModelParams, h: Control, u0, grid: Grid, settings: NewtonSettings | None = None) -> Trajectory:
    settings = settings or NewtonSettings()
    _check_len(h.values, params.n_steps, "control")
    tau = params.tau
    hv = h.values
    ubar0 = _start(params, u0, grid, settings)[None]
    fields, cols = _march(params, grid, settings, ubar0, lambda k, Hk: Hk * (tau * hv[k]))
    return Trajectory(fields[0], _ledger(cols, tau))


def _noise_forcing(params, dw, drift=None):
    eps, tau = params.epsilon, params.tau
    if drift is None:
        return lambda k, Hk: Hk * (eps * dw[..., k, None])
    return lambda k, Hk: Hk * (eps * dw[..., k, None]) + Hk * (tau * drift[k])


def run_sde(params: ModelParams, w: BrownianPath, u0, grid: Grid, settings: NewtonSettings | None = None) -> Trajectory:
    settings = settings or NewtonSettings()
    _check_len(w.increments, params.n_steps, "Brownian path")
    ubar0 = _start(params, u0, grid, settings)[None]
    try:
        fields, cols = _march(params, grid, settings, ubar0, _noise_forcing(params, w.increments[None]))
    except SolverError as exc:
        exc.seed = w.seed
        raise
    return Trajectory(fields[0], _ledger(cols, params.tau))


def run_girsanov(
    params: ModelParams,
    gdrift: Control,
    w: BrownianPath,
    u0,
    grid: Grid,
    settings: NewtonSettings | None = None,
) -> Trajectory:
    """Solution under the shifted measure; ``w`` holds the increments of W*."""
    settings = settings or NewtonSettings()
    _check_len(gdrift.values, params.n_steps, "drift")
    _check_len(w.increments, params.n_steps, "Brownian path")
    ubar0 = _start(params, u0, grid, settings)[None]
    forcing = _noise_forcing(params, w.increments[None], gdrift.values)
    try:
        fields, cols = _march(params, grid, settings, ubar0, forcing)
    except SolverError as exc:
        exc.seed = w.seed
        raise
    return Trajectory(fields[0], _ledger(cols, params.tau))


def run_ensemble(
    params: ModelParams,
    increments,
    u0,
    grid: Grid,
    settings: NewtonSettings | None = None,
    drift: Control | None = None,
    keep_fields: bool = False,
    ubar0=None,
):
    """Batched run_sde (or run_girsanov when ``drift`` is given).

    ``increments`` has shape (M, N). Returns fields (M, N+1, n) when
    ``keep_fields`` else terminal states (M, n). Row m is bit-identical to the
    corresponding single-trajectory driver.
    """
    settings = settings or NewtonSettings()
    dw = np.atleast_2d(np.asarray(increments, dtype=float))
    _check_len(dw, params.n_steps, "Brownian path")
    if drift is not None:
        _check_len(drift.values, params.n_steps, "drift")
    if ubar0 is None:
        ubar0 = _start(params, u0, grid, settings)
    start = np.broadcast_to(ubar0, (dw.shape[0], grid.n_interior))
    forcing = _noise_forcing(params, dw, None if drift is None else drift.values)
    out, _ = _march(params, grid, settings, start, forcing, keep_fields=keep_fields)
    return out


def run_skeleton_batch(params: ModelParams, controls, ubar0, grid: Grid, settings: NewtonSettings, keep_fields=False):
    """Skeleton runs for a stack of control vectors (B, N) from a regularised start."""
    hv = np.atleast_2d(np.asarray(controls, dtype=float))
    _check_len(hv, params.n_steps, "control")
    tau = params.tau
    start = np.broadcast_to(ubar0, (hv.shape[0], grid.n_interior))
    out, _ = _march(params, grid, settings, start, lambda k, Hk: Hk * (tau * hv[:, k, None]), keep_fields)
    return out


def stability_envelope(h: Control, lip_h: float) -> np.ndarray:
    """Discrete Gronwall bound on ||u_k||^2 / ||u_0||^2 for the skeleton with |H(v)| <= L|v|.

    From 1/2(a^2 - b^2) <= tau*L*|h|*a*b and Young: a^2 (1 - tau) <= b^2 (1 + tau L^2 h^2).
    """
    tau = h.tau
    if tau >= 1:
        raise ValueError("envelope needs tau < 1")
    factors = (1.0 + tau * lip_h**2 * h.values**2) / (1.0 - tau)
    return np.concatenate([[1.0], np.cumprod(factors)])
