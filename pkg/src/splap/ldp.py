"""
Rate-function estimation and Monte Carlo probing of small-noise asymptotics.

The rate of a terminal state is approximated by the penalised control problem

    J(h) = 1/2 tau sum h_k^2 + lambda/2 * dist(u_h(T), target)^2

minimised by BFGS with a backtracking (Armijo) line search, starting from
h = 0. Gradients come from central finite differences, one skeleton solve
per perturbed coordinate and sign, all batched; ``gradient="adjoint"``
swaps in the discrete adjoint of the semi-implicit scheme, which costs one
forward and one backward sweep and is the sensible choice for long horizons.

Events are complements of terminal L2 balls, {||u(T) - center|| >= radius}.
The cheapest point on the boundary sphere is found by penalising
(||u_h(T) - center|| - radius)^2: for a fixed h the best sphere point lies
along u_h(T) - center, so the direction is optimised jointly with h in closed
form.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import Control, control_energy, ensemble_paths
from .errors import ConfigError, SolverError
from .grid import Grid, check_field, l2_norm
from .solver import NewtonSettings, jacobian_bands, solve_tridiagonal
from .stepper import (
    ModelParams,
    regularize_initial,
    run_ensemble,
    run_sde,
    run_skeleton,
    run_skeleton_batch,
)

WILSON_Z = 1.959963984540054
DEFAULT_LADDER = (10.0, 100.0, 1000.0)
CHUNK = 250
MC_FLOOR_FLAG = "below Monte Carlo floor"


# --------------------------------------------------------------------------
# result types


@dataclass(eq=False)
class RateResult:
    i_value: float
    optimal_control: Control
    terminal_gap: float
    iterations: int
    converged: bool
    objective: float = float("nan")
    penalty_weight: float = float("nan")
    # solver settings of the optimisation; replaying the control with these
    # reproduces terminal_gap exactly
    settings: NewtonSettings | None = None


@dataclass(frozen=True)
class ProbEstimate:
    p_hat: float
    n_hits: int
    n_samples: int
    wilson_low: float
    wilson_high: float


@dataclass(eq=False)
class EventSpec:
    """Complement of the terminal ball {||u(T) - center||_L2 < radius}."""

    radius: float
    center: np.ndarray | None = None
    kind: str = "terminal_ball_complement"

    def __post_init__(self):
        if self.kind != "terminal_ball_complement":
            raise ConfigError(f"unsupported event kind {self.kind!r}", key="event.kind")
        if not self.radius >= 0:
            raise ConfigError("event.radius must be non-negative", key="event.radius")


def wilson_interval(hits: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one sample")
    p = hits / n
    z2 = z * z
    denom = 1.0 + z2 / n
    mid = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return max(0.0, min(p, mid - half)), min(1.0, max(p, mid + half))


# --------------------------------------------------------------------------
# penalised control problem


class _Terminal:
    """Terminal penalty lambda/2 * gap(u)^2 with gap and d(gap^2/2)/du."""

    def __init__(self, grid, weight, target=None, center=None, radius=None):
        self.grid = grid
        self.weight = weight
        self.target = target
        self.center = center
        self.radius = radius

    def gap(self, u):
        if self.target is not None:
            return l2_norm(u - self.target, self.grid)
        return np.abs(l2_norm(u - self.center, self.grid) - self.radius)

    def value(self, u):
        return 0.5 * self.weight * self.gap(u) ** 2

    def grad(self, u):
        h = self.grid.spacing
        if self.target is not None:
            return self.weight * h * (u - self.target)
        d = u - self.center
        r = l2_norm(d, self.grid)
        if r == 0:
            return np.zeros_like(u)
        return self.weight * (r - self.radius) * h * d / r


class _Problem:
    def __init__(self, params, grid, ubar0, settings, terminal):
        self.params = params
        self.grid = grid
        self.ubar0 = ubar0
        self.settings = settings
        self.terminal = terminal
        self.n_solves = 0

    def terminal_states(self, H):
        H = np.atleast_2d(H)
        self.n_solves += H.shape[0]
        return run_skeleton_batch(self.params, H, self.ubar0, self.grid, self.settings)

    def objective(self, h):
        uT = self.terminal_states(h)[0]
        return 0.5 * self.params.tau * float(h @ h) + float(self.terminal.value(uT))

    def fd_gradient(self, h):
        n = h.size
        step = 1e-5 * np.maximum(1.0, np.abs(h))
        H = np.repeat(h[None], 2 * n, axis=0)
        H[np.arange(n), np.arange(n)] += step
        H[n + np.arange(n), np.arange(n)] -= step
        vals = self.terminal.value(self.terminal_states(H))
        return self.params.tau * h + (vals[:n] - vals[n:]) / (2 * step)

    def adjoint_gradient(self, h):
        pr, grid = self.params, self.grid
        tau = pr.tau
        Hf = pr.h_family
        fields = run_skeleton_batch(pr, h[None], self.ubar0, grid, self.settings, keep_fields=True)[0]
        self.n_solves += 1
        N = pr.n_steps
        grad = tau * h.copy()
        mu_rhs = self.terminal.grad(fields[N])
        for k in range(N - 1, -1, -1):
            lo, di, up = jacobian_bands(fields[k + 1], tau, pr.p, pr.f_family, grid, self.settings.smoothing)
            mu = solve_tridiagonal(lo, di, up, mu_rhs, transpose=True)
            uk = fields[k]
            grad[k] += tau * float(mu @ Hf(uk))
            mu_rhs = mu * (1.0 + tau * h[k] * Hf.derivative(uk))
        return grad


def _bfgs(problem, h0, gradient, max_iters, gtol=1e-6):
    grad_fn = problem.adjoint_gradient if gradient == "adjoint" else problem.fd_gradient
    tau = problem.params.tau
    x = np.array(h0, dtype=float)
    fx = problem.objective(x)
    gx = grad_fn(x)
    n = x.size
    Hinv = np.eye(n) / tau
    converged = False
    it = 0
    while True:
        if np.max(np.abs(gx), initial=0.0) <= gtol * max(1.0, fx):
            converged = True
            break
        if it >= max_iters:
            break
        it += 1
        d = -Hinv @ gx
        slope = float(gx @ d)
        if not slope < 0:
            Hinv = np.eye(n) / tau
            d = -gx / tau
            slope = float(gx @ d)
        alpha = 1.0
        for _ in range(40):
            xt = x + alpha * d
            try:
                ft = problem.objective(xt)
            except SolverError:
                ft = math.inf  # trial too wild to solve; shrink the step
            if np.isfinite(ft) and ft <= fx + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break
        gt = grad_fn(xt)
        s = xt - x
        y = gt - gx
        sy = float(s @ y)
        if sy > 1e-12 * float(np.sqrt((s @ s) * (y @ y))):
            if it == 1:
                Hinv = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        x, fx, gx = xt, ft, gt
    return x, fx, it, converged


def _rate_settings(settings):
    settings = settings or NewtonSettings()
    # gradients by differencing need solves well below the difference step
    return NewtonSettings(
        residual_tol=min(settings.residual_tol, 1e-12),
        max_iters=settings.max_iters,
        max_halvings=settings.max_halvings,
        stall_reduction=settings.stall_reduction,
        fallback_iters=settings.fallback_iters,
        fallback_damping=settings.fallback_damping,
        smoothing=settings.smoothing,
    )


def _solve_problem(params, grid, u0, settings, terminal, h_init, gradient, max_iters):
    if gradient not in ("fd", "adjoint"):
        raise ConfigError(f"unknown gradient provider {gradient!r}", key="rate.gradient")
    settings = _rate_settings(settings)
    ubar0 = regularize_initial(u0, params.tau, params.p, grid, settings)
    problem = _Problem(params, grid, ubar0, settings, terminal)
    h0 = np.zeros(params.n_steps) if h_init is None else np.asarray(h_init, dtype=float)
    if h0.shape != (params.n_steps,):
        raise ConfigError("initial control must have n_steps entries", key="rate.n_ctrl")
    h, J, its, ok = _bfgs(problem, h0, gradient, max_iters)
    ctrl = Control(h, params.tau)
    uT = problem.terminal_states(h)[0]
    return RateResult(
        i_value=control_energy(ctrl),
        optimal_control=ctrl,
        terminal_gap=float(terminal.gap(uT)),
        iterations=its,
        converged=ok,
        objective=J,
        penalty_weight=terminal.weight,
        settings=settings,
    )


def rate_function_estimate(
    params: ModelParams,
    target,
    penalty_weight: float,
    grid: Grid,
    u0,
    n_ctrl: int | None = None,
    settings: NewtonSettings | None = None,
    gradient: str = "fd",
    h_init=None,
    max_iters: int = 500,
) -> RateResult:
    """Minimal control energy steering u(T) to ``target``, with the terminal
    constraint relaxed to a quadratic penalty of weight ``penalty_weight``."""
    if n_ctrl is not None and n_ctrl != params.n_steps:
        raise ConfigError("controls live on the simulation partition: n_ctrl must equal n_steps", key="rate.n_ctrl")
    if not penalty_weight > 0:
        raise ConfigError("penalty weight must be positive", key="rate.lambda_ladder")
    target = check_field(target, grid)
    term = _Terminal(grid, penalty_weight, target=target)
    return _solve_problem(params, grid, u0, settings, term, h_init, gradient, max_iters)


def rate_with_continuation(
    params, target, grid, u0, ladder=DEFAULT_LADDER, settings=None, gradient="fd", max_iters=500
) -> RateResult:
    """Run the penalty ladder, warm-starting each weight from the previous optimum."""
    h = None
    result = None
    for lam in ladder:
        result = rate_function_estimate(
            params, target, lam, grid, u0, settings=settings, gradient=gradient, h_init=h, max_iters=max_iters
        )
        h = result.optimal_control.values
    return result


def zero_control_terminal(params, grid, u0, settings=None):
    return run_skeleton(params, Control.zeros(params.n_steps, params.tau), u0, grid, settings).terminal


def boundary_rate(
    params: ModelParams,
    event: EventSpec,
    grid: Grid,
    u0,
    ladder=DEFAULT_LADDER,
    settings=None,
    gradient="adjoint",
    max_iters=500,
    start_level: float = 0.5,
) -> RateResult | None:
    """Cheapest control reaching the boundary sphere of the event.

    Returns None when the diffusion coefficient vanishes identically (no
    control can move the state, the rate is infinite).
    """
    if params.h_family.is_zero:
        return None
    center = event.center if event.center is not None else zero_control_terminal(params, grid, u0, settings)
    best = None
    # h = 0 is a critical point of the sphere penalty when the center is the
    # unforced terminal state, so start from both constant signs.
    for sign in (1.0, -1.0):
        h = np.full(params.n_steps, sign * start_level)
        res = None
        for lam in ladder:
            term = _Terminal(grid, lam, center=center, radius=event.radius)
            res = _solve_problem(params, grid, u0, settings, term, h, gradient, max_iters)
            h = res.optimal_control.values
        if best is None or res.objective < best.objective:
            best = res
    return best


# --------------------------------------------------------------------------
# Monte Carlo


def _chunks(M, size=CHUNK):
    return [(s, min(size, M - s)) for s in range(0, M, size)]


def _terminal_chunk(params, grid, u0, ubar0, settings, base_seed, start, count):
    paths = ensemble_paths(params.n_steps, params.tau, base_seed, count, start)
    dw = np.array([w.increments for w in paths])
    try:
        return run_ensemble(params, dw, u0, grid, settings, ubar0=ubar0)
    except SolverError:
        for w in paths:  # pin down the failing member for reproduction
            run_sde(params, w, u0, grid, settings)
        raise


def map_chunks(fn, chunks, threads=1):
    if threads is None or threads == 0:
        import os

        threads = os.cpu_count() or 1
    if threads <= 1 or len(chunks) <= 1:
        return [fn(*c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda c: fn(*c), chunks))


def rare_event_probability(
    params: ModelParams,
    event: EventSpec,
    M: int,
    base_seed: int,
    grid: Grid,
    u0,
    settings: NewtonSettings | None = None,
    threads: int = 1,
) -> ProbEstimate:
    if M < 1:
        raise ConfigError("M must be >= 1", key="ldp.M")
    if params.epsilon == 0 and not params.h_family.is_zero:
        raise ConfigError("epsilon must be positive for a noisy model", key="model.epsilon")
    settings = settings or NewtonSettings()
    center = event.center if event.center is not None else zero_control_terminal(params, grid, u0, settings)
    ubar0 = regularize_initial(u0, params.tau, params.p, grid, settings)
    parts = map_chunks(
        lambda s, c: _terminal_chunk(params, grid, u0, ubar0, settings, base_seed, s, c),
        _chunks(M),
        threads,
    )
    uT = np.concatenate(parts)
    hits = int(np.count_nonzero(l2_norm(uT - center, grid) >= event.radius))
    lo, hi = wilson_interval(hits, M)
    return ProbEstimate(hits / M, hits, M, lo, hi)


# --------------------------------------------------------------------------
# diagnostic table

LDP_COLUMNS = ("epsilon", "p_hat", "wilson_low", "wilson_high", "eps2_log_p", "rate_bound", "flag")


@dataclass(frozen=True)
class LdpRow:
    epsilon: float
    estimate: ProbEstimate
    eps2_log_p: float | None
    flag: str

    @property
    def eps2_log_bounds(self) -> tuple[float, float]:
        """eps^2 log of the Wilson interval ends (-inf when the lower end is 0)."""
        e2 = self.epsilon**2
        lo = e2 * math.log(self.estimate.wilson_low) if self.estimate.wilson_low > 0 else -math.inf
        return lo, e2 * math.log(self.estimate.wilson_high)


@dataclass(eq=False)
class LdpReport:
    rows: list[LdpRow]
    rate: RateResult | None
    rate_bound: float
    center: np.ndarray = field(repr=False, default=None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LDP_COLUMNS)
        for r in self.rows:
            e = r.estimate
            w.writerow(
                [
                    repr(r.epsilon),
                    repr(e.p_hat),
                    repr(e.wilson_low),
                    repr(e.wilson_high),
                    "" if r.eps2_log_p is None else repr(r.eps2_log_p),
                    repr(self.rate_bound),
                    r.flag,
                ]
            )
        return buf.getvalue()


def ldp_diagnostic(
    params: ModelParams,
    epsilons,
    event: EventSpec,
    M: int,
    grid: Grid,
    u0,
    base_seed: int = 0,
    settings: NewtonSettings | None = None,
    ladder=DEFAULT_LADDER,
    gradient: str = "adjoint",
    threads: int = 1,
) -> LdpReport:
    eps = [float(e) for e in epsilons]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("ldp.epsilons must be strictly decreasing", key="ldp.epsilons")
    if any(e <= 0 for e in eps):
        raise ConfigError("ldp.epsilons must be positive", key="ldp.epsilons")
    settings = settings or NewtonSettings()
    center = event.center if event.center is not None else zero_control_terminal(params, grid, u0, settings)
    ev = EventSpec(event.radius, center)
    rate = boundary_rate(params, ev, grid, u0, ladder, settings, gradient)
    bound = -math.inf if rate is None else -rate.i_value
    rows = []
    for e in eps:
        est = rare_event_probability(params.with_(epsilon=e), ev, M, base_seed, grid, u0, settings, threads)
        if est.n_hits == 0:
            rows.append(LdpRow(e, est, None, MC_FLOOR_FLAG))
        else:
            rows.append(LdpRow(e, est, e * e * math.log(est.p_hat), ""))
    return LdpReport(rows, rate, bound, center)
