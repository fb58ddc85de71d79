"""
Self-contained regression and property checks behind ``splap validate``.

Every check fabricates its own inputs from fixed seeds. Each returns a
:class:`Check` carrying the measured quantity next to its threshold, so the
same functions serve the CLI report and the acceptance tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .analysis import audit_energy_ledger, l1_contraction_experiment, monotonicity_sample_check, monotonicity_slack
from .config import random_smooth_field
from .control import Control, project_control
from .grid import build_grid
from .solver import NewtonSettings
from .stepper import ModelParams, implicit_step, run_skeleton


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        c = fn(*args, **kw)
        return Check(c.name, c.passed, c.detail, time.perf_counter() - t0)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def heat_error(n_cells: int, n_steps: int, T: float = 0.1) -> float:
    """Max-norm error at T against exp(-pi^2 t) sin(pi x) for p = 2, f = 0, H = 0."""
    grid = build_grid(1.0, n_cells)
    params = ModelParams(2.0, "zero", "zero", T, n_steps, 0.0)
    u0 = np.sin(np.pi * grid.nodes)
    tr = run_skeleton(params, Control.zeros(n_steps, params.tau), u0, grid)
    exact = math.exp(-math.pi**2 * T) * u0
    return float(np.max(np.abs(tr.terminal - exact)))


@_timed
def check_heat(coarse=(16, 32), fine_steps: int = 10000) -> Check:
    """Error on grid 128 with N = 4096, plus a grid doubling at fixed small tau.

    The error behaves like A h^2 + B tau with A ~ 0.30 and B ~ -1.9, so the
    doubling pair is chosen where the time error stays a small fraction of
    the spatial one.
    """
    e128 = heat_error(128, 4096)
    ec = heat_error(coarse[0], fine_steps)
    ef = heat_error(coarse[1], fine_steps)
    ratio = ec / ef
    ok = e128 <= 5e-3 and 3.2 <= ratio <= 4.8
    return Check(
        "heat regression",
        ok,
        f"err(128, N=4096)={e128:.3e} <= 5e-3; err ratio {coarse[0]}->{coarse[1]} at tau={0.1 / fine_steps:g}: "
        f"{ratio:.3f} in [3.2, 4.8]",
    )


@_timed
def check_single_node() -> Check:
    grid = build_grid(1.0, 2)
    params = ModelParams(3.0, n_steps=1, horizon_T=0.1)
    u = implicit_step(np.array([1.0]), np.zeros(1), params, grid)
    err = abs(float(u[0]) - 0.537592)
    return Check("single-node oracle", err <= 1e-6, f"u={float(u[0]):.9f}, |u-0.537592|={err:.2e} <= 1e-6")


@_timed
def check_energy_ledger(n_configs: int = 20, seed: int = 11, n_cells: int = 32, n_steps: int = 50) -> Check:
    settings = NewtonSettings()
    grid = build_grid(1.0, n_cells)
    u = rng.uniforms(seed, 3 * n_configs).reshape(n_configs, 3)
    total = 0
    worst = -math.inf
    for i in range(n_configs):
        p = (2.5, 3.0, 4.0)[int(3 * u[i, 0])]
        params = ModelParams(p, "zero", f"linear({0.5 + 1.5 * u[i, 1]:.6f})", 0.1, n_steps)
        h = Control(2.0 * rng.standard_normals(rng.mix_seed(seed, i), n_steps), params.tau)
        u0 = random_smooth_field(grid, rng.mix_seed(seed + 1, i), 4, 0.5 + u[i, 2])
        tr = run_skeleton(params, h, u0, grid, settings)
        v = audit_energy_ledger(tr, params, grid, settings)
        total += len(v)
        L = tr.ledger
        slack = 0.5 * (L.l2_after**2 - L.l2_before**2 + L.increment_l2**2) + L.w1p_term - L.forcing_inner_product
        worst = max(worst, float(np.max(slack)))
    return Check(
        "energy ledger",
        total == 0,
        f"{total} violations over {n_configs} configs; worst lhs-rhs={worst:.2e} (tol {10 * settings.residual_tol:g})",
    )


@_timed
def check_monotonicity(n_samples: int = 100_000, seed: int = 5) -> Check:
    worst = min(monotonicity_sample_check(p, n_samples, seed + i) for i, p in enumerate((2.5, 3.0, 4.0)))
    eq = float(monotonicity_slack(1.0, -1.0, 3.0))
    ok = worst >= -1e-12 and eq == 0.0
    return Check("monotonicity inequality", ok, f"worst slack {worst:.3e} >= -1e-12; p=3,(1,-1) slack {eq}")


def random_smooth_control(seed: int, T: float = 1.0, modes: int = 5):
    """Trigonometric polynomial on [0, T] with its exact squared L2 norm."""
    c = rng.standard_normals(seed, 2 * modes + 1)
    a0, a, b = c[0], c[1 : modes + 1] / np.arange(1, modes + 1), c[modes + 1 :] / np.arange(1, modes + 1)
    w = 2 * np.pi * np.arange(1, modes + 1) / T

    def h(t):
        t = np.asarray(t, dtype=float)[..., None]
        return a0 + np.sum(a * np.cos(w * t) + b * np.sin(w * t), axis=-1)

    l2sq = T * (a0 * a0 + 0.5 * float(np.sum(a * a + b * b)))
    return h, l2sq


@_timed
def check_projection(n_controls: int = 100, seed: int = 3, n_steps: int = 50, per_step: int = 40) -> Check:
    worst = -math.inf
    for i in range(n_controls):
        h, l2sq = random_smooth_control(rng.mix_seed(seed, i))
        t = np.linspace(0.0, 1.0, per_step * n_steps + 1)
        ph = project_control(t, h(t), n_steps)
        worst = max(worst, ph.tau * float(np.sum(ph.values**2)) - l2sq)
    return Check("projection non-expansive", worst <= 1e-6, f"max(tau*sum(Ph^2) - int h^2) = {worst:.3e} <= 1e-6")


@_timed
def check_contraction(n_pairs: int = 10, seed: int = 17) -> Check:
    grid = build_grid(1.0, 32)
    params = ModelParams(3.0, "linear(1)", "linear(1)", 0.1, 100)
    settings = NewtonSettings()
    h = Control.zeros(params.n_steps, params.tau)
    worst = -math.inf
    for i in range(n_pairs):
        a = random_smooth_field(grid, rng.mix_seed(seed, 2 * i), 5, 1.0)
        b = random_smooth_field(grid, rng.mix_seed(seed, 2 * i + 1), 5, 1.0)
        rep = l1_contraction_experiment(params, a, b, h, grid, settings)
        tol = 10 * settings.residual_tol + 0.05 * rep.gap[0]
        worst = max(worst, float(np.max(rep.increments())) / tol)
    return Check(
        "L1 contraction (h=0)",
        worst <= 1.0,
        f"max gap increase / tolerance = {worst:.3e} <= 1 over {n_pairs} pairs",
    )


ALL_CHECKS = (
    check_heat,
    check_single_node,
    check_energy_ledger,
    check_monotonicity,
    check_projection,
    check_contraction,
)


def run_all() -> list[Check]:
    return [fn() for fn in ALL_CHECKS]
