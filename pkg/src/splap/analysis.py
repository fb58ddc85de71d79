"""
Diagnostics built on the stepper: the convex regulariser of |r|, the L1
contraction experiment, the per-step energy audit, and a sampler for the
monotonicity inequality

    2^(2-p) |a - b|^p <= (|a|^(p-2) a - |b|^(p-2) b) (a - b),   p >= 2.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import rng
from .control import Control
from .errors import ConfigError
from .grid import Grid, gradient_edges, l1_norm, p_flux
from .solver import NewtonSettings
from .stepper import ModelParams, Trajectory, regularize_initial, run_skeleton


@dataclass(frozen=True)
class ZetaParams:
    vartheta: float
    K1: float = 0.5
    K2: float = 1.0

    def __post_init__(self):
        if not self.vartheta > 0:
            raise ValueError("vartheta must be positive")


def zeta(r, zp: ZetaParams):
    """C^1 convex surrogate of |r|: r^2/(2v) inside |r| <= v, |r| - v/2 outside."""
    r = np.asarray(r, dtype=float)
    v = zp.vartheta
    a = np.abs(r)
    return np.where(a <= v, r * r / (2 * v), a - 0.5 * v)


def zeta_prime(r, zp: ZetaParams):
    return np.clip(np.asarray(r, dtype=float) / zp.vartheta, -1.0, 1.0)


def zeta_second(r, zp: ZetaParams):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) <= zp.vartheta, 1.0 / zp.vartheta, 0.0)


# --------------------------------------------------------------------------


@dataclass(eq=False)
class ContractionReport:
    t: np.ndarray
    gap: np.ndarray
    envelope: np.ndarray

    def increments(self) -> np.ndarray:
        return np.diff(self.gap)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("k", "t", "l1_gap", "envelope"))
        for k, (t, g, e) in enumerate(zip(self.t, self.gap, self.envelope)):
            w.writerow((k, repr(float(t)), repr(float(g)), repr(float(e))))
        return buf.getvalue()


def l1_contraction_experiment(
    params: ModelParams,
    u0_a,
    u0_b,
    h: Control,
    grid: Grid,
    settings: NewtonSettings | None = None,
) -> ContractionReport:
    """Two skeleton runs with a common control; L1 gap against the Gronwall envelope."""
    a = run_skeleton(params, h, u0_a, grid, settings)
    b = run_skeleton(params, h, u0_b, grid, settings)
    gap = l1_norm(a.fields - b.fields, grid)
    lip = params.h_family.lipschitz
    drive = np.concatenate([[0.0], np.cumsum(h.tau * np.abs(h.values))])
    envelope = gap[0] * np.exp(lip * drive)
    return ContractionReport(params.times, gap, envelope)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    step: int
    lhs: float
    rhs: float
    tolerance: float

    @property
    def excess(self) -> float:
        return self.lhs - self.rhs - self.tolerance


def energy_slack_tolerance(params: ModelParams, trajectory: Trajectory, grid: Grid, settings: NewtonSettings):
    """Per-step tolerance: 10*residual_tol, plus the edge-averaging error of the
    flux term. For Lipschitz f the trapezoidal rule on each edge misses the
    exact telescoping integral by at most L|du|^2/4, which sums to
    tau * L * h/4 * ||grad u||_L2^2."""
    tol = np.full(trajectory.n_steps, 10.0 * settings.residual_tol)
    lip = params.f_family.lipschitz
    if lip:
        g = gradient_edges(trajectory.fields[1:], grid)
        grad_l2_sq = grid.spacing * np.sum(g * g, axis=-1)
        tol = tol + params.tau * lip * grid.spacing / 4.0 * grad_l2_sq
    return tol


def audit_energy_ledger(
    trajectory: Trajectory,
    params: ModelParams,
    grid: Grid,
    settings: NewtonSettings | None = None,
) -> list[Violation]:
    """Check, step by step, the discrete energy balance

        1/2(|u_{k+1}|^2 - |u_k|^2 + |u_{k+1} - u_k|^2) + tau |grad u_{k+1}|_p^p
            <= (forcing_k, u_{k+1}) + tolerance
    """
    settings = settings or NewtonSettings()
    L = trajectory.ledger
    lhs = 0.5 * (L.l2_after**2 - L.l2_before**2 + L.increment_l2**2) + L.w1p_term
    rhs = L.forcing_inner_product
    tol = energy_slack_tolerance(params, trajectory, grid, settings)
    bad = np.flatnonzero(~(lhs <= rhs + tol))
    return [Violation(int(k) + 1, float(lhs[k]), float(rhs[k]), float(tol[k])) for k in bad]


# --------------------------------------------------------------------------


def monotonicity_slack(a, b, p: float):
    """(phi_p(a) - phi_p(b))(a - b) - 2^(2-p)|a - b|^p, elementwise."""
    if p < 2:
        raise ConfigError(f"p must be >= 2, got {p}", key="model.p")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rhs = (p_flux(a, p) - p_flux(b, p)) * (a - b)
    lhs = 2.0 ** (2 - p) * np.abs(a - b) ** p
    return rhs - lhs


def monotonicity_sample_check(p: float, n_samples: int, seed: int) -> float:
    """Worst slack over ``n_samples`` pairs drawn uniformly from [-10, 10]^2."""
    u = rng.uniforms(seed, 2 * n_samples)
    a = -10.0 + 20.0 * u[:n_samples]
    b = -10.0 + 20.0 * u[n_samples:]
    return float(np.min(monotonicity_slack(a, b, p)))


def initial_gap(params: ModelParams, u0_a, u0_b, grid: Grid, settings=None) -> float:
    ua = regularize_initial(u0_a, params.tau, params.p, grid, settings)
    ub = regularize_initial(u0_b, params.tau, params.p, grid, settings)
    return float(l1_norm(ua - ub, grid))


def norm_monotone(values, tol: float = 0.0) -> bool:
    v = np.asarray(values)
    return bool(np.all(np.diff(v) <= tol))


__all__ = [
    "ZetaParams",
    "zeta",
    "zeta_prime",
    "zeta_second",
    "ContractionReport",
    "l1_contraction_experiment",
    "Violation",
    "audit_energy_ledger",
    "energy_slack_tolerance",
    "monotonicity_slack",
    "monotonicity_sample_check",
    "initial_gap",
    "norm_monotone",
]
