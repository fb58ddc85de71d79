"""
Piecewise-constant controls on the uniform time partition, the L2 projection
onto them, and Brownian increments.

``Control.values[k]`` is the value on (t_k, t_{k+1}], i.e. the control that
forces the step from u_k to u_{k+1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class Control:
    values: np.ndarray
    tau: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.size

    @property
    def horizon(self) -> float:
        return self.tau * self.n_steps

    @property
    def times(self) -> np.ndarray:
        """Left endpoints t_k of the partition intervals."""
        return self.tau * np.arange(self.n_steps)

    def scaled(self, factor: float) -> Control:
        return Control(factor * self.values, self.tau)

    def as_fine_table(self, per_step: int = 10) -> tuple[np.ndarray, np.ndarray]:
        """Sample the step function on a fine table, doubling the nodes at jumps
        so that its piecewise-linear interpolant is the step function itself."""
        s = np.linspace(0.0, 1.0, per_step + 1)
        t = np.concatenate([self.tau * (k + s) for k in range(self.n_steps)])
        v = np.repeat(self.values, per_step + 1)
        return t, v

    @classmethod
    def zeros(cls, n_steps: int, tau: float) -> Control:
        return cls(np.zeros(n_steps), tau)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    increments: np.ndarray
    seed: int
    tau: float

    @property
    def n_steps(self) -> int:
        return self.increments.size


def _cumulative_at(t, v, points):
    """Exact integral of the piecewise-linear interpolant of (t, v) from t[0] to each point."""
    dt = np.diff(t)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (v[1:] + v[:-1]))])
    # index of the segment [t_j, t_{j+1}] holding each point; zero-width segments are skipped
    j = np.clip(np.searchsorted(t, points, side="right") - 1, 0, len(t) - 2)
    s = points - t[j]
    width = dt[j]
    slope = np.divide(v[j + 1] - v[j], width, out=np.zeros_like(width), where=width > 0)
    return cum[j] + s * v[j] + 0.5 * s * s * slope


def project_control(t, values, n_steps: int, horizon: float | None = None) -> Control:
    """Average a finely tabulated control over each interval of the uniform partition.

    The table is treated as its piecewise-linear interpolant; it must span
    [0, T] and resolve each partition interval with at least 10 samples.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != v.shape or t.size < 2:
        raise ValueError("fine table needs matching 1-D time and value columns")
    if np.any(np.diff(t) < 0):
        raise ValueError("fine table times must be non-decreasing")
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1", key="model.n_steps")
    T = float(t[-1]) if horizon is None else float(horizon)
    if abs(t[0]) > 1e-12 * max(1.0, T) or abs(t[-1] - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"fine table must span [0, {T}], got [{t[0]}, {t[-1]}]")
    tau = T / n_steps
    n_distinct = np.unique(t).size
    if n_distinct - 1 < 10 * n_steps:
        raise ValueError(
            f"fine table has {n_distinct - 1} intervals; need at least {10 * n_steps} "
            f"to resolve {n_steps} steps"
        )
    edges = tau * np.arange(n_steps + 1)
    edges[-1] = t[-1]
    c = _cumulative_at(t, v, edges)
    return Control(np.diff(c) / tau, tau)


def control_energy(h: Control) -> float:
    """Half the squared L2(0,T) norm of a piecewise-constant control."""
    return 0.5 * h.tau * float(np.sum(h.values * h.values))


def sample_brownian(n_steps: int, tau: float, seed: int) -> BrownianPath:
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1", key="model.n_steps")
    if not tau > 0:
        raise ConfigError("tau must be positive", key="model.T")
    z = rng.standard_normals(seed, n_steps)
    return BrownianPath(np.sqrt(tau) * z, int(seed), float(tau))


def ensemble_paths(n_steps: int, tau: float, base_seed: int, count: int, start: int = 0):
    """Paths for ensemble members ``start .. start+count-1``."""
    return [
        sample_brownian(n_steps, tau, rng.mix_seed(base_seed, i))
        for i in range(start, start + count)
    ]
