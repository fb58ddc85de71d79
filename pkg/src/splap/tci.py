"""
Coupling estimate behind the quadratic transportation cost inequality.

For a deterministic drift g, the pair (u, u^g) driven by the same Brownian
increments W* is a coupling of the law of the solution and its Girsanov
shift. Its mean squared L2(0,T; L1) distance bounds W_2^2 from above, and
the relative entropy of the shifted law is 1/2 int g^2. The ratio
E|u - u^g|^2 / (2 H) is the empirical transport constant.

The Wasserstein distance itself is never computed; all reported constants
are upper bounds obtained from this one coupling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .control import Control, control_energy, ensemble_paths
from .errors import ConfigError, SolverError
from .grid import Grid, l1_norm
from .ldp import _chunks, map_chunks
from .solver import NewtonSettings
from .stepper import ModelParams, Trajectory, regularize_initial, run_ensemble, run_girsanov, run_sde

UPPER_BOUND_CAVEAT = (
    "distances are coupling upper bounds on W2^2 (shared-noise coupling), not exact Wasserstein distances"
)
TCI_COLUMNS = ("g_id", "scale", "entropy", "mean_sq_distance", "ratio", "stderr", "n_samples")


def path_distance_sq(a, b, grid: Grid, tau: float | None = None):
    """Squared discrete L2(0,T; L1(D)) distance, left-endpoint rule in time.

    Accepts Trajectory objects or field stacks of shape (..., N+1, n).
    """
    if isinstance(a, Trajectory):
        tau = a.ledger.tau if tau is None else tau
        a = a.fields
    if isinstance(b, Trajectory):
        tau = b.ledger.tau if tau is None else tau
        b = b.fields
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != b.shape[-2:] or a.shape[-1] != grid.n_interior:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    if tau is None:
        raise ValueError("tau is required for raw field arrays")
    gaps = l1_norm(a[..., :-1, :] - b[..., :-1, :], grid)
    return tau * np.sum(gaps * gaps, axis=-1)


def relative_entropy(gdrift: Control) -> float:
    return control_energy(gdrift)


def drift_shape(kind: str, n_steps: int, tau: float, **kw) -> Control:
    """Unit-amplitude drift shapes sampled at the partition midpoints."""
    T = n_steps * tau
    s = (np.arange(n_steps) + 0.5) * tau / T
    if kind == "zero":
        v = np.zeros(n_steps)
    elif kind == "constant":
        v = np.ones(n_steps)
    elif kind == "ramp":
        v = s
    elif kind == "sine":
        v = np.sin(2 * np.pi * kw.get("frequency", 1.0) * s)
    elif kind == "step":
        v = (s >= kw.get("at", 0.5)).astype(float)
    elif kind == "bump":
        v = np.exp(-0.5 * ((s - kw.get("at", 0.5)) / kw.get("width", 0.15)) ** 2)
    else:
        raise ConfigError(f"unknown drift shape {kind!r}", key="tci.drift_suite")
    return Control(kw.get("amplitude", 1.0) * v, tau)


@dataclass(frozen=True)
class TciRow:
    g_id: str
    scale: float
    entropy: float
    mean_sq_distance: float
    mc_stderr: float
    n_samples: int

    @property
    def ratio(self) -> float | None:
        if self.entropy > 0:
            return self.mean_sq_distance / (2.0 * self.entropy)
        return None


@dataclass(eq=False)
class TciReport:
    rows: list[TciRow]
    header: dict = field(default_factory=dict)

    @property
    def c_emp(self) -> float | None:
        ratios = [r.ratio for r in self.rows if r.ratio is not None]
        return max(ratios) if ratios else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        meta = " ".join(f"{k}={v}" for k, v in self.header.items())
        buf.write(f"# {meta}; {UPPER_BOUND_CAVEAT}\n".replace("# ; ", "# "))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TCI_COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    r.g_id,
                    repr(float(r.scale)),
                    repr(r.entropy),
                    repr(r.mean_sq_distance),
                    "" if r.ratio is None else repr(r.ratio),
                    repr(r.mc_stderr),
                    r.n_samples,
                ]
            )
        c = self.c_emp
        buf.write(f"# C_emp={'' if c is None else repr(c)}\n")
        return buf.getvalue()


def check_tci_params(params: ModelParams):
    if not params.h_family.bounded:
        raise ConfigError(
            f"model.h_family: the transport inequality requires a bounded diffusion "
            f"coefficient H, got {params.h_family}",
            key="model.h_family",
        )
    if params.epsilon != 1.0:
        raise ConfigError("model.epsilon must be 1 for the coupling experiment", key="model.epsilon")


class _BaseCache:
    """Unshifted trajectories per ensemble chunk; shared by every drift of a sweep."""

    def __init__(self):
        self.store = {}

    def get(self, key, make):
        if key not in self.store:
            self.store[key] = make()
        return self.store[key]


def _pair_chunk(params, gdrift, grid, u0, ubar0, settings, base_seed, start, count, cache):
    paths = ensemble_paths(params.n_steps, params.tau, base_seed, count, start)
    dw = np.array([w.increments for w in paths])
    try:
        base = cache.get(
            (start, count),
            lambda: run_ensemble(params, dw, u0, grid, settings, keep_fields=True, ubar0=ubar0),
        )
        shifted = run_ensemble(params, dw, u0, grid, settings, drift=gdrift, keep_fields=True, ubar0=ubar0)
    except SolverError:
        for w in paths:
            run_sde(params, w, u0, grid, settings)
            run_girsanov(params, gdrift, w, u0, grid, settings)
        raise
    return path_distance_sq(base, shifted, grid, params.tau)


def coupled_simulate(
    params: ModelParams,
    gdrift: Control,
    M: int,
    base_seed: int,
    u0,
    grid: Grid,
    settings: NewtonSettings | None = None,
    g_id: str = "g",
    scale: float = 1.0,
    threads: int = 1,
    _cache: _BaseCache | None = None,
) -> TciRow:
    """Monte Carlo mean of d(u, u^g)^2 over ``M`` shared-noise pairs."""
    check_tci_params(params)
    if M < 2:
        raise ConfigError("tci.M must be >= 2", key="tci.M")
    if gdrift.n_steps != params.n_steps:
        raise ConfigError("drift must have n_steps entries", key="tci.drift_suite")
    settings = settings or NewtonSettings()
    cache = _cache or _BaseCache()
    ubar0 = regularize_initial(u0, params.tau, params.p, grid, settings)
    parts = map_chunks(
        lambda s, c: _pair_chunk(params, gdrift, grid, u0, ubar0, settings, base_seed, s, c, cache),
        _chunks(M),
        threads,
    )
    d = np.concatenate(parts)
    return TciRow(
        g_id=g_id,
        scale=float(scale),
        entropy=relative_entropy(gdrift),
        mean_sq_distance=float(np.mean(d)),
        mc_stderr=float(np.std(d, ddof=1) / math.sqrt(M)),
        n_samples=int(M),
    )


def tci_sweep(
    params: ModelParams,
    drift_suite,
    M: int,
    base_seed: int,
    u0,
    grid: Grid,
    settings: NewtonSettings | None = None,
    threads: int = 1,
) -> TciReport:
    """``drift_suite`` is a sequence of (g_id, unit-shape Control, scales)."""
    suite = list(drift_suite)
    if not suite:
        raise ConfigError("tci.drift_suite must not be empty", key="tci.drift_suite")
    check_tci_params(params)
    cache = _BaseCache()
    rows = []
    for g_id, shape, scales in suite:
        for lam in scales:
            rows.append(
                coupled_simulate(
                    params, shape.scaled(lam), M, base_seed, u0, grid, settings, g_id, lam, threads, cache
                )
            )
    header = {
        "grid": f"{grid.n_cells}x{grid.length:g}",
        "N": params.n_steps,
        "T": f"{params.horizon_T:g}",
        "M": M,
        "p": f"{params.p:g}",
        "H": str(params.h_family),
        "f": str(params.f_family),
        "base_seed": base_seed,
    }
    return TciReport(rows, header)
