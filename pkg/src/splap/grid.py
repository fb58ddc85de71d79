"""
Uniform 1-D mesh on (0, length) with homogeneous Dirichlet boundary.

Fields hold the ``n_cells - 1`` interior nodal values; edge fields hold one
value per cell edge (``n_cells`` of them, boundary edges included). All
operators act on the last axis, so a stack of fields with shape
``(batch, n_interior)`` is processed in one call.

The flux is edge-centred, which makes discrete summation by parts exact::

    h * sum_e F_e * grad(v)_e == -h * sum_i div(F)_i * v_i
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid:
    length: float
    n_cells: int

    @property
    def spacing(self) -> float:
        return self.length / self.n_cells

    @property
    def n_interior(self) -> int:
        return self.n_cells - 1

    @property
    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes."""
        return self.spacing * np.arange(1, self.n_cells)


def build_grid(length: float, n_cells: int) -> Grid:
    if not (np.isfinite(length) and length > 0):
        raise ConfigError(f"grid.length must be positive, got {length}", key="grid.length")
    if int(n_cells) != n_cells or n_cells < 2:
        raise ConfigError(f"grid.n_cells must be an integer >= 2, got {n_cells}", key="grid.n_cells")
    return Grid(float(length), int(n_cells))


def _check(values, size, what):
    values = np.asarray(values, dtype=float)
    if values.ndim == 0 or values.shape[-1] != size:
        got = values.shape[-1] if values.ndim else "scalar"
        raise ValueError(f"{what} has length {got}, grid expects {size}")
    return values


def check_field(u, grid: Grid) -> np.ndarray:
    return _check(u, grid.n_interior, "field")


def _with_zero_ends(v):
    out = np.zeros(v.shape[:-1] + (v.shape[-1] + 2,))
    out[..., 1:-1] = v
    return out


def gradient_edges(u, grid: Grid) -> np.ndarray:
    u = check_field(u, grid)
    return np.diff(_with_zero_ends(u), axis=-1) / grid.spacing


def p_flux(grad, p: float, delta: float = 0.0) -> np.ndarray:
    """|g|^(p-2) g, or (g^2 + delta^2)^((p-2)/2) g when smoothing is on."""
    if p < 2:
        raise ConfigError(f"p must be >= 2, got {p}", key="model.p")
    g = np.asarray(grad, dtype=float)
    if delta:
        return (g * g + delta * delta) ** (0.5 * (p - 2)) * g
    return np.abs(g) ** (p - 2) * g


def p_flux_derivative(grad, p: float, delta: float = 0.0) -> np.ndarray:
    g = np.asarray(grad, dtype=float)
    if delta:
        s = g * g + delta * delta
        return s ** (0.5 * (p - 2)) + (p - 2) * s ** (0.5 * (p - 4)) * g * g
    return (p - 1) * np.abs(g) ** (p - 2)


def divergence(flux, grid: Grid) -> np.ndarray:
    flux = _check(flux, grid.n_cells, "edge field")
    return np.diff(flux, axis=-1) / grid.spacing


def edge_average(values, grid: Grid) -> np.ndarray:
    """Arithmetic mean of nodal values on each edge, boundary values taken as 0."""
    vp = _with_zero_ends(check_field(values, grid))
    return 0.5 * (vp[..., 1:] + vp[..., :-1])


def flux_divergence_f(u, f, grid: Grid) -> np.ndarray:
    u = check_field(u, grid)
    return divergence(edge_average(f(u), grid), grid)


def p_laplacian(u, p: float, grid: Grid, delta: float = 0.0) -> np.ndarray:
    return divergence(p_flux(gradient_edges(u, grid), p, delta), grid)


class Norms(NamedTuple):
    l1: float
    l2: float
    w1p: float


def l1_norm(u, grid: Grid):
    return grid.spacing * np.sum(np.abs(u), axis=-1)


def l2_norm(u, grid: Grid):
    return np.sqrt(grid.spacing * np.sum(np.square(u), axis=-1))


def inner(u, v, grid: Grid):
    return grid.spacing * np.sum(np.asarray(u) * np.asarray(v), axis=-1)


def w1p_power(u, p: float, grid: Grid):
    """h * sum_e |grad u|_e^p, the p-th power of the W^{1,p}_0 seminorm."""
    return grid.spacing * np.sum(np.abs(gradient_edges(u, grid)) ** p, axis=-1)


def norms(u, grid: Grid, p: float = 2.0) -> Norms:
    u = check_field(u, grid)
    return Norms(
        l1=l1_norm(u, grid),
        l2=l2_norm(u, grid),
        w1p=w1p_power(u, p, grid) ** (1.0 / p),
    )
