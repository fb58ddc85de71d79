"""
Built-in flux and diffusion coefficient families.

Flux families (f):       zero, linear(a) -> a*v,  sine(a) -> a*sin(v)
Diffusion families (H):  zero, linear(a) -> a*v,  bounded_sine(a) -> a*sin(v)

Every member is Lipschitz and vanishes at 0. A family is addressed either by
name plus parameter or by the compact string form ``"linear(0.5)"``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

FLUX_FAMILIES = ("zero", "linear", "sine")
DIFFUSION_FAMILIES = ("zero", "linear", "bounded_sine")

_COMPACT = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^)]*?)\s*\))?\s*$")


@dataclass(frozen=True)
class Family:
    name: str
    param: float = 0.0

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.name == "zero":
            return np.zeros_like(v)
        if self.name == "linear":
            return self.param * v
        return self.param * np.sin(v)

    def derivative(self, v):
        v = np.asarray(v, dtype=float)
        if self.name == "zero":
            return np.zeros_like(v)
        if self.name == "linear":
            return np.full_like(v, self.param)
        return self.param * np.cos(v)

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.name == "zero" else abs(self.param)

    @property
    def bounded(self) -> bool:
        return self.name != "linear" or self.param == 0.0

    @property
    def is_zero(self) -> bool:
        return self.name == "zero" or self.param == 0.0

    def __str__(self):
        return "zero" if self.name == "zero" else f"{self.name}({self.param:g})"


def _make(name, param, allowed, key):
    if name not in allowed:
        raise ConfigError(
            f"{key}: unknown family {name!r}; expected one of {', '.join(allowed)}", key=key
        )
    param = 0.0 if param is None else float(param)
    if not np.isfinite(param):
        raise ConfigError(f"{key}: parameter must be finite", key=key)
    return Family(name, param)


def parse_family(spec, allowed, key="family") -> Family:
    """Accept a Family, ``"name"``, ``"name(param)"`` or a ``(name, param)`` pair."""
    if isinstance(spec, Family):
        return _make(spec.name, spec.param, allowed, key)
    if isinstance(spec, (tuple, list)):
        name, param = spec
        return _make(name, param, allowed, key)
    m = _COMPACT.match(str(spec))
    if m is None:
        raise ConfigError(f"{key}: cannot parse family {spec!r}", key=key)
    name, raw = m.groups()
    param = None
    if raw:
        try:
            param = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: bad parameter {raw!r}", key=key) from None
    if name != "zero" and param is None:
        raise ConfigError(f"{key}: family {name!r} needs a parameter", key=key)
    return _make(name, param, allowed, key)


def flux_family(spec, param=None) -> Family:
    if param is not None:
        spec = (spec, param)
    return parse_family(spec, FLUX_FAMILIES, key="model.f_family")


def diffusion_family(spec, param=None) -> Family:
    if param is not None:
        spec = (spec, param)
    return parse_family(spec, DIFFUSION_FAMILIES, key="model.h_family")
