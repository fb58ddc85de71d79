"""
JSON run configuration.

One document drives every subcommand. Model, grid and Newton blocks are
shared; experiment blocks (``ldp``, ``tci``, ``rate``, ``contraction``) hold
their own settings and may carry a ``model`` block whose keys override the
shared one for that experiment only. All validation happens in
:func:`load_config`, before any computation, and every error names its key.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .control import Control
from .errors import ConfigError
from .families import diffusion_family, flux_family
from .files import load_control
from .grid import Grid, build_grid
from .ldp import DEFAULT_LADDER
from .solver import NewtonSettings
from .stepper import ModelParams

DEFAULTS = {
    "output": "out",
    "base_seed": 0,
    "grid": {"length": 1.0, "n_cells": 32},
    "model": {
        "p": 3.0,
        "f_family": "zero",
        "f_param": 0.0,
        "h_family": "linear",
        "h_param": 2.0,
        "T": 0.05,
        "n_steps": 200,
        "epsilon": 0.5,
    },
    "newton": {"residual_tol": 1e-10, "max_iters": 50, "smoothing": 0.0},
    "initial": {"kind": "sine", "amplitude": 1.0, "mode": 1},
    "control": {"kind": "zero"},
    "rate": {"target": {"kind": "zero_control"}, "lambda_ladder": list(DEFAULT_LADDER), "gradient": "fd"},
    "ldp": {
        "epsilons": [0.5, 0.35, 0.25],
        "M": 2000,
        "radius": 0.05,
        "lambda_ladder": list(DEFAULT_LADDER),
        "gradient": "adjoint",
    },
    "tci": {
        "M": 500,
        "model": {"h_family": "bounded_sine", "h_param": 1.0, "T": 0.1, "n_steps": 100, "epsilon": 1.0},
        "drift_suite": [
            {"id": "constant", "shape": "constant", "scales": [1, 2, 4]},
            {"id": "ramp", "shape": "ramp", "scales": [1, 2, 4]},
            {"id": "sine", "shape": "sine", "scales": [1, 2, 4]},
            {"id": "step", "shape": "step", "scales": [1, 2, 4]},
            {"id": "bump", "shape": "bump", "scales": [1, 2, 4]},
            {"id": "zero", "shape": "zero", "scales": [1]},
        ],
    },
    "contraction": {
        "model": {"f_family": "linear", "f_param": 1.0, "T": 0.1, "n_steps": 100},
        "initial_b": {"kind": "random", "seed": 1, "modes": 4, "amplitude": 1.0},
    },
}

_MODEL_KEYS = set(DEFAULTS["model"])
_SHAPES = ("zero", "constant", "ramp", "sine", "step", "bump")


_REPLACED = {"initial", "control", "rate.target", "contraction.initial_b", "tci.drift_suite"}
_EXPERIMENTS = ("ldp", "tci", "rate", "contraction")


def _merge(base, over, path=""):
    """Overlay a user document on the defaults. Unknown keys are typos and
    raise; blocks whose fields depend on a ``kind`` are replaced wholesale."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}.{k}" if path else k
        if path in _EXPERIMENTS and k == "model":
            if not isinstance(v, dict):
                raise ConfigError(f"{key} must be an object", key=key)
            out[k] = {**base.get(k, {}), **v}
        elif k not in base:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        elif key in _REPLACED:
            out[k] = copy.deepcopy(v)
        elif isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key} must be an object", key=key)
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _number(d, key, path, kind=float):
    v = d.get(key)
    name = f"{path}.{key}" if path else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}", key=name)
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"{name} must be an integer, got {v!r}", key=name)
        return int(v)
    return float(v)


def _model(block, path) -> ModelParams:
    unknown = sorted(set(block) - _MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]}", key=f"{path}.{unknown[0]}")
    p = _number(block, "p", path)
    if not p >= 2:
        raise ConfigError(f"{path}.p must be >= 2, got {p}", key=f"{path}.p")
    f = flux_family(str(block["f_family"]), _number(block, "f_param", path))
    h = diffusion_family(str(block["h_family"]), _number(block, "h_param", path))
    return ModelParams(
        p=p,
        f_family=f,
        h_family=h,
        horizon_T=_number(block, "T", path),
        n_steps=_number(block, "n_steps", path, int),
        epsilon=_number(block, "epsilon", path),
    )


@dataclass
class RunConfig:
    raw: dict
    grid: Grid
    model: ModelParams
    newton: NewtonSettings
    output: Path
    base_seed: int
    experiment_models: dict = field(default_factory=dict)

    def model_for(self, experiment: str) -> ModelParams:
        return self.experiment_models.get(experiment, self.model)

    def section(self, name: str) -> dict:
        return self.raw[name]

    def initial(self, block: str = "initial") -> np.ndarray:
        node = self.raw
        for part in block.split("."):
            node = node[part]
        return initial_field(node, self.grid, block)

    def control(self, model: ModelParams | None = None) -> Control:
        return control_from(self.raw["control"], model or self.model)


def initial_field(spec: dict, grid: Grid, path: str = "initial") -> np.ndarray:
    kind = spec.get("kind", "sine")
    x = grid.nodes / grid.length
    amp = float(spec.get("amplitude", 1.0))
    if kind == "sine":
        return amp * np.sin(np.pi * int(spec.get("mode", 1)) * x)
    if kind == "zero":
        return np.zeros(grid.n_interior)
    if kind == "values":
        v = np.asarray(spec.get("values", []), dtype=float)
        if v.shape != (grid.n_interior,):
            raise ConfigError(f"{path}.values must have {grid.n_interior} entries", key=f"{path}.values")
        return v
    if kind == "random":
        return random_smooth_field(grid, int(spec.get("seed", 0)), int(spec.get("modes", 4)), amp)
    raise ConfigError(f"{path}.kind must be sine, zero, values or random, got {kind!r}", key=f"{path}.kind")


def random_smooth_field(grid: Grid, seed: int, modes: int = 4, amplitude: float = 1.0) -> np.ndarray:
    """Random sine series with 1/j coefficient decay."""
    c = 2.0 * rng.uniforms(seed, modes) - 1.0
    x = grid.nodes / grid.length
    j = np.arange(1, modes + 1)
    return amplitude * (c / j) @ np.sin(np.pi * np.outer(j, x))


def control_from(spec: dict, model: ModelParams) -> Control:
    kind = spec.get("kind", "zero")
    n, tau = model.n_steps, model.tau
    if kind == "zero":
        return Control.zeros(n, tau)
    if kind == "constant":
        return Control(np.full(n, float(spec.get("value", 0.0))), tau)
    if kind == "file":
        if "path" not in spec:
            raise ConfigError("control.path is required for kind 'file'", key="control.path")
        return load_control(spec["path"], n, model.horizon_T)
    raise ConfigError(f"control.kind must be zero, constant or file, got {kind!r}", key="control.kind")


def _check_experiment_blocks(cfg: dict):
    ldp = cfg["ldp"]
    eps = ldp["epsilons"]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("ldp.epsilons must be a non-empty list", key="ldp.epsilons")
    if any(isinstance(e, bool) or not isinstance(e, (int, float)) for e in eps):
        raise ConfigError("ldp.epsilons must be numbers", key="ldp.epsilons")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("ldp.epsilons must be positive and strictly decreasing", key="ldp.epsilons")
    if _number(ldp, "M", "ldp", int) < 1:
        raise ConfigError("ldp.M must be >= 1", key="ldp.M")
    if not _number(ldp, "radius", "ldp") >= 0:
        raise ConfigError("ldp.radius must be >= 0", key="ldp.radius")
    for blk in ("ldp", "rate"):
        ladder = cfg[blk]["lambda_ladder"]
        if not ladder or any(not (isinstance(x, (int, float)) and x > 0) for x in ladder):
            raise ConfigError(f"{blk}.lambda_ladder must be positive numbers", key=f"{blk}.lambda_ladder")
        if cfg[blk]["gradient"] not in ("fd", "adjoint"):
            raise ConfigError(f"{blk}.gradient must be 'fd' or 'adjoint'", key=f"{blk}.gradient")
    tci = cfg["tci"]
    if _number(tci, "M", "tci", int) < 2:
        raise ConfigError("tci.M must be >= 2", key="tci.M")
    suite = tci["drift_suite"]
    if not isinstance(suite, list) or not suite:
        raise ConfigError("tci.drift_suite must be a non-empty list", key="tci.drift_suite")
    for i, d in enumerate(suite):
        if d.get("shape") not in _SHAPES:
            raise ConfigError(f"tci.drift_suite[{i}].shape must be one of {_SHAPES}", key="tci.drift_suite")
        if not d.get("scales"):
            raise ConfigError(f"tci.drift_suite[{i}].scales must be non-empty", key="tci.drift_suite")
    if cfg["rate"]["target"].get("kind") not in ("zero_control", "scaled_terminal", "values"):
        raise ConfigError("rate.target.kind must be zero_control, scaled_terminal or values", key="rate.target")


def build_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", key="")
    cfg = _merge(DEFAULTS, doc)
    g = cfg["grid"]
    grid = build_grid(_number(g, "length", "grid"), _number(g, "n_cells", "grid", int))
    model = _model(cfg["model"], "model")
    nw = cfg["newton"]
    newton = NewtonSettings(
        residual_tol=_number(nw, "residual_tol", "newton"),
        max_iters=_number(nw, "max_iters", "newton", int),
        smoothing=_number(nw, "smoothing", "newton"),
    )
    seed = _number(cfg, "base_seed", "", int)
    if seed < 0:
        raise ConfigError("base_seed must be >= 0", key="base_seed")
    _check_experiment_blocks(cfg)
    overrides = {}
    for name in ("ldp", "tci", "rate", "contraction"):
        over = cfg[name].get("model")
        if over:
            overrides[name] = _model({**cfg["model"], **over}, f"{name}.model")
    run = RunConfig(cfg, grid, model, newton, Path(cfg["output"]), seed, overrides)
    run.initial()
    run.initial("contraction.initial_b")
    if cfg["control"].get("kind") != "file":
        run.control()
    return run


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", key="--config") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}", key="--config") from exc
    return build_config(doc)
