"""
Command-line entry point.

    splap <subcommand> --config run.json [--out DIR] [--threads N]

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 a ``validate`` check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from . import __version__
from .analysis import l1_contraction_experiment
from .config import RunConfig, build_config, initial_field, load_config
from .control import sample_brownian
from .errors import ConfigError, SolverError
from .files import control_to_csv, write_fields
from .ldp import EventSpec, ldp_diagnostic, rate_with_continuation, zero_control_terminal
from .rng import mix_seed
from .stepper import run_sde, run_skeleton
from .tci import check_tci_params, drift_shape, tci_sweep
from .validation import run_all

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def _cmd_simulate(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    m = cfg.model
    w = sample_brownian(m.n_steps, m.tau, mix_seed(cfg.base_seed, 0))
    tr = run_sde(m, w, cfg.initial(), cfg.grid, cfg.newton)
    write_fields(out / "simulate_fields.bin", tr.fields)
    return [_write(out, "simulate_ledger.csv", tr.ledger.to_csv()), out / "simulate_fields.bin"]


def _cmd_skeleton(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    m = cfg.model
    h = cfg.control(m)
    tr = run_skeleton(m, h, cfg.initial(), cfg.grid, cfg.newton)
    write_fields(out / "skeleton_fields.bin", tr.fields)
    return [_write(out, "skeleton_ledger.csv", tr.ledger.to_csv()), out / "skeleton_fields.bin"]


def _rate_target(cfg: RunConfig, m):
    spec = cfg.section("rate")["target"]
    if spec["kind"] == "values":
        return initial_field({"kind": "values", "values": spec.get("values", [])}, cfg.grid, "rate.target")
    base = zero_control_terminal(m, cfg.grid, cfg.initial(), cfg.newton)
    return base if spec["kind"] == "zero_control" else float(spec.get("factor", 1.0)) * base


def _cmd_rate(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    m = cfg.model_for("rate")
    blk = cfg.section("rate")
    target = _rate_target(cfg, m)
    res = rate_with_continuation(
        m, target, cfg.grid, cfg.initial(), blk["lambda_ladder"], cfg.newton, blk["gradient"]
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("i_value", "terminal_gap", "iterations", "converged", "penalty_weight"))
    w.writerow((repr(res.i_value), repr(res.terminal_gap), res.iterations, int(res.converged), repr(res.penalty_weight)))
    return [_write(out, "rate.csv", buf.getvalue()), _write(out, "rate_control.csv", control_to_csv(res.optimal_control))]


def _cmd_ldp(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    m = cfg.model_for("ldp")
    blk = cfg.section("ldp")
    rep = ldp_diagnostic(
        m,
        blk["epsilons"],
        EventSpec(float(blk["radius"])),
        int(blk["M"]),
        cfg.grid,
        cfg.initial(),
        base_seed=cfg.base_seed,
        settings=cfg.newton,
        ladder=blk["lambda_ladder"],
        gradient=blk["gradient"],
        threads=threads,
    )
    return [_write(out, "ldp.csv", rep.to_csv())]


def _cmd_tci(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    m = cfg.model_for("tci").with_(epsilon=1.0)
    check_tci_params(m)
    blk = cfg.section("tci")
    suite = [
        (d.get("id", d["shape"]), drift_shape(d["shape"], m.n_steps, m.tau, **d.get("options", {})), d["scales"])
        for d in blk["drift_suite"]
    ]
    rep = tci_sweep(m, suite, int(blk["M"]), cfg.base_seed, cfg.initial(), cfg.grid, cfg.newton, threads)
    return [_write(out, "tci.csv", rep.to_csv())]


def _cmd_contraction(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    m = cfg.model_for("contraction")
    h = cfg.control(m)
    rep = l1_contraction_experiment(m, cfg.initial(), cfg.initial("contraction.initial_b"), h, cfg.grid, cfg.newton)
    return [_write(out, "contraction.csv", rep.to_csv())]


COMMANDS = {
    "simulate": (_cmd_simulate, "one SDE trajectory with its energy ledger"),
    "skeleton": (_cmd_skeleton, "controlled deterministic trajectory"),
    "rate": (_cmd_rate, "rate-function estimate for the configured target"),
    "ldp": (_cmd_ldp, "Monte Carlo rare-event probabilities against the rate bound"),
    "tci": (_cmd_tci, "coupling estimate of the transport constant"),
    "contraction": (_cmd_contraction, "L1 gap of two skeleton runs with a common control"),
    "validate": (None, "built-in regression and property checks"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splap", description="Stochastic p-Laplace numerics lab")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON config (defaults are used when omitted)")
        p.add_argument("--out", type=Path, help="output directory, overrides the config")
        p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles, 0 = auto")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else build_config({})
        if args.threads < 0:
            raise ConfigError("--threads must be >= 0", key="--threads")
        out = args.out or cfg.output
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "validate":
            checks = run_all()
            text = "".join(c.line() + "\n" for c in checks)
            _write(out, "validate.txt", text)
            sys.stdout.write(text)
            return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
        fn = COMMANDS[args.command][0]
        for path in fn(cfg, out, args.threads):
            print(path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"splap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"splap: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
