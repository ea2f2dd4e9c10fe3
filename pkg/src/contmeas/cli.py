"""Command line entry point.

Every subcommand accepts ``--config <file>`` (a JSON config, see the
config module) plus flags that override individual fields; flags alone
are enough for the common runs. Exit codes: 0 success, 2 configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import TRAJECTORY_MODES, load_json_file, parse_config_data
from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    EnumerationSizeError,
    HermiticityError,
    InvalidStateError,
    ModeError,
    OracleConvergenceError,
    StepSizeError,
)
from .runner import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_CONFIG_ERRORS = (
    ConfigurationError,
    HermiticityError,
    DimensionMismatchError,
    ModeError,
    EnumerationSizeError,
)
_NUMERIC_ERRORS = (StepSizeError, OracleConvergenceError, InvalidStateError)


def _add_common(p):
    p.add_argument("--config", metavar="FILE", help="JSON config file; flags override its fields")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed of the noise streams")
    p.add_argument("--out-dir", metavar="PATH", help="output directory (default: out)")
    p.add_argument("--jobs", type=int, default=1, metavar="N",
                   help="worker processes for ensembles (output is identical for any value)")


def _add_matrix_flags(p):
    p.add_argument("--dim", type=int, help="Hilbert-space dimension")
    p.add_argument("--hamiltonian", metavar="FILE", help="operator JSON file")
    p.add_argument("--observable", metavar="FILE", help="operator JSON file")
    p.add_argument("--state", metavar="FILE",
                   help="initial state JSON file (default: first basis vector)")


def _add_step_flags(p):
    p.add_argument("--kappa", type=float, help="measurement strength")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--steps", type=int, help="number of steps")


def _overlay(data, path, value):
    if value is None:
        return
    d = data
    keys = path.split(".")
    for key in keys[:-1]:
        node = d.get(key)
        if not isinstance(node, dict):
            node = {}
            d[key] = node
        d = node
    d[keys[-1]] = value


def _file_flag(value):
    return os.path.abspath(value) if value is not None else None


def _base_data(args):
    if args.config:
        try:
            data = load_json_file(args.config)
        except FileNotFoundError:
            raise ConfigurationError([("config", f"file not found: {args.config}")]) from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError([("config", f"not valid JSON: {exc}")]) from None
        if not isinstance(data, dict):
            raise ConfigurationError([("config", "top level must be a JSON object")])
        base_dir = os.path.dirname(os.path.abspath(args.config))
    else:
        data, base_dir = {}, "."
    _overlay(data, "master_seed", args.seed)
    _overlay(data, "out_dir", args.out_dir)
    return data, base_dir


def _overlay_system(data, args):
    _overlay(data, "system.dim", getattr(args, "dim", None))
    _overlay(data, "system.hamiltonian", _file_flag(getattr(args, "hamiltonian", None)))
    _overlay(data, "system.observable", _file_flag(getattr(args, "observable", None)))
    _overlay(data, "system.initial_state", _file_flag(getattr(args, "state", None)))
    _overlay(data, "kappa", getattr(args, "kappa", None))
    _overlay(data, "dt", getattr(args, "dt", None))
    _overlay(data, "n_steps", getattr(args, "steps", None))


def _finish(manifest, files_key="outputs"):
    out = manifest.get(files_key, {})
    for name in out:
        print(f"wrote {name}  sha256={out[name][:12]}...")
    return EXIT_OK


def _cmd_run_trajectory(args):
    data, base_dir = _base_data(args)
    _overlay_system(data, args)
    if args.grid is not None:
        data.get("system", {}).pop("dim", None)
        _overlay(data, "system.grid.points", args.grid)
    _overlay(data, "system.grid.box", args.box)
    _overlay(data, "system.mass", args.mass)
    if args.mode is not None:
        data["mode"] = args.mode
    elif data.get("mode") not in TRAJECTORY_MODES:
        data["mode"] = "nonlinear"
    data["n_trajectories"] = 1
    _overlay(data, "save_stride", args.save_stride)
    cfg = parse_config_data(data, base_dir)
    out_dir, name = None, "trajectory.csv"
    if args.out:
        full = os.path.abspath(args.out)
        out_dir, name = os.path.dirname(full), os.path.basename(full)
    manifest = run_experiment(cfg, jobs=args.jobs, out_dir=out_dir, trajectory_name=name)
    return _finish(manifest)


def _cmd_run_ensemble(args):
    data, base_dir = _base_data(args)
    _overlay_system(data, args)
    if data.get("mode") not in TRAJECTORY_MODES:
        data["mode"] = "nonlinear"
    _overlay(data, "n_trajectories", args.trajectories)
    _overlay(data, "save_stride", args.save_stride)
    cfg = parse_config_data(data, base_dir)
    return _finish(run_experiment(cfg, jobs=args.jobs))


def _cmd_run_me(args):
    data, base_dir = _base_data(args)
    _overlay_system(data, args)
    data["mode"] = "me"
    _overlay(data, "save_stride", args.save_stride)
    cfg = parse_config_data(data, base_dir)
    return _finish(run_experiment(cfg, jobs=args.jobs))


def _cmd_rpi_enumerate(args):
    data, base_dir = _base_data(args)
    _overlay_system(data, args)
    data["mode"] = "rpi-enumerate"
    _overlay(data, "lattice.span", args.lattice_span)
    _overlay(data, "lattice.points", args.lattice_points)
    cfg = parse_config_data(data, base_dir)
    return _finish(run_experiment(cfg, jobs=args.jobs))


def _cmd_free_particle(args):
    data, base_dir = _base_data(args)
    data["mode"] = "free-particle"
    _overlay(data, "system.grid.points", args.grid_points)
    _overlay(data, "system.grid.box", args.box)
    _overlay(data, "system.mass", args.mass)
    _overlay(data, "kappa", args.kappa)
    _overlay(data, "dt", args.dt)
    _overlay(data, "n_steps", args.steps)
    _overlay(data, "save_stride", args.save_stride)
    if args.seeds is not None:
        try:
            data["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigurationError(
                [("seeds", "must be a comma-separated list of integers")]) from None
    data.setdefault("system", {}).setdefault("initial_state", {})
    cfg = parse_config_data(data, base_dir)
    return _finish(run_experiment(cfg, jobs=args.jobs, figures=not args.no_figures))


def _cmd_compare_ensemble(args):
    data, base_dir = _base_data(args)
    _overlay_system(data, args)
    data["mode"] = "compare"
    _overlay(data, "n_trajectories", args.trajectories)
    _overlay(data, "save_stride", args.save_stride)
    _overlay(data, "ensemble_dir", _file_flag(args.ensemble_dir))
    _overlay(data, "me_dir", _file_flag(args.me_dir))
    cfg = parse_config_data(data, base_dir)
    return _finish(run_experiment(cfg, jobs=args.jobs, figures=not args.no_figures))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="contmeas",
        description="Continuous weak-measurement trajectory simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-trajectory", help="one monitored trajectory to CSV")
    _add_common(p)
    _add_matrix_flags(p)
    _add_step_flags(p)
    p.add_argument("--grid", type=int, metavar="N",
                   help="grid points (free particle) instead of --dim")
    p.add_argument("--box", type=float, help="grid box length")
    p.add_argument("--mass", type=float, help="particle mass (grid systems)")
    p.add_argument("--mode", choices=sorted(TRAJECTORY_MODES),
                   help="stepping mode (default nonlinear)")
    p.add_argument("--save-stride", type=int, help="keep every n-th step")
    p.add_argument("--out", metavar="CSV", help="trajectory CSV path")
    p.set_defaults(handler=_cmd_run_trajectory)

    p = sub.add_parser("run-ensemble", help="trajectory ensemble statistics to CSV")
    _add_common(p)
    _add_matrix_flags(p)
    _add_step_flags(p)
    p.add_argument("--trajectories", type=int, help="ensemble size")
    p.add_argument("--save-stride", type=int, help="keep every n-th step")
    p.set_defaults(handler=_cmd_run_ensemble)

    p = sub.add_parser("run-me", help="master-equation evolution to CSV")
    _add_common(p)
    _add_matrix_flags(p)
    _add_step_flags(p)
    p.add_argument("--save-stride", type=int, help="keep every n-th step")
    p.set_defaults(handler=_cmd_run_me)

    p = sub.add_parser("rpi-enumerate",
                       help="brute-force record distribution on a readout lattice")
    _add_common(p)
    _add_matrix_flags(p)
    _add_step_flags(p)
    p.add_argument("--lattice-span", type=float, metavar="SIGMAS",
                   help="lattice half-width beyond the spectrum, in readout sigmas")
    p.add_argument("--lattice-points", type=int, help="lattice point count")
    p.set_defaults(handler=_cmd_rpi_enumerate)

    p = sub.add_parser("free-particle",
                       help="monitored free particle: grid versus moment oracle")
    _add_common(p)
    p.add_argument("--mass", type=float, help="particle mass")
    p.add_argument("--kappa", type=float, help="measurement strength")
    p.add_argument("--grid-points", type=int, help="grid points (power of two)")
    p.add_argument("--box", type=float, help="grid box length")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--steps", type=int, help="number of steps")
    p.add_argument("--seeds", metavar="S1,S2,...", help="noise stream ids to run")
    p.add_argument("--save-stride", type=int, help="keep every n-th step")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(handler=_cmd_free_particle)

    p = sub.add_parser("compare-ensemble",
                       help="trace distance of ensemble average versus master equation")
    _add_common(p)
    _add_matrix_flags(p)
    _add_step_flags(p)
    p.add_argument("--trajectories", type=int, help="ensemble size")
    p.add_argument("--save-stride", type=int, help="keep every n-th step")
    p.add_argument("--ensemble-dir", metavar="DIR",
                   help="reuse ensemble_density.csv from this run directory")
    p.add_argument("--me-dir", metavar="DIR",
                   help="reuse me_density.csv from this run directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(handler=_cmd_compare_ensemble)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
