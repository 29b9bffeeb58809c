"""Command-line entry point.

Subcommands: ser-sweep, convergence, steering-scan, channel-dump run
experiments from a flat TOML config (overridable with --set key=value);
validate runs the built-in oracle suite. Exit codes: 0 success, 1
runtime failure, 2 configuration error.
"""

import argparse
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import channel as chan
from . import harness
from .harness import ConfigError, ExperimentConfig
from .validate import run_validation


def _parse_set(pairs):
    """Parse repeated --set key=value flags; values use TOML literal syntax."""
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        try:
            out[key] = tomllib.loads(f"v = {value}")["v"]
        except tomllib.TOMLDecodeError:
            out[key] = value.strip()
    return out


def _load_config(path, overrides, default_name=None):
    if path is None:
        raw = {}
    else:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}")
    if default_name is not None:
        raw.setdefault("name", default_name)
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


def _common_flags(sub):
    sub.add_argument("--config", help="flat TOML scenario file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    sub.add_argument("--out", default="results", help="output directory")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--threads", type=int, help="trial-level worker processes")


def _apply_cli_overrides(args, overrides):
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return overrides


def _emit(curve, out_dir):
    csv_path, json_path = harness.emit_results(curve, out_dir)
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")


def cmd_ser_sweep(args):
    config = _load_config(args.config, _apply_cli_overrides(args, _parse_set(args.set)))
    _emit(harness.run_experiment(config), args.out)
    return 0


def cmd_convergence(args):
    overrides = _apply_cli_overrides(args, _parse_set(args.set))
    config = _load_config(args.config, overrides, default_name="convergence")
    _emit(harness.run_convergence(config), args.out)
    return 0


def cmd_steering_scan(args):
    overrides = _apply_cli_overrides(args, _parse_set(args.set))
    config = _load_config(args.config, overrides, default_name="steering-scan")
    if config.sweep is None:
        center = config.sector_center_deg
        grid = tuple(float(v) for v in np.linspace(center - 20.0, center + 20.0, 9))
        config = config.replace(sweep="steering_angle_deg", sweep_values=grid)
    elif config.sweep != "steering_angle_deg":
        raise ConfigError("steering-scan sweeps steering_angle_deg; "
                          f"config sweeps {config.sweep!r}")
    _emit(harness.run_experiment(config), args.out)
    return 0


def cmd_channel_dump(args):
    overrides = _apply_cli_overrides(args, _parse_set(args.set))
    config = _load_config(args.config, overrides, default_name="channel")
    rng = harness.trial_rng(config.seed, 0)
    coupling = None
    if config.coupling:
        z = chan.impedance_matrix(config.geometry)
        coupling = chan.coupling_matrix(z, chan.MutualCouplingParams())
    realization = chan.generate_channel(
        config.geometry, config.sector, config.num_users, config.num_paths,
        rng, betas=np.full(config.num_users, config.beta_k), coupling=coupling,
        normalize=config.normalization)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{config.name}-{config.seed}.csv")
    harness.channel_to_csv(realization, path)
    print(f"wrote {path}")
    return 0


def cmd_validate(args):
    overrides = _parse_set(args.set)
    try:
        return run_validation(only=args.only, overrides=overrides)
    except KeyError as exc:
        raise ConfigError(str(exc))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sdmimo",
        description="MIMO detection experiments with spatial sigma-delta ADCs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ser-sweep", help="run a SER sweep experiment")
    _common_flags(p)
    p.set_defaults(func=cmd_ser_sweep)

    p = sub.add_parser("convergence", help="per-iteration SER of the VB detectors")
    _common_flags(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("steering-scan", help="SER versus steering angle")
    _common_flags(p)
    p.set_defaults(func=cmd_steering_scan)

    p = sub.add_parser("channel-dump", help="write one channel realization as CSV")
    _common_flags(p)
    p.set_defaults(func=cmd_channel_dump)

    p = sub.add_parser("validate", help="run the built-in oracle suite")
    p.add_argument("--only", help="run a single oracle by name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override an oracle parameter (repeatable)")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
