"""Command-line interface.

Verbs:
    run                 start a fresh run from a config file
    resume              continue from a checkpoint
    eval                evaluate a checkpoint's best agent across its pool
    export-terrain      write heightmaps from a checkpoint to CSV / PGM
    inspect-checkpoint  print a checkpoint summary

Exit codes: 0 success, 2 usage/configuration error, 3 runtime failure.
The EPOETSAC_DATA_DIR environment variable overrides the configured data
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, persist, terrain
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.set:
        config = config.with_overrides(_parse_overrides(args.set))
    data_dir = os.environ.get(harness.DATA_DIR_ENV_VAR)
    if data_dir:
        config.data_dir = data_dir
    elif args.data_dir:
        config.data_dir = args.data_dir
    return config


def cmd_run(args) -> int:
    config = _load_config(args)
    result = harness.run(config, iterations=args.iterations)
    print(f"run complete: mode={result.mode} iterations={result.iterations} "
          f"artifacts in {result.run_dir}")
    return EXIT_OK


def cmd_resume(args) -> int:
    data_dir = os.environ.get(harness.DATA_DIR_ENV_VAR) or args.data_dir
    result = harness.resume(args.checkpoint, iterations=args.iterations,
                            data_dir=data_dir)
    print(f"resume complete: mode={result.mode} iterations={result.iterations} "
          f"artifacts in {result.run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state = persist.load_checkpoint_state(args.checkpoint)
    if state.get("sac_only"):
        raise persist.CheckpointError(
            "eval needs a coevolution checkpoint with an environment pool")
    engine = persist.restore_engine(args.checkpoint, harness.make_backend)
    report = harness.evaluate_suite(engine)
    if args.out:
        report.save(args.out)
        print(f"evaluation report written to {args.out}")
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_terrain(args) -> int:
    state = persist.load_checkpoint_state(args.checkpoint)
    if state.get("sac_only"):
        raise persist.CheckpointError(
            "export-terrain needs a coevolution checkpoint")
    os.makedirs(args.out, exist_ok=True)
    formats = [args.format] if args.format != "both" else ["csv", "pgm"]
    count = 0
    for pair_state in state["pairs"]:
        if args.pair is not None and pair_state["pair_id"] != args.pair:
            continue
        spec = persist.spec_from_state(pair_state["env"])
        hm = terrain.compose_heightmap(spec)
        for fmt in formats:
            path = os.path.join(args.out, f"pair_{pair_state['pair_id']:04d}.{fmt}")
            terrain.export_heightmap(hm, path, format=fmt)
            count += 1
    if count == 0:
        raise persist.CheckpointError(
            f"no matching environments in {args.checkpoint}")
    print(f"wrote {count} terrain file(s) to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    summary = harness.checkpoint_summary(args.checkpoint)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epoetsac",
        description="Coevolve terrains and walker policies (ES + SAC).")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="start a fresh run")
    p_run.add_argument("--config", help="YAML config file (defaults if omitted)")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (repeatable; neat.* for "
                            "the terrain-evolution sub-config)")
    p_run.add_argument("--iterations", type=int, default=None,
                       help="iterations to run (default: total_iterations)")
    p_run.add_argument("--data-dir", default=None, help="artifact directory")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="continue from a checkpoint")
    p_resume.add_argument("checkpoint")
    p_resume.add_argument("--iterations", type=int, default=None,
                          help="additional iterations (default: run to "
                               "total_iterations)")
    p_resume.add_argument("--data-dir", default=None)
    p_resume.set_defaults(func=cmd_resume)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint's best agent")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--out", default=None, help="write the JSON report here")
    p_eval.set_defaults(func=cmd_eval)

    p_export = sub.add_parser("export-terrain",
                              help="export heightmaps from a checkpoint")
    p_export.add_argument("checkpoint")
    p_export.add_argument("--out", required=True, help="output directory")
    p_export.add_argument("--format", choices=["csv", "pgm", "both"],
                          default="both")
    p_export.add_argument("--pair", type=int, default=None,
                          help="only this pair id (default: all active)")
    p_export.set_defaults(func=cmd_export_terrain)

    p_inspect = sub.add_parser("inspect-checkpoint",
                               help="print a checkpoint summary")
    p_inspect.add_argument("checkpoint")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except persist.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
