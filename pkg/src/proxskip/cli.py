"""Command-line entry point.

Subcommands:
  run       execute an experiment config, writing CSVs plus manifest.json
  tune      grid-search stepsizes for the config's methods and print them
  plotdata  flatten run CSVs into long-format plot data along an axis
  verify    run the built-in invariant suite and exit nonzero on failure
"""

import argparse
import json
import sys

from . import decentralized as dec
from .harness import (ConfigError, build_problem, build_split, build_topology,
                      load_config, plotdata_from_manifest, reference_minimizer,
                      run_experiment, tune_stepsize, DECENTRALIZED_METHODS)
from .verify import run_verify


def _cmd_run(args):
    cfg = load_config(args.config)
    manifest = run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    diverged = [e["file"] for e in manifest["runs"] if e["diverged"]]
    print(f"wrote {len(manifest['runs'])} runs to "
          f"{args.out or cfg.out} (config {manifest['config_hash']})")
    if diverged:
        print(f"diverged: {', '.join(diverged)}", file=sys.stderr)
    return 0


def _cmd_tune(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg.problem)
    split = build_split(cfg, problem)
    mix = None
    if any(m.name in DECENTRALIZED_METHODS for m in cfg.methods):
        mix = dec.mixing_matrix(build_topology(cfg, split.n))
    probe = reference_minimizer(problem)
    budget = cfg.comm_budget or 200
    result = {}
    for method in cfg.methods:
        result[method.name] = tune_stepsize(cfg, method, problem, split, mix,
                                            probe, budget)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_plotdata(args):
    text = plotdata_from_manifest(args.manifest, args.axis)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_verify(args):
    return 1 if run_verify() else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="proxskip",
        description="Prox-skipping optimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_run.set_defaults(func=_cmd_run)

    p_tune = sub.add_parser("tune", help="grid-search stepsizes")
    p_tune.add_argument("config")
    p_tune.set_defaults(func=_cmd_tune)

    p_plot = sub.add_parser("plotdata", help="emit long-format plot data")
    p_plot.add_argument("manifest")
    p_plot.add_argument("--axis", choices=("comm", "grad", "iter"), default="comm")
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=_cmd_plotdata)

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    p_verify.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
