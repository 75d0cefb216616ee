"""Command line entry point: ``slsgrid {synth,simulate,benchmark,report}``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import harness
from .errors import SlsError
from .plant import generate_plant, load_plant, locality_mask
from .sls import dump_response, synthesize_h2, validate_achievability


def _add_config_flags(parser):
    parser.add_argument("--config", type=Path, help="key = value file, one SimConfig field per line")
    group = parser.add_argument_group("config overrides")
    for name, ftype, default in harness.config_fields():
        conv = {"int": int, "float": float}.get(getattr(ftype, "__name__", ftype), str)
        group.add_argument("--" + name.replace("_", "-"), dest=name, type=conv, default=None,
                           metavar=name.upper(), help=f"default {default}")
    parser.add_argument("--out", type=Path, default=None,
                        help=f"output directory (default ${harness.OUT_ENV} or ./slsgrid_out)")


def _config(args, synth=False):
    text = args.config.read_text() if args.config else ""
    overrides = {name: getattr(args, name) for name, *_ in harness.config_fields()
                 if getattr(args, name, None) is not None}
    if synth and "t_mpc" not in overrides:
        # the replanning period plays no part in offline synthesis
        overrides["t_mpc"] = 1
    return harness.parse_config(text, overrides)


def _out(args):
    return args.out if args.out is not None else harness.output_dir()


def _print_report(report):
    print(f"{'controller':<12} {'total':>12} {'satcenlin_stable':>18}")
    for name, total, stable in report.rows():
        print(f"{name:<12} {total:>12.4g} {stable:>18.4g}")
    print(f"trials {report.trials}, SatCenLin stable in {report.stable_count}")
    for trial, errors in report.failed:
        print(f"trial {trial} failed: {errors}", file=sys.stderr)


def cmd_synth(args):
    cfg = _config(args, synth=True)
    if args.plant:
        plant = load_plant(args.plant.read_text())
    else:
        plant = generate_plant(cfg.rows, cfg.cols, cfg.seed, dt=cfg.dt,
                               extra_edge_prob=cfg.extra_edge_prob)
    d = None if args.full else cfg.d
    q = harness.weight_matrix(cfg.q_weight, plant.N, 2)
    r = harness.weight_matrix(cfg.r_weight, plant.N, 1)
    t0 = time.perf_counter()
    response = synthesize_h2(plant, cfg.horizon, locality_mask(plant.topology, d), q, r)
    elapsed = time.perf_counter() - t0
    text = dump_response(response)
    if args.response:
        args.response.write_text(text)
        print(f"wrote {args.response} (T={cfg.horizon}, d={d}, "
              f"residual {validate_achievability(plant, response):.2e}, {elapsed:.2f} s)")
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args):
    cfg = _config(args)
    result = harness.run_trial(cfg, cfg.seed, trial=0)
    report = harness.summarize([result])
    harness.emit_report(report, [result], _out(args), cfg.probe_node, plots=not args.no_plots)
    for name in harness.CONTROLLERS:
        print(f"{name:<12} cost {result.costs.get(name, float('nan')):.6g} "
              f"normalized {result.normalized.get(name, float('nan')):.4g} "
              f"solves {result.online_solves.get(name, 0)}")
    for name, err in result.errors.items():
        print(f"{name}: {err}", file=sys.stderr)
    return 1 if result.errors else 0


def cmd_benchmark(args):
    cfg = _config(args)
    report, results = harness.run_benchmark(cfg)
    harness.emit_report(report, results, _out(args), cfg.probe_node, plots=not args.no_plots)
    _print_report(report)
    return 1 if report.failed else 0


def cmd_report(args):
    results = harness.load_results(args.dumps)
    if not results:
        print(f"no trial dumps in {args.dumps}", file=sys.stderr)
        return 1
    report = harness.summarize(results)
    harness.emit_report(report, results, _out(args), args.probe_node, plots=not args.no_plots)
    _print_report(report)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="slsgrid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="offline SLS synthesis; prints the system response")
    _add_config_flags(p)
    p.add_argument("--plant", type=Path, help="plant dump to synthesize for (else generate one)")
    p.add_argument("--response", type=Path, help="write the response here instead of stdout")
    p.add_argument("--full", action="store_true", help="no locality constraint")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="one trial of all four controllers")
    _add_config_flags(p)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="many trials; cost table")
    _add_config_flags(p)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="re-render CSVs and plots from trial dumps")
    p.add_argument("dumps", type=Path, help="directory with trial_<id>.json files")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--probe-node", type=int, default=-1)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SlsError, ValueError, OSError) as exc:
        print(f"slsgrid: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
