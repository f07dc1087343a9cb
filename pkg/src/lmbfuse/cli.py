"""Command-line entry point: ``lmbfuse simulate | replay | eval``.

Exit codes: 0 success, 1 runtime or input failure, 2 usage error.
Set ``LMBFUSE_LOG`` (e.g. ``DEBUG``) to change log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import defaultdict

from .errors import LmbFuseError, SchemaError
from .fusion import FusionCenter
from .interface import StreamHeader, read_records, serialize
from .lmb import FilterConfig
from .metrics import OspatConfig, ospat_sequence
from .sim import SIGMAS, ScenarioConfig, run_monte_carlo, write_results

log = logging.getLogger("lmbfuse")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmbfuse", description="Multi-sensor LMB fusion tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run Monte Carlo trials of a junction scenario")
    sim.add_argument("--config", help="JSON scenario file (e.g. a previous config.json); flags override it")
    sim.add_argument("--scenario", type=int, choices=(1, 2))
    sim.add_argument("--sigma", type=float, choices=SIGMAS)
    sim.add_argument("--trials", type=_positive_int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--steps", type=_positive_int)
    sim.add_argument("--out", required=True)
    sim.add_argument("--jobs", type=_positive_int, default=1)
    sim.add_argument("--transmit-reference", action="store_true", default=None,
                     help="send the measured corner with each detection")
    sim.add_argument("--extent-variant", choices=("caption", "prose"))

    rep = sub.add_parser("replay", help="stream an uplink log through the fusion center")
    rep.add_argument("--registrations", required=True)
    rep.add_argument("--uplink", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--t-cycle", type=float, default=0.1)
    rep.add_argument("--jobs", type=_positive_int, default=1, help="accepted for symmetry; replay is sequential")

    ev = sub.add_parser("eval", help="per-step OSPA-T between truth and track CSVs")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--tracks", required=True)
    ev.add_argument("--p", type=float, default=1.0)
    ev.add_argument("--c", type=float, default=300.0)
    ev.add_argument("--alpha", type=float, default=None)
    return parser


_SIM_FLAGS = {
    "scenario": "scenario", "sigma": "sigma", "trials": "trials", "seed": "seed", "steps": "steps",
    "transmit_reference": "transmit_reference_point", "extent_variant": "extent_variant",
}


def scenario_from_args(args) -> ScenarioConfig:
    base: dict = {}
    if args.config:
        with open(args.config) as fh:
            try:
                base = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(args.config, str(exc)) from None
        if not isinstance(base, dict):
            raise SchemaError(args.config, "expected a JSON object")
    for flag, key in _SIM_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    return ScenarioConfig.from_dict(base)


def cmd_simulate(args) -> int:
    cfg = scenario_from_args(args)
    result = run_monte_carlo(cfg, jobs=args.jobs)
    write_results(result, args.out)
    failed = sum(len(t.errors) for t in result.trials)
    if failed:
        log.warning("%d filter steps raised numerical errors", failed)
    log.info("%d trials in %.1f s", cfg.trials, result.elapsed)
    return 0


def _records(path: str):
    with open(path) as fh:
        yield from read_records(fh)


def cmd_replay(args) -> int:
    center = FusionCenter(FilterConfig(t_cycle=args.t_cycle), producer="replay")
    for no, rec in _records(args.registrations):
        try:
            center.handle(rec)
        except LmbFuseError as exc:
            raise SchemaError(f"{args.registrations} line {no}", str(exc)) from None
    with open(args.out, "w") as out:
        out.write(serialize(StreamHeader(center.producer, args.t_cycle)) + "\n")
        for no, rec in _records(args.uplink):
            try:
                released = center.handle(rec)
            except LmbFuseError as exc:
                raise SchemaError(f"{args.uplink} line {no}", str(exc)) from None
            for msg in released:
                out.write(serialize(msg) + "\n")
        for msg in center.finish():
            out.write(serialize(msg) + "\n")
    return 0


def read_positions_csv(path: str) -> dict:
    """``k -> {label: (x, y)}`` from a CSV with columns k, label, x, y."""
    steps: dict = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return {}
        missing = {"k", "label", "x", "y"} - set(reader.fieldnames)
        if missing:
            raise SchemaError(path, f"missing columns {sorted(missing)}")
        for no, row in enumerate(reader, start=2):
            try:
                steps[int(row["k"])][row["label"]] = (float(row["x"]), float(row["y"]))
            except (TypeError, ValueError):
                raise SchemaError(f"{path} line {no}", "non-numeric k, x or y") from None
    return dict(steps)


def cmd_eval(args) -> int:
    alpha = args.c if args.alpha is None else args.alpha
    try:
        cfg = OspatConfig(p=args.p, c=args.c, alpha=alpha)
    except ValueError as exc:
        print(f"lmbfuse eval: {exc}", file=sys.stderr)
        return 2
    truth = read_positions_csv(args.truth)
    tracks = read_positions_csv(args.tracks)
    if not truth:
        raise SchemaError(args.truth, "no truth rows")
    lo, hi = min(truth), max(truth)
    outside = [k for k in tracks if not lo <= k <= hi]
    if outside:
        raise SchemaError(args.tracks, f"steps {min(outside)}..{max(outside)} lie outside the truth range {lo}..{hi}")
    ks = range(lo, hi + 1)
    values, _ = ospat_sequence([truth.get(k, {}) for k in ks], [tracks.get(k, {}) for k in ks], cfg)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "ospat"])
    for k, v in zip(ks, values):
        w.writerow([k, repr(float(v))])
    return 0


COMMANDS = {"simulate": cmd_simulate, "replay": cmd_replay, "eval": cmd_eval}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LMBFUSE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "simulate" and not args.config and (args.scenario is None or args.sigma is None):
        parser.print_usage(sys.stderr)
        print("lmbfuse simulate: --scenario and --sigma are required without --config", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (LmbFuseError, OSError, ValueError) as exc:
        print(f"lmbfuse {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
