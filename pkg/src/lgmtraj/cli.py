"""Command-line entry point: ``bench``, ``race <scenario>`` and ``trace <scenario>``.

Exit codes: 0 success, 2 scenario error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor

from . import bench, scenario
from .poly import SolverError
from .sim import run_race
from .trace import ModificationError, columns, run_trace

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_SOLVER = 3

RACE_COLUMNS = (
    "speed_limit",
    "inflation",
    "ref_max_speed",
    "ref_mean_speed",
    "max_speed",
    "mean_speed",
    "elapsed_time",
    "success_rate",
    "speed_flagged",
    "regenerations",
    "lgm_count",
    "dropped",
    "solver_failures",
)
BENCH_COLUMNS = ("label", "size", "mean", "std", "repetitions")


def _cell(v):
    # repr round-trips exactly and never depends on locale
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(stream, header, cols, rows):
    stream.write(f"# {header}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(v) for v in r])


def write_json(stream, meta, cols, rows):
    doc = dict(meta)
    doc["columns"] = list(cols)
    doc["rows"] = [dict(zip(cols, r)) for r in rows]
    json.dump(doc, stream, indent=2, allow_nan=False)
    stream.write("\n")


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _emit(args, meta, cols, rows, extra_header=""):
    header = " ".join(f"{k}={v}" for k, v in meta.items()) + extra_header
    with _output(args.out) as fh:
        if args.format == "json":
            write_json(fh, meta, cols, rows)
        else:
            write_csv(fh, header, cols, rows)


def cmd_bench(args):
    params = {
        "repetitions": args.repetitions,
        "warmup": args.warmup,
        "solve_counts": list(bench.SOLVE_COUNTS),
        "lgm_counts": list(bench.LGM_COUNTS),
    }
    report = bench.run_benchmarks(args.repetitions, args.warmup, args.seed)
    rows = [[r[c] for c in BENCH_COLUMNS] for r in report.rows()]
    meta = {"config": scenario.config_hash(params), "seed": args.seed}
    summary = report.as_dict()
    ratios = {k: v for k, v in summary.items() if k != "rows"}
    meta.update(ratios)
    _emit(args, meta, BENCH_COLUMNS, rows)
    return EXIT_OK


def race_rows(doc, seed, timing=None):
    out = []
    for cfg in scenario.race_configs(doc, timing):
        res = run_race(cfg, seed)
        out.append([getattr(res, c) for c in RACE_COLUMNS])
    return out


def cmd_race(args):
    doc = scenario.load(args.scenario, "race")
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    rows = race_rows(doc, seed, args.mode)
    meta = {"config": scenario.config_hash(doc), "seed": seed}
    _emit(args, meta, RACE_COLUMNS, rows)
    return EXIT_OK


def cmd_trace(args):
    doc = scenario.load(args.scenario, "trace")
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    sc = scenario.trace_scenario(doc, args.mode)
    if sc.timing == "wall":
        with ThreadPoolExecutor(max_workers=1) as ex:
            run = run_trace(sc, ex)
    else:
        run = run_trace(sc)
    cols = columns(sc.vehicle is not None)
    meta = {"config": scenario.config_hash(doc), "seed": seed}
    _emit(args, meta, cols, [r.row() for r in run.records])
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lgmtraj", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--mode", choices=("wall", "virtual"), default=None,
                        help="timing mode; overrides the scenario (default virtual)")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", parents=[common], help="solve vs modifier timing")
    b.add_argument("--repetitions", type=int, default=100)
    b.add_argument("--warmup", type=int, default=10)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("race", parents=[common], help="race grid over speed limits and inflations")
    r.add_argument("scenario")
    r.set_defaults(func=cmd_race)

    t = sub.add_parser("trace", parents=[common], help="sampled reference trace")
    t.add_argument("scenario")
    t.set_defaults(func=cmd_trace)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        if args.seed is None:
            args.seed = 0
        if args.repetitions < 1 or args.warmup < 0:
            print("error: --repetitions must be >= 1 and --warmup >= 0", file=sys.stderr)
            return EXIT_SCHEMA
    try:
        return args.func(args)
    except (scenario.ScenarioError, ModificationError) as exc:
        errors = getattr(exc, "errors", [str(exc)])
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
