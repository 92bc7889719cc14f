"""Command-line entry point: ``diffperf run|allocate|sweep|validate``."""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

from .exceptions import DiffPerfError, SimulationAbort, ValidationError
from .inter_class import InterClassInput, allocate_closed_form
from .runner import planned_arrivals, run_scenario, write_report
from .scenario import SWEEP_PARAMS, load_scenario, shipped_scenarios, with_param

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT = 0, 2, 3

log = logging.getLogger("diffperf")


def _resolve(path):
    """A file path, or the name of a bundled scenario such as ``scenario1``."""
    if os.path.exists(path):
        return path
    shipped = shipped_scenarios()
    if path in shipped:
        return shipped[path]
    raise ValidationError("--scenario", f"no such file or bundled scenario: {path!r}")


def _load(args):
    cfg = load_scenario(_resolve(args.scenario))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "baseline", None):
        cfg = replace(cfg, controller=f"baseline:{args.baseline}")
    return cfg


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(name, f"expected comma-separated numbers: {exc}") from exc


def cmd_run(args):
    cfg = _load(args)
    log.info("running %s (seed %d, %g s)", cfg.name, cfg.seed, cfg.duration)
    report = run_scenario(cfg)
    write_report(report, args.out)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_allocate(args):
    weights = _floats(args.weights, "--weights")
    counts = [int(c) for c in _floats(args.counts, "--counts")]
    try:
        inp = InterClassInput.from_weights(weights, counts, args.capacity, args.alpha)
    except ValueError as exc:
        raise ValidationError("allocate", str(exc)) from exc
    alloc = allocate_closed_form(inp)
    ids = inp.class_ids
    print(f"{'class':>6} {'weight':>8} {'flows':>6} {'X_s (Mbps)':>12} {'per flow (Mbps)':>16}")
    for cid in ids:
        n = inp.count(cid)
        per = alloc[cid] / n / 1e6 if n else float("nan")
        print(f"{cid:>6} {inp.weight(cid):>8g} {n:>6d} {alloc[cid] / 1e6:>12.3f} {per:>16.4f}")
    live = [c for c in ids if inp.count(c)]
    for i, a in enumerate(live):
        for b in live[i + 1:]:
            ratio = (alloc[a] / inp.count(a)) / (alloc[b] / inp.count(b))
            print(f"per-flow ratio {a}:{b} = {ratio:.6f}")
    return EXIT_OK


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMS:
        raise ValidationError("--param", f"expected one of {SWEEP_PARAMS}")
    values = _floats(args.values, "--values")
    if not values:
        raise ValidationError("--values", "at least one value is required")
    base = _load(args)
    rows = []
    for v in values:
        cfg = with_param(base, args.param, v)
        report = run_scenario(cfg)
        write_report(report, os.path.join(args.out, f"{args.param}={v:g}"))
        s = report.summary
        rows.append({args.param: v, **{k: s[k] for k in (
            "aggregate_throughput_bps", "jain_index", "mean_qoe", "mean_stall_s",
            "mean_startup_s", "mean_utilization", "n_clients")},
            **{f"n_{k}": n for k, n in sorted(s["n_by_subclass"].items())}})
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def cmd_validate(args):
    paths = [args.scenario] if args.scenario else list(shipped_scenarios())
    for p in paths:
        cfg = load_scenario(_resolve(p))
        planned_arrivals(cfg)
        print(f"ok  {p}  ({cfg.name}, {cfg.duration:g} s, "
              f"{'baseline' if cfg.is_baseline else 'diffperf'})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="diffperf",
                                     description="Differentiated bandwidth allocation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path or bundled name (scenario1, scenario2, ...)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--baseline", metavar="CC", default=None,
                       help="replace the controller with the null plan under this cc model")

    p = sub.add_parser("run", help="run one scenario and write CSV reports")
    scenario_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("allocate", help="one-shot inter-class allocation")
    p.add_argument("-w", "--weights", required=True, help="comma-separated class weights")
    p.add_argument("-n", "--counts", required=True, help="comma-separated flow counts")
    p.add_argument("-C", "--capacity", type=float, required=True, help="capacity in bit/s")
    p.add_argument("-a", "--alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("sweep", help="one run per parameter value")
    scenario_args(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="validate a scenario (default: all bundled ones)")
    p.add_argument("--scenario", default=None)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DIFFPERF_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except DiffPerfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
