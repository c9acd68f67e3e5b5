"""Command line interface: ``runwaysim {calibrate,generate,run,report,bench}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import calibration as cal
from . import harness as hs
from .policies import PolicyConfig


def _floats(text: str):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _names(text: str):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _add_plan_args(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="base seed of the scenario draws")
    p.add_argument("--strata", type=_floats, default=(0.1, 0.3, 0.5, 0.7, 0.9),
                   help="comma-separated sigma values (default 0.1,0.3,0.5,0.7,0.9)")
    p.add_argument("--count", type=int, default=100, help="scenarios per stratum")
    p.add_argument("--schedule-seed", type=int, default=7, help="seed of the desk schedule")
    p.add_argument("--clock", choices=("virtual", "wall", "process"), default="virtual",
                   help="clock coupling for the dynamic policies")
    p.add_argument("--compression", type=float, default=60.0,
                   help="simulated seconds per CPU second")
    p.add_argument("--policies", type=_names, default=hs.POLICIES,
                   help="comma-separated subset of simheur,detheur,fcfs,dstat")
    p.add_argument("--policy-config", type=Path, default=None,
                   help="JSON file overriding controller parameters")
    p.add_argument("--virtual-costs", type=Path, default=None,
                   help="JSON file overriding the frozen per-operation virtual costs")


def _plan_from_args(args) -> hs.ExperimentPlan:
    extra = {}
    if args.policy_config is not None:
        extra["policy"] = PolicyConfig.from_dict(json.loads(args.policy_config.read_text()))
    if args.virtual_costs is not None:
        doc = json.loads(args.virtual_costs.read_text())
        extra["virtual_costs"] = hs.VirtualCosts(**doc.get("costs", doc))
    return hs.ExperimentPlan(strata=args.strata, scenarios_per_stratum=args.count,
                             base_seed=args.seed, compression=args.compression,
                             clock_mode=args.clock, policies=args.policies,
                             schedule_seed=args.schedule_seed, **extra)


# --- subcommands ----------------------------------------------------------------

def cmd_calibrate(args) -> int:
    if args.write_demo is not None:
        return _write_demo(args.write_demo, args.seed)
    if args.records is None or args.schedule is None:
        print("calibrate: --records and --schedule are required", file=sys.stderr)
        return 2
    records = cal.read_records_csv(args.records)
    sched = {}
    with open(args.schedule, newline="") as fh:
        for row in csv.DictReader(fh):
            a = float(row["sched_arr_min"])
            h = float(row["sched_dep_min"]) - args.q
            sched[int(row["flight_id"])] = (a, h)
    retained = None
    summary = {}
    if not args.no_filter:
        filt = cal.filter_days(records, alpha=args.alpha)
        retained = filt.retained
        summary = {"retained_days": filt.retained, "discarded_days": filt.discarded,
                   "flagged_days": filt.flagged}
    params = cal.fit_all(records, sched, args.sigma, outlier_window=args.outlier_window,
                         retained_days=retained)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cal.save_params_json(params, out)
    n_fb = sum(p.fallback for p in params.values())
    print(f"fitted {len(params)} flights ({n_fb} constant-delay fallbacks) -> {out}")
    if summary:
        print(f"days retained {len(summary['retained_days'])}, "
              f"discarded {len(summary['discarded_days'])}")
        out.with_suffix(".days.json").write_text(json.dumps(summary))
    return 0


def _write_demo(out_dir: Path, seed: int) -> int:
    """Synthetic records and schedule CSVs for trying out ``calibrate``."""
    import numpy as np

    out_dir.mkdir(parents=True, exist_ok=True)
    sched, _ = hs.desk_schedule(seed=7)
    rng = np.random.default_rng(seed)
    n = sched.n
    recs = cal.synthetic_history(sched.a, rng.uniform(-5, 10, n), rng.uniform(12, 25, n), 60,
                                 rng, propagating_days=range(0, 60, 5), outlier_rate=0.01)
    cal.write_records_csv(recs, out_dir / "records.csv")
    with open(out_dir / "schedule.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flight_id", "sched_arr_min", "sched_dep_min", "class"])
        for i in range(n):
            w.writerow([i, repr(sched.a[i]), repr(sched.d[i]), sched.w[i]])
    print(f"wrote {out_dir / 'records.csv'} and {out_dir / 'schedule.csv'}")
    return 0


def cmd_generate(args) -> int:
    plan = _plan_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sched, _ = hs.desk_schedule(plan.schedule_seed)
    scenarios = hs.generate_scenarios(plan, sched)
    hs.save_scenarios(scenarios, out / "scenarios")
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=1))
    (out / "schedule.json").write_text(json.dumps(sched.to_dict(), indent=1))
    print(f"{len(scenarios)} scenarios -> {out / 'scenarios'}")
    return 0


def cmd_run(args) -> int:
    plan = _plan_from_args(args)
    if args.scenarios is not None:
        files = sorted(Path(args.scenarios).glob("*.json"))
        scenarios = [hs.load_scenario(f) for f in files]
    else:
        scenarios = hs.generate_scenarios(plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res_path, fail_path = out / "results.jsonl", out / "failures.jsonl"
    with open(res_path, "w") as rf, open(fail_path, "w") as ff:
        def on_result(r):
            fh = ff if isinstance(r, hs.RunFailure) else rf
            fh.write(json.dumps(r.to_dict()) + "\n")
            fh.flush()
            if args.verbose:
                tag = "FAILED" if isinstance(r, hs.RunFailure) else f"phi={r.objective:.1f}"
                print(f"sigma={r.sigma:g} n={r.scenario} {r.policy}: {tag}", flush=True)

        results, failures = hs.run_experiment(plan, scenarios, workers=args.workers,
                                              on_result=on_result)
    print(f"{len(results)} runs -> {res_path}; {len(failures)} failures -> {fail_path}")
    return 1 if failures else 0


def cmd_report(args) -> int:
    results = []
    for p in args.results:
        results.extend(hs.load_results(p))
    table = hs.compare_policies(results, reference=args.reference)
    formats = _names(args.formats)
    written = hs.emit_reports(table, args.out, formats=formats,
                              results=results if args.per_scenario else None)
    for p in written:
        print(p)
    for r in table.improvements:
        print(f"stratum {r['stratum']}: {r['policy']} vs {r['baseline']}: "
              f"{r['mean_improvement_pct']:.2f}% [{r['ci_low']:.2f}, {r['ci_high']:.2f}] "
              f"(n={r['n']})")
    return 0


def cmd_bench(args) -> int:
    from . import bench

    if args.calibrate:
        res = bench.calibrate_virtual_costs(backend_name=args.backend, n_scenarios=args.count,
                                            seed=args.seed)
        text = json.dumps(res, indent=1)
        print(text)
        if args.out is not None:
            Path(args.out).write_text(text)
        return 0
    print("backends:", ", ".join(bench.available_backends()))
    print(bench.format_rows(bench.kernel_benchmarks(min_time=args.min_time, seed=args.seed)))
    if args.policies:
        print(bench.format_rows(bench.policy_benchmark(n_scenarios=args.count, seed=args.seed)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="runwaysim",
                                 description="Stochastic runway sequencing experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit pre-tactical delay distributions from records")
    p.add_argument("--records", type=Path, help="CSV: flight_id,day,sched_arr_min,actual_arr_min")
    p.add_argument("--schedule", type=Path, help="CSV: flight_id,sched_arr_min,sched_dep_min")
    p.add_argument("--sigma", type=float, default=0.5, help="tactical volatility")
    p.add_argument("--q", type=float, default=15.0,
                   help="minutes after departure when tactical noise starts")
    p.add_argument("--alpha", type=float, default=0.05, help="day-filter significance level")
    p.add_argument("--no-filter", action="store_true", help="skip the propagation day filter")
    p.add_argument("--outlier-window", type=float, default=120.0,
                   help="drop records this many minutes or more from schedule")
    p.add_argument("--out", default="params.json", help="output JSON")
    p.add_argument("--write-demo", type=Path, default=None, metavar="DIR",
                   help="write synthetic records.csv and schedule.csv to DIR and exit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("generate", help="write scenario files for an experiment plan")
    _add_plan_args(p)
    p.add_argument("--out", default="experiment", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run policies on scenarios")
    _add_plan_args(p)
    p.add_argument("--scenarios", type=Path, default=None,
                   help="directory of scenario JSON files (default: generate from the plan)")
    p.add_argument("--workers", type=int, default=1, help="parallel scenario workers")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="comparison tables from results")
    p.add_argument("results", nargs="+", type=Path, help="results.jsonl file(s)")
    p.add_argument("--reference", default="simheur", help="policy compared against the others")
    p.add_argument("--formats", default="csv,json")
    p.add_argument("--per-scenario", action="store_true", help="also write scenarios.csv")
    p.add_argument("--out", default="reports", help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="compiled vs pure-Python benchmarks")
    p.add_argument("--calibrate", action="store_true",
                   help="fit per-operation virtual costs instead of timing kernels")
    p.add_argument("--backend", default="python", help="backend to calibrate on")
    p.add_argument("--policies", action="store_true", help="also time full policy runs")
    p.add_argument("--count", type=int, default=1, help="scenarios to use")
    p.add_argument("--min-time", type=float, default=0.2, help="seconds per kernel timing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write calibration JSON here")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
