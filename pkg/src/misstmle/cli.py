"""Command-line entry points: simgen, estimate, study, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import core, datagen, harness, missing, report
from .core import RngStream, format_float
from .tmle import TmleConfig


def _cmd_simgen(args) -> int:
    model = datagen.default_complete_model(args.scenario)
    stream = RngStream(args.seed)
    d, pot = datagen.generate_complete_with_potentials(model, args.n, stream.child(0))
    if args.mdag != datagen.MDAG_NONE:
        mmodel = datagen.default_missingness_model(args.scenario, args.mdag)
        d = datagen.impose_missingness(d, mmodel, stream.child(1))
    out = Path(args.out)
    core.write_csv(d, str(out))
    truth = {
        "true_effect": pot.true_effect,
        "scenario": args.scenario,
        "mdag": args.mdag,
        "seed": args.seed,
        "y_exposed": [float(v) for v in pot.y_exposed],
        "y_unexposed": [float(v) for v in pot.y_unexposed],
    }
    sidecar = out.with_suffix(".truth.json") if out.suffix == ".csv" else Path(str(out) + ".truth.json")
    sidecar.write_text(json.dumps(truth), encoding="utf-8")
    print(f"wrote {out} and {sidecar}")
    return 0


def _cmd_estimate(args) -> int:
    d = core.read_csv(args.data)
    res = missing.estimate(d, args.method, TmleConfig(), RngStream(args.seed),
                           m=args.m, cycles=args.cycles)
    print("method,psi,se,ci_lo,ci_hi,n_used")
    print(",".join([res.method, format_float(res.psi), format_float(res.se),
                    format_float(res.ci_lo), format_float(res.ci_hi), str(res.n_used)]))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def load_study_config(path: str | None, overrides: dict) -> harness.StudyConfig:
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    merged = {
        "scenarios": tuple(raw.get("scenarios", datagen.SCENARIOS)),
        "mdags": tuple(raw.get("mdags", (datagen.MDAG_A, datagen.MDAG_B))),
        "methods": tuple(raw.get("methods", missing.METHODS)),
        "n_per_dataset": int(raw.get("n", 1000)),
        "n_reps": int(raw.get("reps", 200)),
        "m": int(raw.get("m", 5)),
        "cycles": int(raw.get("cycles", 10)),
        "master_seed": int(raw.get("seed", 20260810)),
        "truth": float(raw.get("truth", datagen.TRUE_EFFECT)),
        "jobs": int(raw.get("jobs", 1)),
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return harness.StudyConfig(**merged)


def _cmd_study(args) -> int:
    cfg = load_study_config(args.config, {
        "n_reps": args.reps, "n_per_dataset": args.n,
        "master_seed": args.seed, "jobs": args.jobs,
    })

    def progress(done, total):
        if args.quiet:
            return
        if done == total or done % max(1, total // 100) == 0:
            print(f"\r{done}/{total} cells", end="", flush=True, file=sys.stderr)

    rows = harness.run_study(cfg, progress=progress)
    if not args.quiet:
        print("", file=sys.stderr)
    written = report.emit_report(rows, cfg, args.out)
    n_failed = sum(1 for r in rows if r.failed)
    print(f"{len(rows)} result rows ({n_failed} failed); wrote {len(written)} files to {args.out}")
    return 0


def _cmd_report(args) -> int:
    written = report.render_from_results(args.dir)
    print(f"re-rendered {len(written)} files in {args.dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="misstmle",
                                     description="TMLE under missing data: simulation and estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simgen", help="generate a simulated dataset (plus potential-outcome sidecar)")
    p.add_argument("--scenario", choices=datagen.SCENARIOS, required=True)
    p.add_argument("--mdag", choices=(datagen.MDAG_A, datagen.MDAG_B, datagen.MDAG_NONE), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simgen)

    p = sub.add_parser("estimate", help="estimate the ACE from a CSV with one missing-data method")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=missing.METHODS, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--m", type=int, default=5, help="imputation count for MI methods")
    p.add_argument("--cycles", type=int, default=10, help="chained-equation cycles for MI methods")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("study", help="run the Monte Carlo study grid")
    p.add_argument("--config", default=None, help="TOML config mirroring StudyConfig")
    p.add_argument("--out", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("report", help="re-render metrics/report/charts from an existing results.csv")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
