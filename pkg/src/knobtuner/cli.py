"""Command-line entry points: tune, transfer, report, oracle, refit."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import KnobTunerError
from .knobspace import load_catalog
from .metrics import load_schema
from .models import ForestSpec, forest_fit, pca_fit, select_topk
from .pipeline import (RunPlan, load_hardware, oracle_optimum, reemit_report,
                       run_pipeline, save_models, semi_transfer)
from .environment import load_workload
from .samplepool import SamplePool

log = logging.getLogger(__name__)


def _add_plan_flags(p: argparse.ArgumentParser, for_transfer: bool = False):
    p.add_argument("--catalog", required=not for_transfer,
                   help="knob catalog JSON file")
    p.add_argument("--schema", required=not for_transfer,
                   help="metric schema JSON file")
    p.add_argument("--env", required=not for_transfer,
                   help="synthetic:<spec.json> or driver:<command>")
    p.add_argument("--workload", required=not for_transfer,
                   help="workload spec JSON file")
    p.add_argument("--hardware", required=True,
                   help="hardware profile JSON file or inline JSON")
    p.add_argument("--stage2", choices=("db", "gp"), default="db")
    p.add_argument("--hints", help="hint file for stage 2")
    p.add_argument("--budget-lhs", type=int, default=120)
    p.add_argument("--budget-stage2", type=int, default=None,
                   help="default: 5 for db, 50 for gp")
    p.add_argument("--budget-td3", type=int, default=30)
    p.add_argument("--trust-ratio", type=float, default=0.05)
    p.add_argument("--topk", type=int, default=20)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--pca-var", type=float, default=None,
                       help="variance fraction target (default 0.95)")
    group.add_argument("--pca-k", type=int, default=None,
                       help="fixed component count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="run directory")


def _plan_from_args(args) -> RunPlan:
    pca_var, pca_k = args.pca_var, args.pca_k
    if pca_var is None and pca_k is None:
        pca_var = 0.95
    return RunPlan(
        catalog=args.catalog,
        schema=args.schema,
        env=args.env,
        workload=args.workload,
        hardware=args.hardware,
        out=args.out,
        stage2=args.stage2,
        hints=args.hints,
        budget_lhs=args.budget_lhs,
        budget_stage2=args.budget_stage2,
        budget_td3=args.budget_td3,
        trust_ratio=args.trust_ratio,
        top_k=args.topk,
        pca_variance=pca_var,
        pca_k=pca_k,
        seed=args.seed,
    )


def cmd_tune(args) -> int:
    plan = _plan_from_args(args)

    def progress(sample):
        print(f"trial {sample.trial_index:4d} [{sample.stage:6s}] "
              f"fitness={sample.fitness:.4f} tps={sample.perf.tps:.1f} "
              f"p95={sample.perf.p95_latency_ms:.3f}ms")

    report = run_pipeline(plan, resume=args.resume,
                          on_trial=progress if not args.quiet else None)
    print(f"run complete: {report['total_trials']} trials, "
          f"best fitness {report['best_fitness']:.4f} "
          f"at trial {report['steps_to_best']}")
    print(f"report: {Path(plan.out) / 'report.json'}")
    return 0


def cmd_transfer(args) -> int:
    overrides = {"out": args.out, "seed": args.seed}
    if args.budget_stage2 is not None:
        overrides["budget_stage2"] = args.budget_stage2
    if args.budget_td3 is not None:
        overrides["budget_td3"] = args.budget_td3
    for key in ("schema", "env", "workload", "hints"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    report = semi_transfer(args.from_dir, load_hardware(args.hardware),
                           new_catalog_path=args.catalog, overrides=overrides)
    print(f"transfer complete: {report['total_trials']} trials, "
          f"best fitness {report['best_fitness']:.4f}")
    return 0


def cmd_report(args) -> int:
    report = reemit_report(args.out)
    print(f"re-emitted report for {report['total_trials']} trials "
          f"(best {report['best_fitness']:.4f})")
    return 0


def cmd_oracle(args) -> int:
    catalog = load_catalog(args.catalog)
    schema = load_schema(args.schema)
    workload = load_workload(args.workload)
    hardware = load_hardware(args.hardware)
    config, best = oracle_optimum(args.env, catalog, schema, hardware, workload)
    payload = {"optimum_fitness": best, "optimum_configuration": config.physical}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle.json").write_text(json.dumps(payload, indent=2,
                                                    sort_keys=True) + "\n")
    print(json.dumps({"optimum_fitness": best}, indent=2))
    return 0


def cmd_refit(args) -> int:
    run_dir = Path(args.out)
    plan = RunPlan.from_json(json.loads((run_dir / "plan.json").read_text()))
    catalog = load_catalog(plan.catalog)
    pool = SamplePool.load(run_dir / "pool.jsonl")
    samples = pool.filtered(include_stale=args.include_stale)
    if len(samples) < 2:
        raise KnobTunerError("need >= 2 samples to refit")
    X = np.stack([s.action for s in samples])
    y = np.array([s.fitness for s in samples])
    forest = forest_fit(ForestSpec(n_trees=100, seed=plan.seed), X, y)
    states = np.stack([s.state for s in samples])
    if plan.pca_k is not None:
        pca = pca_fit(states, n_components=plan.pca_k)
    else:
        pca = pca_fit(states, variance_target=plan.pca_variance)
    topk = select_topk(forest.importances, min(plan.top_k, catalog.dimension))
    save_models(run_dir / "models", forest, pca, topk, catalog)
    print(f"refit on {len(samples)} samples; top knobs: "
          f"{[catalog.knobs[i].name for i in topk[:5]]}... pca_k={pca.k}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="knobtuner",
        description="Three-stage DBMS knob auto-tuning: LHS warm start, "
                    "knowledge hints, RF/PCA-reduced TD3 fine-tuning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="run the full pipeline")
    _add_plan_flags(p)
    p.add_argument("--resume", action="store_true",
                   help="continue an interrupted run in --out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("transfer", help="semi-transfer a run to new hardware")
    p.add_argument("--from", dest="from_dir", required=True,
                   help="finished run directory")
    p.add_argument("--hardware", required=True)
    p.add_argument("--catalog", help="replacement catalog (same knob names)")
    p.add_argument("--schema")
    p.add_argument("--env")
    p.add_argument("--workload")
    p.add_argument("--hints")
    p.add_argument("--budget-stage2", type=int, default=None)
    p.add_argument("--budget-td3", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", help="re-emit report files from the pool")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle", help="brute-force optimum of a synthetic env")
    p.add_argument("--catalog", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("refit", help="refit RF/PCA on the full pool")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--include-stale", action="store_true")
    p.set_defaults(func=cmd_refit)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KnobTunerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
