"""Run orchestration: stages 1-3, semi-transfer, persistence, reports.

A run directory holds plan.json, pool.jsonl, models/, agent/, report.json
and series.csv. Every trial's environment seed derives from (master seed,
stage key, trial index), never wall clock, so killing a run after any
trial and resuming replays the recorded observations bit-exactly and then
continues with the identical remaining trial sequence.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .coarse import build_feasible_space, coarse_tune
from .environment import (DriverEnv, SyntheticEnv, WorkloadSpec,
                          load_synthetic_spec, load_workload,
                          synthetic_optimum)
from .errors import DriverError, KnobTunerError, PoolError, TrialError
from .hints import hint_tune, load_hints
from .knobspace import (Configuration, HardwareProfile, KnobCatalog,
                        TrustRegion, clip_to_trust_region,
                        default_configuration, denormalize, load_catalog)
from .metrics import MetricSchema, aggregate_frames, fitness, load_schema
from .models import (ForestSpec, PCAModel, forest_fit, pca_fit, select_topk)
from .samplepool import Sample, SamplePool, migrate_pool
from .sampling import LHSPlan, lhs_sample
from .td3 import TD3Config, td3_tune

log = logging.getLogger(__name__)

STAGE2_DEFAULT_BUDGET = {"db": 5, "gp": 50}
TRANSFER_DEFAULT_BUDGET = 15


@dataclass
class RunPlan:
    catalog: str
    schema: str
    env: str                       # "synthetic:<spec.json>" | "driver:<command>"
    workload: str
    hardware: str                  # path or inline JSON object
    out: str
    stage2: str = "db"
    hints: str | None = None
    budget_lhs: int = 120
    budget_stage2: int | None = None   # backend default when None
    budget_td3: int = 30
    trust_ratio: float = 0.05
    top_k: int = 20
    pca_variance: float | None = 0.95
    pca_k: int | None = None
    seed: int = 0
    mode: str = "tune"             # tune | transfer (shapes the report)

    def __post_init__(self):
        if self.stage2 not in ("db", "gp"):
            raise ValueError("stage2 backend must be db or gp")
        if self.mode not in ("tune", "transfer"):
            raise ValueError("mode must be tune or transfer")
        for name in ("budget_lhs", "budget_td3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.budget_stage2 is not None and self.budget_stage2 < 0:
            raise ValueError("budget_stage2 must be >= 0")
        if not (0.0 < self.trust_ratio <= 1.0):
            raise ValueError("trust_ratio must be in (0, 1]")
        if (self.pca_variance is None) == (self.pca_k is None):
            raise ValueError("specify exactly one of pca_variance / pca_k")

    def stage2_budget(self) -> int:
        if self.budget_stage2 is not None:
            return self.budget_stage2
        return STAGE2_DEFAULT_BUDGET[self.stage2]

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "catalog", "schema", "env", "workload", "hardware", "out", "stage2",
            "hints", "budget_lhs", "budget_stage2", "budget_td3", "trust_ratio",
            "top_k", "pca_variance", "pca_k", "seed", "mode")}

    @classmethod
    def from_json(cls, obj: dict) -> "RunPlan":
        return cls(**obj)


def load_hardware(value) -> HardwareProfile:
    """Accept a JSON file path or an inline JSON object string."""
    text = str(value).strip()
    if text.startswith("{"):
        return HardwareProfile.from_json(json.loads(text))
    return HardwareProfile.from_json(json.loads(Path(value).read_text()))


def build_environment(plan_env: str, catalog: KnobCatalog, schema: MetricSchema,
                      hardware: HardwareProfile):
    kind, _, rest = plan_env.partition(":")
    if not rest:
        raise ValueError("--env must look like synthetic:<spec.json> or "
                         "driver:<command>")
    if kind == "synthetic":
        spec = load_synthetic_spec(rest, catalog)
        return SyntheticEnv(spec, catalog, schema, hardware)
    if kind == "driver":
        return DriverEnv(rest, catalog, schema)
    raise ValueError(f"unknown environment kind {kind!r}")


class TrialRunner:
    """Evaluates configurations, appends pool samples, and replays records.

    When resuming, previously recorded samples are consumed in trial order
    instead of re-evaluating; the recorded action must match what the
    stage logic asks for, which catches seed or plan drift.
    """

    def __init__(self, env, workload: WorkloadSpec, pool: SamplePool,
                 master_seed: int, recorded=(), on_trial=None):
        self.env = env
        self.workload = workload
        self.pool = pool
        self.master_seed = master_seed
        self.recorded = list(recorded)
        self.on_trial = on_trial

    @property
    def catalog(self) -> KnobCatalog:
        return self.env.catalog

    @property
    def hardware(self) -> HardwareProfile:
        return self.env.hardware

    def run(self, config: Configuration, stage: str) -> Sample | None:
        trial_index = (self.pool.samples[-1].trial_index + 1) if self.pool.samples \
            else 1
        pos = len(self.pool.samples)
        if pos < len(self.recorded):
            rec = self.recorded[pos]
            if rec.stage != stage:
                raise PoolError(
                    f"resume mismatch at trial {rec.trial_index}: recorded stage "
                    f"{rec.stage!r}, expected {stage!r}")
            if not np.allclose(rec.action, config.normalized, atol=1e-9):
                raise PoolError(
                    f"resume mismatch at trial {rec.trial_index}: recorded action "
                    "differs from the replayed one")
            self.pool.append(rec)
            if self.on_trial is not None:
                self.on_trial(rec)
            return rec
        seed = rngmod.subseed(self.master_seed, rngmod.KEY_ENV, trial_index)
        try:
            obs = self.env.evaluate(config, self.workload, seed)
        except (TrialError, DriverError) as e:
            log.warning("trial %d (%s) failed: %s", trial_index, stage, e)
            return None
        state = aggregate_frames(self.env.schema, obs.frames)
        fit = fitness(obs.perf)
        sample = Sample(state=state, action=config.normalized, perf=obs.perf,
                        fitness=fit, stage=stage, trial_index=trial_index,
                        seed_info={"seed": seed, "wall_s": obs.wall_time_s})
        self.pool.append(sample)
        if self.on_trial is not None:
            self.on_trial(sample)
        return sample


@dataclass
class StageSummary:
    stage: str
    trials: int
    best_fitness: float | None
    best_trial: int | None
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"stage": self.stage, "trials": self.trials,
                "best_fitness": self.best_fitness, "best_trial": self.best_trial,
                "info": self.info}


def _summarize(samples, stage: str, info=None) -> StageSummary:
    # stale (migrated) samples never count as this run's trials
    mine = [s for s in samples if s.stage == stage and not s.stale]
    if not mine:
        return StageSummary(stage=stage, trials=0, best_fitness=None,
                            best_trial=None, info=info or {})
    best = mine[0]
    for s in mine[1:]:
        if s.fitness > best.fitness:
            best = s
    return StageSummary(stage=stage, trials=len(mine), best_fitness=best.fitness,
                        best_trial=best.trial_index, info=info or {})


def reconstruct_summaries(plan: RunPlan, pool: SamplePool, run_dir) -> list:
    """The report's stage summaries, derivable from plan + pool + artifacts.

    Used for the first emission and for re-emission alike so the two are
    byte-identical.
    """
    samples = pool.samples
    stage2_name = "hint" if plan.stage2 == "db" else "coarse"
    td3_info = {"budget": plan.budget_td3}
    sel_path = Path(run_dir) / "models" / "selection.json"
    if plan.budget_td3 > 0 and sel_path.exists():
        sel = json.loads(sel_path.read_text())
        td3_info["selected_knobs"] = sel["topk_names"]
        td3_info["pca_k"] = sel["pca_k"]
    out = []
    if plan.mode == "tune":
        out.append(_summarize(samples, "lhs"))
    out.append(_summarize(samples, stage2_name,
                          {"backend": plan.stage2,
                           "budget": plan.stage2_budget()}))
    out.append(_summarize(samples, "td3", td3_info))
    return out


# -------------------------------------------------------------------- stages
def run_stage1(plan: RunPlan, pool: SamplePool, env, runner: TrialRunner) -> StageSummary:
    """LHS warm start: stratified points clipped around the default config."""
    catalog = env.catalog
    n = plan.budget_lhs
    if n > 0:
        design = lhs_sample(LHSPlan(dimension=catalog.dimension, count=n,
                                    seed=rngmod.subseed(plan.seed, rngmod.KEY_LHS)))
        center = default_configuration(catalog).normalized
        tr = TrustRegion(center=center, ratio=plan.trust_ratio)
        for row in design:
            config = denormalize(catalog, clip_to_trust_region(tr, row))
            runner.run(config, "lhs")
    return _summarize(pool.samples, "lhs")


def run_stage2(plan: RunPlan, pool: SamplePool, env, runner: TrialRunner) -> StageSummary:
    budget = plan.stage2_budget()
    stage = "hint" if plan.stage2 == "db" else "coarse"
    if budget == 0:
        return _summarize(pool.samples, stage, {"backend": plan.stage2, "budget": 0})
    if not pool.samples:
        raise PoolError("stage 2 needs at least one pool sample as baseline")
    if plan.hints is None:
        raise KnobTunerError(f"stage-2 backend {plan.stage2!r} requires --hints")
    baseline = pool.best_by_fitness()
    base_cfg = denormalize(env.catalog, baseline.action)
    entries = load_hints(plan.hints, env.catalog)
    seed = rngmod.subseed(plan.seed, rngmod.KEY_STAGE2)
    if plan.stage2 == "db":
        hint_tune(runner, entries, budget, base_cfg, seed,
                  baseline_fitness=baseline.fitness)
    else:
        space = build_feasible_space(entries, env.catalog, env.hardware)
        coarse_tune(runner, space, budget, seed, base_cfg,
                    baseline_fitness=baseline.fitness)
    return _summarize(pool.samples, stage,
                      {"backend": plan.stage2, "budget": budget})


def fit_reduction_models(plan: RunPlan, pool: SamplePool, catalog: KnobCatalog,
                         include_stale: bool = False):
    """RF importances on warm-start actions, PCA on warm-start states."""
    lhs_samples = pool.filtered(stage="lhs", include_stale=include_stale)
    if len(lhs_samples) < 2:
        raise PoolError("need >= 2 warm-start samples to fit RF/PCA")
    X = np.stack([s.action for s in lhs_samples])
    y = np.array([s.fitness for s in lhs_samples])
    forest = forest_fit(
        ForestSpec(n_trees=100, features_per_split="all",
                   seed=rngmod.subseed(plan.seed, rngmod.KEY_MODELS, 1)), X, y)
    states = np.stack([s.state for s in lhs_samples])
    if plan.pca_k is not None:
        pca = pca_fit(states, n_components=plan.pca_k)
    else:
        pca = pca_fit(states, variance_target=plan.pca_variance)
    k = min(plan.top_k, catalog.dimension)
    topk = select_topk(forest.importances, k)
    return forest, pca, topk


def run_stage3(plan: RunPlan, pool: SamplePool, env, runner: TrialRunner,
               models_dir=None, agent_dir=None,
               include_stale_fit: bool = False) -> StageSummary:
    if plan.budget_td3 == 0:
        return _summarize(pool.samples, "td3", {"budget": 0})
    forest, pca, topk = fit_reduction_models(plan, pool, env.catalog,
                                             include_stale=include_stale_fit)
    fresh = pool.filtered(include_stale=False)
    start_sample = None
    for s in fresh:
        if start_sample is None or s.fitness > start_sample.fitness:
            start_sample = s
    if start_sample is None:
        start_sample = pool.best_by_fitness()
    start_cfg = denormalize(env.catalog, start_sample.action)
    cfg = TD3Config(seed=rngmod.subseed(plan.seed, rngmod.KEY_TD3))
    agents: list = []
    td3_tune(runner, pca, topk, plan.budget_td3, start_cfg, start_sample.state,
             cfg, reference_fitness=start_sample.fitness,
             baseline_fitness=start_sample.fitness, agent_out=agents)
    if models_dir is not None:
        save_models(models_dir, forest, pca, topk, env.catalog)
    if agent_dir is not None and agents:
        agents[0].save(agent_dir)
    return _summarize(pool.samples, "td3", {
        "budget": plan.budget_td3,
        "selected_knobs": [env.catalog.knobs[i].name for i in topk],
        "pca_k": pca.k,
    })


def save_models(models_dir, forest, pca, topk, catalog: KnobCatalog) -> None:
    models_dir = Path(models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    (models_dir / "forest.json").write_text(
        json.dumps(forest.to_json()) + "\n")
    (models_dir / "pca.json").write_text(json.dumps(pca.to_json()) + "\n")
    (models_dir / "selection.json").write_text(json.dumps({
        "topk_indices": [int(i) for i in topk],
        "topk_names": [catalog.knobs[i].name for i in topk],
        "importances": forest.importances.tolist(),
        "explained_variance_ratio": pca.explained_variance_ratio.tolist(),
        "pca_k": pca.k,
    }, indent=2) + "\n")


# -------------------------------------------------------------------- report
def build_report(pool: SamplePool, summaries, catalog: KnobCatalog,
                 first_trial: int = 1, artifacts=None) -> dict:
    rows = [s for s in pool.samples
            if s.trial_index >= first_trial and not s.stale]
    best = None
    for s in rows:
        if best is None or s.fitness > best.fitness:
            best = s
    series = [{
        "trial": s.trial_index,
        "stage": s.stage,
        "fitness": s.fitness,
        "tps": s.perf.tps,
        "p95_ms": s.perf.p95_latency_ms,
        "qps": s.perf.qps,
        "wall_s": s.seed_info.get("wall_s", 0.0),
    } for s in rows]
    report = {
        "total_trials": len(rows),
        "stages": [s.to_json() for s in summaries],
        "best_fitness": best.fitness if best else None,
        "steps_to_best": best.trial_index if best else None,
        "best_configuration": denormalize(catalog, best.action).physical
        if best else None,
        "artifacts": artifacts or {},
        "series": series,
    }
    return report


def emit_report(run_dir, report: dict) -> None:
    """Write report.json and series.csv; identical runs emit identical bytes."""
    if report["total_trials"] < 1:
        raise KnobTunerError("cannot emit a report for a run with no trials")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "stage", "fitness", "tps", "p95_ms", "qps", "wall_s"])
    for row in report["series"]:
        writer.writerow([row["trial"], row["stage"], repr(row["fitness"]),
                         repr(row["tps"]), repr(row["p95_ms"]), repr(row["qps"]),
                         repr(float(row["wall_s"]))])
    (run_dir / "series.csv").write_text(buf.getvalue())


# ---------------------------------------------------------------- pipelines
def run_pipeline(plan: RunPlan, resume: bool = False, on_trial=None) -> dict:
    """Stage 1 -> 2 -> 3 per the plan; returns the report dict."""
    if plan.budget_lhs + plan.stage2_budget() + plan.budget_td3 < 1:
        raise ValueError("at least one stage must have budget")
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    plan_path = out / "plan.json"
    if resume and plan_path.exists():
        plan = RunPlan.from_json(json.loads(plan_path.read_text()))
    else:
        plan_path.write_text(json.dumps(plan.to_json(), indent=2, sort_keys=True)
                             + "\n")

    catalog = load_catalog(plan.catalog)
    schema = load_schema(plan.schema)
    workload = load_workload(plan.workload)
    hardware = load_hardware(plan.hardware)
    env = build_environment(plan.env, catalog, schema, hardware)

    pool_path = out / "pool.jsonl"
    recorded = []
    if resume and pool_path.exists():
        recorded = SamplePool.load(pool_path).samples
        log.info("resuming: %d recorded trials will be replayed", len(recorded))
    pool = SamplePool.for_catalog(catalog, hardware)
    pool_path.unlink(missing_ok=True)
    pool.attach(pool_path)
    runner = TrialRunner(env, workload, pool, plan.seed, recorded=recorded,
                         on_trial=on_trial)
    try:
        run_stage1(plan, pool, env, runner)
        run_stage2(plan, pool, env, runner)
        run_stage3(plan, pool, env, runner,
                   models_dir=out / "models", agent_dir=out / "agent")
    finally:
        pool.close()
        if hasattr(env, "close"):
            env.close()
    report = build_report(pool, reconstruct_summaries(plan, pool, out), catalog,
                          artifacts=_artifact_paths(out))
    emit_report(out, report)
    return report


def _artifact_paths(out: Path) -> dict:
    artifacts = {}
    if (out / "models" / "selection.json").exists():
        sel = json.loads((out / "models" / "selection.json").read_text())
        artifacts = {
            "rf_importances": sel["importances"],
            "selected_knobs": sel["topk_names"],
            "pca_explained_variance_ratio": sel["explained_variance_ratio"],
            "pca_k": sel["pca_k"],
            "models_dir": "models",
        }
    if (out / "agent" / "agent.json").exists():
        artifacts["agent_checkpoint"] = "agent"
    return artifacts


def reemit_report(run_dir) -> dict:
    """Rebuild report files from the stored pool without new trials."""
    run_dir = Path(run_dir)
    plan = RunPlan.from_json(json.loads((run_dir / "plan.json").read_text()))
    catalog = load_catalog(plan.catalog)
    pool = SamplePool.load(run_dir / "pool.jsonl")
    report = build_report(pool, reconstruct_summaries(plan, pool, run_dir),
                          catalog, artifacts=_artifact_paths(run_dir))
    emit_report(run_dir, report)
    return report


def semi_transfer(old_run_dir, new_hardware: HardwareProfile,
                  new_catalog_path=None, overrides=None) -> dict:
    """Migrate a finished run's pool to new hardware and re-tune briefly.

    The warm-start geometry travels (stale-flagged); a short hint stage
    re-baselines against the new profile and a short fine-tune follows.
    No warm-start trials are executed.
    """
    overrides = dict(overrides or {})
    old_dir = Path(old_run_dir)
    old_plan = RunPlan.from_json(json.loads((old_dir / "plan.json").read_text()))
    old_catalog = load_catalog(old_plan.catalog)
    old_pool = SamplePool.load(old_dir / "pool.jsonl")

    catalog_path = new_catalog_path or old_plan.catalog
    new_catalog = load_catalog(catalog_path)
    migrated = migrate_pool(old_pool, old_catalog, new_hardware, new_catalog)

    out = Path(overrides.get("out") or (old_dir.parent / (old_dir.name + "-transfer")))
    out.mkdir(parents=True, exist_ok=True)
    plan = RunPlan(
        catalog=str(catalog_path),
        schema=overrides.get("schema", old_plan.schema),
        env=overrides.get("env", old_plan.env),
        workload=overrides.get("workload", old_plan.workload),
        hardware=json.dumps(new_hardware.to_json()),
        out=str(out),
        stage2="db",
        hints=overrides.get("hints", old_plan.hints),
        budget_lhs=0,
        budget_stage2=overrides.get("budget_stage2", TRANSFER_DEFAULT_BUDGET),
        budget_td3=overrides.get("budget_td3", TRANSFER_DEFAULT_BUDGET),
        trust_ratio=old_plan.trust_ratio,
        top_k=old_plan.top_k,
        pca_variance=old_plan.pca_variance,
        pca_k=old_plan.pca_k,
        seed=overrides.get("seed", old_plan.seed),
        mode="transfer",
    )
    (out / "plan.json").write_text(json.dumps(plan.to_json(), indent=2,
                                              sort_keys=True) + "\n")

    schema = load_schema(plan.schema)
    workload = load_workload(plan.workload)
    env = build_environment(plan.env, new_catalog, schema, new_hardware)

    pool = SamplePool.for_catalog(new_catalog, new_hardware)
    pool.samples = list(migrated.samples)
    pool_path = out / "pool.jsonl"
    pool_path.unlink(missing_ok=True)
    pool.save(pool_path)
    pool.attach(pool_path)
    first_new_trial = (pool.samples[-1].trial_index + 1) if pool.samples else 1
    runner = TrialRunner(env, workload, pool, plan.seed)

    try:
        if plan.stage2_budget() == 0 and plan.budget_td3 == 0:
            # nothing to tune: re-measure the migrated incumbent so the
            # report reflects the new hardware
            base = pool.best_by_fitness()
            runner.run(denormalize(new_catalog, base.action), "hint")
        else:
            run_stage2(plan, pool, env, runner)
            run_stage3(plan, pool, env, runner, models_dir=out / "models",
                       agent_dir=out / "agent", include_stale_fit=True)
    finally:
        pool.close()
        if hasattr(env, "close"):
            env.close()
    report = build_report(pool, reconstruct_summaries(plan, pool, out),
                          new_catalog, first_trial=first_new_trial,
                          artifacts=_artifact_paths(out))
    emit_report(out, report)
    return report


def oracle_optimum(plan_env: str, catalog: KnobCatalog, schema: MetricSchema,
                   hardware: HardwareProfile, workload: WorkloadSpec):
    env = build_environment(plan_env, catalog, schema, hardware)
    if not isinstance(env, SyntheticEnv):
        raise KnobTunerError("the oracle verb requires a synthetic environment")
    v, f = synthetic_optimum(env.model, workload)
    return denormalize(catalog, v), f
