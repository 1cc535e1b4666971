import json

import numpy as np
import pytest

from knobtuner.environment import WorkloadSpec
from knobtuner.errors import HintError, TrialError
from knobtuner.hints import (FACTORS, WEIGHTS, HintAction, HintEntry,
                             compose_configuration, hint_tune, load_hints,
                             resolve_hint)
from knobtuner.knobspace import (HardwareProfile, default_configuration,
                                 load_catalog)
from knobtuner.pipeline import TrialRunner, load_hardware
from knobtuner.samplepool import SamplePool

GiB = 1024 ** 3
MiB = 1024 ** 2


@pytest.fixture()
def runner(syn_env, workload_read):
    pool = SamplePool.for_catalog(syn_env.catalog, syn_env.hardware)
    return TrialRunner(syn_env, workload_read, pool, master_seed=5)


class TestLoadHints:
    def test_single_absolute_hint(self, tmp_path, syn_catalog):
        path = tmp_path / "h.json"
        path.write_text(json.dumps(
            [{"knob": "io_concurrency", "template": "absolute", "base": 64}]))
        entries = load_hints(path, syn_catalog)
        assert len(entries) == 1
        assert entries[0].template == "absolute"

    def test_unknown_knob_named_in_error(self, tmp_path, syn_catalog):
        path = tmp_path / "h.json"
        path.write_text(json.dumps(
            [{"knob": "no_such_knob", "template": "absolute", "base": 1}]))
        with pytest.raises(HintError, match="no_such_knob"):
            load_hints(path, syn_catalog)

    def test_bad_template(self, tmp_path, syn_catalog):
        path = tmp_path / "h.json"
        path.write_text(json.dumps(
            [{"knob": "io_concurrency", "template": "relative_to_disk",
              "base": 0.5}]))
        with pytest.raises(HintError, match="template"):
            load_hints(path, syn_catalog)

    def test_relative_ram_base_bounds(self, tmp_path, syn_catalog):
        path = tmp_path / "h.json"
        path.write_text(json.dumps(
            [{"knob": "buffer_pool_bytes", "template": "relative_to_ram",
              "base": 2.0}]))
        with pytest.raises(HintError, match="relative_to_ram"):
            load_hints(path, syn_catalog)

    def test_non_numeric_knob_rejected(self, tmp_path, syn_catalog):
        path = tmp_path / "h.json"
        path.write_text(json.dumps(
            [{"knob": "flush_method", "template": "absolute", "base": 1}]))
        with pytest.raises(HintError, match="numeric"):
            load_hints(path, syn_catalog)

    def test_shipped_mysql_hints_hardware_sensitivity(self, repo_root,
                                                      mysql_catalog):
        entries = load_hints(repo_root / "hints" / "mysql_demo.json",
                             mysql_catalog)
        pool_hint = next(e for e in entries
                         if e.knob == "innodb_buffer_pool_size")
        big = load_hardware(repo_root / "hardware" / "hw_12c_64g.json")
        small = load_hardware(repo_root / "hardware" / "hw_12c_16g.json")
        v_big = resolve_hint(pool_hint, big, mysql_catalog)
        v_small = resolve_hint(pool_hint, small, mysql_catalog)
        assert v_big == 4 * v_small  # 0.75 of 64G vs 0.75 of 16G


class TestResolveHint:
    def test_relative_to_ram_quarter(self, syn_catalog):
        hw = HardwareProfile(cpu_cores=8, ram_bytes=64 * GiB, disk_bytes=10 ** 12)
        entry = HintEntry(knob="buffer_pool_bytes", template="relative_to_ram",
                          base=0.25)
        assert resolve_hint(entry, hw, syn_catalog) == 16 * GiB

    def test_absolute_within_bounds_unchanged(self, syn_catalog):
        hw = HardwareProfile(8, GiB, 10 ** 12)
        entry = HintEntry(knob="io_concurrency", template="absolute", base=100)
        assert resolve_hint(entry, hw, syn_catalog) == 100

    def test_relative_to_cpu_clamped(self, syn_catalog):
        hw = HardwareProfile(cpu_cores=12, ram_bytes=GiB, disk_bytes=10 ** 12)
        entry = HintEntry(knob="purge_threads", template="relative_to_cpu",
                          base=2.0)
        # 24 within the [1, 32] range of purge_threads
        assert resolve_hint(entry, hw, syn_catalog) == 24
        entry_big = HintEntry(knob="purge_threads", template="relative_to_cpu",
                              base=4.0)
        assert resolve_hint(entry_big, hw, syn_catalog) == 32  # clamped to max

    def test_quantizes_to_integer_kind(self, syn_catalog):
        hw = HardwareProfile(12, GiB, 10 ** 12)
        entry = HintEntry(knob="worker_threads", template="relative_to_cpu",
                          base=7.5)
        assert resolve_hint(entry, hw, syn_catalog) == 90


class TestCompose:
    def test_identity_factor_sets_resolved_value(self, syn_catalog, hw64):
        base = default_configuration(syn_catalog)
        entries = [HintEntry(knob="io_concurrency", template="absolute",
                             base=160)]
        cfg = compose_configuration(entries, HintAction.pure(1), base,
                                    syn_catalog, hw64)
        assert cfg.physical["io_concurrency"] == 160
        # unhinted knobs untouched
        assert cfg.physical["worker_threads"] == base.physical["worker_threads"]

    def test_factor_scales_then_clamps(self, syn_catalog):
        hw = HardwareProfile(8, 64 * GiB, 10 ** 12)
        # 0.25 of 64 GiB = 16 GiB; x2 = 32 GiB fits inside [64MiB, 128GiB]
        entries = [HintEntry(knob="buffer_pool_bytes",
                             template="relative_to_ram", base=0.25)]
        base = default_configuration(syn_catalog)
        cfg = compose_configuration(entries, HintAction(choices=((2.0, 1),)),
                                    base, syn_catalog, hw)
        assert cfg.physical["buffer_pool_bytes"] == 32 * GiB
        # factor 4 on a knob whose max caps it
        entries = [HintEntry(knob="query_cache_pct", template="absolute",
                             base=28.0)]
        cfg = compose_configuration(entries, HintAction(choices=((4.0, 1),)),
                                    base, syn_catalog, hw)
        assert cfg.physical["query_cache_pct"] == 80.0  # clamped to max

    def test_weighted_mean_of_multiple_hints(self, syn_catalog, hw64):
        base = default_configuration(syn_catalog)
        entries = [
            HintEntry(knob="io_concurrency", template="absolute", base=10),
            HintEntry(knob="io_concurrency", template="absolute", base=20),
        ]
        action = HintAction(choices=((1.0, 1), (1.0, 4)))
        cfg = compose_configuration(entries, action, base, syn_catalog, hw64)
        assert cfg.physical["io_concurrency"] == 18  # (1*10 + 4*20) / 5

    def test_action_must_cover_entries(self, syn_catalog, hw64):
        entries = [HintEntry(knob="io_concurrency", template="absolute", base=10)]
        with pytest.raises(HintError, match="covers"):
            compose_configuration(entries, HintAction(choices=()),
                                  default_configuration(syn_catalog),
                                  syn_catalog, hw64)

    def test_action_members_validated(self):
        with pytest.raises(HintError):
            HintAction(choices=((0.3, 1),))
        with pytest.raises(HintError):
            HintAction(choices=((1.0, 3),))


class TestHintTune:
    def entries(self, syn_catalog, repo_root):
        return load_hints(repo_root / "hints" / "synthetic_demo.json",
                          syn_catalog)

    def test_budget_one_is_pure_hint_application(self, runner, syn_catalog,
                                                 repo_root, hw64):
        entries = self.entries(syn_catalog, repo_root)
        base = default_configuration(syn_catalog)
        best = hint_tune(runner, entries, 1, base, seed=3)
        assert len(runner.pool) == 1
        assert runner.pool.samples[0].stage == "hint"
        want = compose_configuration(entries, HintAction.pure(len(entries)),
                                     base, syn_catalog, hw64)
        assert np.allclose(runner.pool.samples[0].action, want.normalized)
        assert best.physical == want.physical

    def test_same_seed_identical_sequence(self, syn_env, workload_read,
                                          syn_catalog, repo_root):
        entries = self.entries(syn_catalog, repo_root)
        base = default_configuration(syn_catalog)
        runs = []
        for _ in range(2):
            pool = SamplePool.for_catalog(syn_env.catalog, syn_env.hardware)
            r = TrialRunner(syn_env, workload_read, pool, master_seed=5)
            hint_tune(r, entries, 6, base, seed=42)
            runs.append([tuple(s.action) for s in pool.samples])
        assert runs[0] == runs[1]

    def test_emitted_configs_within_bounds_and_sets(self, runner, syn_catalog,
                                                    repo_root):
        entries = self.entries(syn_catalog, repo_root)
        base = default_configuration(syn_catalog)
        hint_tune(runner, entries, 10, base, seed=8)
        for s in runner.pool.samples:
            assert np.all(s.action >= 0.0) and np.all(s.action <= 1.0)

    def test_returned_best_is_argmax_over_trials_and_base(self, runner,
                                                          syn_catalog,
                                                          repo_root):
        entries = self.entries(syn_catalog, repo_root)
        base = default_configuration(syn_catalog)
        best = hint_tune(runner, entries, 8, base, seed=1,
                         baseline_fitness=0.0)
        best_trial = max(runner.pool.samples, key=lambda s: s.fitness)
        assert np.allclose(best.normalized, best_trial.action)

    def test_base_returned_when_it_stays_best(self, runner, syn_catalog,
                                              repo_root):
        entries = self.entries(syn_catalog, repo_root)
        base = default_configuration(syn_catalog)
        best = hint_tune(runner, entries, 2, base, seed=1,
                         baseline_fitness=10 ** 9)
        assert best is base

    def test_beats_stage1_best_with_good_hints(self, syn_env, workload_read,
                                               syn_catalog, repo_root):
        # a trust-clipped warm start followed by a short hint stage
        from knobtuner.sampling import LHSPlan, lhs_sample
        from knobtuner.knobspace import (TrustRegion, clip_to_trust_region,
                                         default_configuration, denormalize)
        import knobtuner.rng as rngmod
        pool = SamplePool.for_catalog(syn_env.catalog, syn_env.hardware)
        runner = TrialRunner(syn_env, workload_read, pool, master_seed=7)
        design = lhs_sample(LHSPlan(dimension=50, count=40,
                                    seed=rngmod.subseed(7, rngmod.KEY_LHS)))
        tr = TrustRegion(center=default_configuration(syn_catalog).normalized,
                         ratio=0.05)
        for row in design:
            runner.run(denormalize(syn_catalog, clip_to_trust_region(tr, row)),
                       "lhs")
        stage1_best = pool.best_by_fitness()
        entries = self.entries(syn_catalog, repo_root)
        hint_tune(runner, entries, 5,
                  denormalize(syn_catalog, stage1_best.action), seed=7,
                  baseline_fitness=stage1_best.fitness)
        assert pool.best_by_fitness().fitness >= stage1_best.fitness

    def test_env_error_consumes_budget(self, syn_env, workload_read,
                                       syn_catalog, repo_root):
        class FlakyEnv:
            def __init__(self, inner):
                self.inner = inner
                self.catalog = inner.catalog
                self.schema = inner.schema
                self.hardware = inner.hardware
                self.calls = 0

            def evaluate(self, config, workload, seed):
                self.calls += 1
                if self.calls % 2 == 0:
                    raise TrialError("flaky")
                return self.inner.evaluate(config, workload, seed)

        flaky = FlakyEnv(syn_env)
        pool = SamplePool.for_catalog(syn_env.catalog, syn_env.hardware)
        runner = TrialRunner(flaky, workload_read, pool, master_seed=5)
        entries = self.entries(syn_catalog, repo_root)
        hint_tune(runner, entries, 6, default_configuration(syn_catalog), seed=2)
        assert flaky.calls == 6      # budget consumed by failures too
        assert len(pool) == 3        # only successes recorded

    def test_budget_must_be_positive(self, runner, syn_catalog, repo_root):
        with pytest.raises(ValueError):
            hint_tune(runner, self.entries(syn_catalog, repo_root), 0,
                      default_configuration(syn_catalog), seed=1)

    def test_factor_weight_sets_are_the_discrete_grid(self):
        assert FACTORS == (0.25, 0.5, 1.0, 2.0, 4.0)
        assert WEIGHTS == (1, 2, 4, 8, 16)
