import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knobtuner.errors import MetricError, SchemaError
from knobtuner.metrics import (MetricFrame, MetricSchema, PerfResult,
                               aggregate_frames, fitness, load_schema)

SCHEMA2 = MetricSchema(entries=(("hits", "counter"), ("dirty", "instant")))


def frames_of(rows, interval=5.0):
    return [MetricFrame(timestamp=(i + 1) * interval, values=np.array(row))
            for i, row in enumerate(rows)]


def brute_force_aggregate(schema, rows):
    """Independent oracle: per-metric loop, literal last-minus-first / mean."""
    rows = [list(r) for r in rows]
    out = []
    for i, (_name, kind) in enumerate(schema.entries):
        column = [r[i] for r in rows]
        if kind == "counter":
            out.append(column[-1] - column[0])
        else:
            out.append(sum(column) / len(column))
    return np.array(out)


class TestAggregate:
    def test_counter_last_minus_first(self):
        out = aggregate_frames(SCHEMA2, frames_of([[10, 4], [14, 6], [25, 8]]))
        assert out[0] == 15.0

    def test_instant_mean(self):
        out = aggregate_frames(SCHEMA2, frames_of([[10, 4], [14, 6], [25, 8]]))
        assert out[1] == 6.0

    def test_shipped_schema_aggregates_12_frames(self, schema63):
        assert schema63.count == 63
        rng = np.random.default_rng(0)
        base = rng.uniform(0, 100, 63)
        rows = []
        cum = base.copy()
        counter = schema63.counter_mask()
        for _ in range(12):
            cum = cum + np.where(counter, rng.uniform(0, 5, 63), 0.0)
            rows.append(np.where(counter, cum, rng.uniform(0, 10, 63)))
        out = aggregate_frames(schema63, frames_of(rows))
        assert out.shape == (63,)
        assert np.isfinite(out).all()

    def test_fewer_than_two_frames(self):
        with pytest.raises(MetricError, match=">= 2"):
            aggregate_frames(SCHEMA2, frames_of([[1, 1]]))

    def test_decreasing_counter_is_reset_error(self):
        with pytest.raises(MetricError, match="hits"):
            aggregate_frames(SCHEMA2, frames_of([[10, 1], [5, 1]]))

    def test_unordered_timestamps(self):
        frames = [MetricFrame(timestamp=10.0, values=np.array([1.0, 1.0])),
                  MetricFrame(timestamp=5.0, values=np.array([2.0, 1.0]))]
        with pytest.raises(MetricError, match="ordered"):
            aggregate_frames(SCHEMA2, frames)

    def test_value_length_mismatch(self):
        frames = [MetricFrame(timestamp=1.0, values=np.array([1.0])),
                  MetricFrame(timestamp=2.0, values=np.array([2.0]))]
        with pytest.raises(MetricError, match="schema expects 2"):
            aggregate_frames(SCHEMA2, frames)

    def test_brute_force_oracle_random_frames(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            T = int(rng.integers(2, 9))
            width = int(rng.integers(1, 6))
            kinds = ["counter" if rng.random() < 0.5 else "instant"
                     for _ in range(width)]
            schema = MetricSchema(entries=tuple((f"m{i}", k)
                                                for i, k in enumerate(kinds)))
            rows = []
            cum = rng.uniform(0, 100, width)
            for _ in range(T):
                cum = cum + np.where([k == "counter" for k in kinds],
                                     rng.uniform(0, 10, width), 0.0)
                rows.append(np.where([k == "counter" for k in kinds], cum,
                                     rng.uniform(-50, 50, width)))
            got = aggregate_frames(schema, frames_of(rows))
            want = brute_force_aggregate(schema, rows)
            assert np.all(np.abs(got - want) <= 1e-12 * np.maximum(np.abs(want), 1))

    @given(st.floats(min_value=0.1, max_value=100),
           st.floats(min_value=1.0, max_value=50.0))
    @settings(max_examples=100, deadline=None)
    def test_instant_scaling_counter_shift_invariance(self, c, shift):
        rows = [[10.0, 4.0], [14.0, 6.0], [25.0, 8.0]]
        base = aggregate_frames(SCHEMA2, frames_of(rows))
        scaled = [[r[0] + shift, r[1] * c] for r in rows]
        out = aggregate_frames(SCHEMA2, frames_of(scaled))
        assert out[0] == pytest.approx(base[0], rel=1e-12, abs=1e-9)
        assert out[1] == pytest.approx(base[1] * c, rel=1e-12)

    def test_counter_interior_frames_do_not_matter(self):
        a = aggregate_frames(SCHEMA2, frames_of([[10, 5], [25, 5]]))
        b = aggregate_frames(SCHEMA2, frames_of([[10, 5], [11, 5], [24, 5], [25, 5]]))
        assert a[0] == b[0]


class TestFitness:
    def test_paper_anchor_lhs_best(self):
        f = fitness(PerfResult(tps=5078, p95_latency_ms=17.20, qps=0))
        assert abs(f - 295.26) / 295.26 < 1e-3

    def test_paper_anchor_td3_best(self):
        f = fitness(PerfResult(tps=5220, p95_latency_ms=16.71, qps=0))
        assert abs(f - 312.42) / 312.42 < 1e-3

    def test_zero_tps(self):
        assert fitness(PerfResult(tps=0, p95_latency_ms=5.0, qps=0)) == 0.0

    def test_nonpositive_latency_rejected(self):
        with pytest.raises(ValueError):
            PerfResult(tps=10, p95_latency_ms=0.0, qps=0)

    @given(st.floats(min_value=1, max_value=1e5),
           st.floats(min_value=0.1, max_value=1e3),
           st.floats(min_value=0.1, max_value=100))
    @settings(max_examples=100, deadline=None)
    def test_monotonicity(self, tps, p95, delta):
        base = fitness(PerfResult(tps=tps, p95_latency_ms=p95, qps=0))
        assert fitness(PerfResult(tps=tps + delta, p95_latency_ms=p95, qps=0)) > base
        assert fitness(PerfResult(tps=tps, p95_latency_ms=p95 + delta, qps=0)) < base


class TestSchema:
    def test_shipped_schema_category_split(self, schema63):
        kinds = schema63.kinds()
        assert kinds.count("instant") == 27  # 14 state + 13 current
        assert kinds.count("counter") == 36  # three cumulative groups of 12

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError):
            MetricSchema(entries=(("x", "counter"), ("x", "instant")))

    def test_unknown_kind_rejected(self):
        with pytest.raises(SchemaError):
            MetricSchema(entries=(("x", "gauge"),))

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "schema.json"
        bad.write_text("{}")
        with pytest.raises(SchemaError):
            load_schema(bad)
        bad.write_text("[{\"name\": \"x\"}]")
        with pytest.raises(SchemaError):
            load_schema(bad)
