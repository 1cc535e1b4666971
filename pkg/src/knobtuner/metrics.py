"""Internal-metric frames, their aggregation into a state vector, and fitness.

Counter channels aggregate as last-minus-first frame; instant channels as
the temporal mean. Fitness is throughput divided by p95 latency, the
scalar objective every stage maximizes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError, SchemaError

AGG_KINDS = ("counter", "instant")


@dataclass(frozen=True)
class MetricSchema:
    entries: tuple  # of (name, kind) pairs

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate metric names in schema")
        for n, kind in self.entries:
            if kind not in AGG_KINDS:
                raise SchemaError(f"metric {n!r}: unknown aggregation kind {kind!r}")

    @property
    def count(self) -> int:
        return len(self.entries)

    def names(self) -> list:
        return [n for n, _ in self.entries]

    def kinds(self) -> list:
        return [k for _, k in self.entries]

    def counter_mask(self) -> np.ndarray:
        return np.array([k == "counter" for _, k in self.entries])


def load_schema(path) -> MetricSchema:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"schema {path}: invalid JSON ({e})") from e
    if not isinstance(raw, list):
        raise SchemaError(f"schema {path}: expected a JSON array")
    entries = []
    for obj in raw:
        if not isinstance(obj, dict) or "name" not in obj or "agg" not in obj:
            raise SchemaError(f"schema entry must have name and agg: {obj!r}")
        entries.append((obj["name"], obj["agg"]))
    return MetricSchema(entries=tuple(entries))


@dataclass(frozen=True)
class MetricFrame:
    timestamp: float  # seconds since trial start
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class PerfResult:
    tps: float
    p95_latency_ms: float
    qps: float

    def __post_init__(self):
        object.__setattr__(self, "tps", float(self.tps))
        object.__setattr__(self, "p95_latency_ms", float(self.p95_latency_ms))
        object.__setattr__(self, "qps", float(self.qps))
        if self.tps < 0:
            raise ValueError("tps must be >= 0")
        if self.qps < 0:
            raise ValueError("qps must be >= 0")
        if self.p95_latency_ms <= 0:
            raise ValueError("p95_latency_ms must be > 0")

    def to_json(self) -> dict:
        return {"tps": self.tps, "p95_ms": self.p95_latency_ms, "qps": self.qps}

    @classmethod
    def from_json(cls, obj: dict) -> "PerfResult":
        return cls(tps=float(obj["tps"]), p95_latency_ms=float(obj["p95_ms"]),
                   qps=float(obj["qps"]))


# A state vector is a plain float array aligned to the schema order.
StateVector = np.ndarray


def aggregate_frames(schema: MetricSchema, frames) -> StateVector:
    """Collapse time-ordered frames into one state vector.

    Raises MetricError on fewer than 2 frames, unordered timestamps, a
    value-length mismatch, or a decreasing counter (a mid-trial metric
    reset invalidates the whole trial; clamping would poison the pool).
    """
    frames = list(frames)
    if len(frames) < 2:
        raise MetricError(f"need >= 2 frames, got {len(frames)}")
    for f in frames:
        if f.values.shape != (schema.count,):
            raise MetricError(
                f"frame at t={f.timestamp} has {f.values.shape[0]} values, "
                f"schema expects {schema.count}")
    times = [f.timestamp for f in frames]
    if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
        raise MetricError("frames must be strictly time-ordered")
    mat = np.stack([f.values for f in frames])  # T x count
    counter = schema.counter_mask()
    diffs = np.diff(mat[:, counter], axis=0)
    if np.any(diffs < 0):
        col = np.where(np.any(diffs < 0, axis=0))[0][0]
        name = [n for (n, k) in schema.entries if k == "counter"][col]
        raise MetricError(f"counter metric {name!r} decreased mid-trial (reset?)")
    out = np.empty(schema.count)
    out[counter] = mat[-1, counter] - mat[0, counter]
    out[~counter] = mat[:, ~counter].mean(axis=0)
    return out


def fitness(perf: PerfResult) -> float:
    """Throughput per millisecond of tail latency; higher is better."""
    if perf.p95_latency_ms <= 0:
        raise ValueError("p95_latency_ms must be > 0")
    return perf.tps / perf.p95_latency_ms
