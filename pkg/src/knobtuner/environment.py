"""Evaluation environments: a synthetic DBMS simulator and a driver client.

The synthetic environment scores configurations with a sum of per-knob
concave bumps plus pairwise interaction terms, scaled by a workload
factor, with multiplicative log-normal noise. Throughput and p95 latency
derive from the same latent score, so the fitness ratio is exercised
nontrivially. A planted, analytically known optimum makes every pipeline
claim checkable by brute force at desk scale.

The driver client speaks newline-delimited JSON over a subprocess's stdio
so real benchmark harnesses can plug in without touching the tuner.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import queue
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import DriverError, TrialError
from .knobspace import (Configuration, HardwareProfile, KnobCatalog,
                        _normalize_one, denormalize, normalize)
from .metrics import MetricFrame, MetricSchema, PerfResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    read_fraction: float
    threads: int
    duration_s: float
    frame_interval_s: float

    def __post_init__(self):
        if not (0.0 <= self.read_fraction <= 1.0):
            raise ValueError("read_fraction must be in [0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.frame_interval_s <= 0:
            raise ValueError("frame_interval_s must be > 0")
        if self.duration_s < 2 * self.frame_interval_s:
            raise ValueError("duration_s must be >= 2 * frame_interval_s")

    @property
    def frame_count(self) -> int:
        return int(self.duration_s // self.frame_interval_s)

    def to_json(self) -> dict:
        return {"name": self.name, "read_fraction": self.read_fraction,
                "threads": self.threads, "duration_s": self.duration_s,
                "frame_interval_s": self.frame_interval_s}

    @classmethod
    def from_json(cls, obj: dict) -> "WorkloadSpec":
        return cls(name=obj["name"], read_fraction=float(obj["read_fraction"]),
                   threads=int(obj["threads"]), duration_s=float(obj["duration_s"]),
                   frame_interval_s=float(obj["frame_interval_s"]))


def load_workload(path) -> WorkloadSpec:
    return WorkloadSpec.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EnvObservation:
    frames: tuple
    perf: PerfResult
    wall_time_s: float


@dataclass(frozen=True)
class InfluentialKnob:
    index: int
    weight: float
    optimum: float
    curvature: float


@dataclass(frozen=True)
class InteractionPair:
    a: int
    b: int
    strength: float


@dataclass(frozen=True)
class HardwareCoupling:
    index: int
    resource: str  # ram | cpu | disk
    target_fraction: float
    saturation_weight: float


@dataclass(frozen=True)
class SyntheticModelSpec:
    influential_knobs: tuple
    interaction_pairs: tuple
    hardware_couplings: tuple
    noise_sd: float
    hardware: HardwareProfile
    baseline_score: float = 2.0
    score_scale: float = 400.0
    p95_base_ms: float = 40.0
    queries_per_txn: float = 10.0

    def __post_init__(self):
        idxs = [k.index for k in self.influential_knobs]
        if len(set(idxs)) != len(idxs):
            raise ValueError("influential knob indices must be distinct")
        for k in self.influential_knobs:
            if k.weight <= 0:
                raise ValueError(f"influential knob {k.index}: weight must be > 0")
            if not (0.0 <= k.optimum <= 1.0):
                raise ValueError(f"influential knob {k.index}: optimum outside [0,1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


def load_synthetic_spec(path, catalog: KnobCatalog) -> SyntheticModelSpec:
    """Parse an env spec file, resolving knob names against the catalog."""
    obj = json.loads(Path(path).read_text())

    def idx(name):
        return catalog.index_of(name)

    infl = tuple(InfluentialKnob(index=idx(e["knob"]), weight=float(e["weight"]),
                                 optimum=float(e["optimum"]),
                                 curvature=float(e["curvature"]))
                 for e in obj.get("influential_knobs", []))
    pairs = tuple(InteractionPair(a=idx(e["a"]), b=idx(e["b"]),
                                  strength=float(e["strength"]))
                  for e in obj.get("interaction_pairs", []))
    coup = tuple(HardwareCoupling(index=idx(e["knob"]), resource=e["resource"],
                                  target_fraction=float(e["target_fraction"]),
                                  saturation_weight=float(e["saturation_weight"]))
                 for e in obj.get("hardware_couplings", []))
    return SyntheticModelSpec(
        influential_knobs=infl,
        interaction_pairs=pairs,
        hardware_couplings=coup,
        noise_sd=float(obj.get("noise_sd", 0.0)),
        hardware=HardwareProfile.from_json(obj["hardware"]),
        baseline_score=float(obj.get("baseline_score", 2.0)),
        score_scale=float(obj.get("score_scale", 400.0)),
        p95_base_ms=float(obj.get("p95_base_ms", 40.0)),
        queries_per_txn=float(obj.get("queries_per_txn", 10.0)),
    )


def _workload_factor(wl: WorkloadSpec) -> float:
    return (0.5 + wl.read_fraction) * (1.0 + math.log2(wl.threads) / 8.0)


def _congestion(threads: int) -> float:
    return 1.0 + threads / 64.0


def _name_weight(name: str) -> float:
    """Stable per-channel scale in [0.3, 1.2], derived from the name."""
    h = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big")
    return 0.3 + 0.9 * (h / 0xFFFFFFFF)


class SyntheticModel:
    """The noise-free scoring model bound to a catalog and hardware profile."""

    def __init__(self, spec: SyntheticModelSpec, catalog: KnobCatalog,
                 hardware: HardwareProfile | None = None):
        for k in spec.influential_knobs:
            if not (0 <= k.index < catalog.dimension):
                raise ValueError(f"influential index {k.index} outside catalog")
        for p in spec.interaction_pairs:
            for i in (p.a, p.b):
                if not (0 <= i < catalog.dimension):
                    raise ValueError(f"interaction index {i} outside catalog")
        self.spec = spec
        self.catalog = catalog
        self.hardware = hardware if hardware is not None else spec.hardware
        self._couplings = {c.index: c for c in spec.hardware_couplings}

    def coupled_target(self, coupling: HardwareCoupling) -> float:
        """Physical target of a coupled knob under the bound hardware."""
        knob = self.catalog.knobs[coupling.index]
        raw = coupling.target_fraction * self.hardware.resource(coupling.resource)
        return min(max(raw, knob.min_value), knob.max_value)

    def effective_optimum(self, infl: InfluentialKnob) -> float:
        """Normalized optimum; hardware couplings override the planted one."""
        c = self._couplings.get(infl.index)
        if c is None:
            return infl.optimum
        knob = self.catalog.knobs[infl.index]
        return _normalize_one(knob, self.coupled_target(c))

    def grid_vector(self, v: np.ndarray) -> np.ndarray:
        """Snap v to the representable grid (only physical values matter)."""
        return normalize(self.catalog, denormalize(self.catalog, v).physical)

    def shape(self, v: np.ndarray, quantize: bool = True) -> float:
        """Dimensionless configuration quality; >= baseline - sum|strength|/4."""
        v = np.asarray(v, dtype=float)
        if quantize:
            v = self.grid_vector(np.clip(v, 0.0, 1.0))
        total = self.spec.baseline_score
        for infl in self.spec.influential_knobs:
            o = self.effective_optimum(infl)
            bump = infl.weight * math.exp(-infl.curvature * (v[infl.index] - o) ** 2)
            c = self._couplings.get(infl.index)
            if c is not None:
                knob = self.catalog.knobs[infl.index]
                from .knobspace import _denormalize_one
                phys = float(_denormalize_one(knob, float(v[infl.index])))
                target = self.coupled_target(c)
                over = max(0.0, phys / target - 1.0)
                bump *= math.exp(-c.saturation_weight * over ** 2)
            total += bump
        for p in self.spec.interaction_pairs:
            total += p.strength * (v[p.a] - 0.5) * (v[p.b] - 0.5)
        return total

    def latent_score(self, v: np.ndarray, wl: WorkloadSpec) -> float:
        return self.shape(v) * _workload_factor(wl)

    def true_perf(self, v: np.ndarray, wl: WorkloadSpec) -> PerfResult:
        q = self.latent_score(v, wl)
        tps = self.spec.score_scale * q
        p95 = self.spec.p95_base_ms * _congestion(wl.threads) / q
        return PerfResult(tps=tps, p95_latency_ms=p95, qps=tps * self.spec.queries_per_txn)

    def true_fitness(self, v: np.ndarray, wl: WorkloadSpec) -> float:
        p = self.true_perf(v, wl)
        return p.tps / p.p95_latency_ms

    def search_indices(self) -> list:
        """Coordinates that affect the score, in ascending order."""
        idx = {k.index for k in self.spec.influential_knobs}
        for p in self.spec.interaction_pairs:
            idx.update((p.a, p.b))
        return sorted(idx)


def synthetic_true_fitness(model: SyntheticModel, v, workload: WorkloadSpec) -> float:
    """Noise-free fitness oracle; evaluate() with noise_sd=0 matches this."""
    v = np.asarray(v, dtype=float)
    if v.shape != (model.catalog.dimension,):
        raise ValueError(f"vector length {v.shape} != catalog dimension "
                         f"{model.catalog.dimension}")
    return model.true_fitness(v, workload)


def synthetic_optimum(model: SyntheticModel, workload: WorkloadSpec,
                      n_starts: int = 8):
    """Deterministic argmax/max of the noise-free fitness.

    Multi-start L-BFGS-B over the influential subspace on the continuous
    relaxation, followed by coordinate-wise refinement on the quantized
    grid. Free coordinates sit at 0.5.
    """
    d = model.catalog.dimension
    base = np.full(d, 0.5)
    idx = model.search_indices()
    if not idx:
        return base, model.true_fitness(base, workload)

    def neg_shape(sub):
        v = base.copy()
        v[idx] = np.clip(sub, 0.0, 1.0)
        return -model.shape(v, quantize=False)

    marg = np.full(len(idx), 0.5)
    opt_by_index = {k.index: model.effective_optimum(k)
                    for k in model.spec.influential_knobs}
    for j, i in enumerate(idx):
        if i in opt_by_index:
            marg[j] = opt_by_index[i]
    starts = [marg]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(2024)))
    for _ in range(n_starts):
        starts.append(rng.random(len(idx)))

    best_sub, best_val = None, -np.inf
    bounds = [(0.0, 1.0)] * len(idx)
    for s in starts:
        res = optimize.minimize(neg_shape, s, method="L-BFGS-B", bounds=bounds)
        if -res.fun > best_val:
            best_val, best_sub = -res.fun, np.clip(res.x, 0.0, 1.0)

    v = base.copy()
    v[idx] = best_sub
    v = model.grid_vector(v)
    # grid refinement: step each searched coordinate to its neighbouring
    # representable values until no single-coordinate move improves
    cur = model.shape(v)
    for _ in range(100):
        improved = False
        for i in idx:
            knob = model.catalog.knobs[i]
            for cand in _neighbor_coords(knob, v[i]):
                w = v.copy()
                w[i] = cand
                w = model.grid_vector(w)
                val = model.shape(w)
                if val > cur + 1e-15:
                    v, cur, improved = w, val, True
        if not improved:
            break
    return v, model.true_fitness(v, workload)


def _neighbor_coords(knob, v: float) -> list:
    """Adjacent representable normalized coordinates around v for a knob."""
    from .knobspace import _denormalize_one
    out = []
    if knob.kind == "integer":
        phys = _denormalize_one(knob, v)
        for p in (phys - 1, phys + 1):
            if knob.min_value <= p <= knob.max_value:
                out.append(_normalize_one(knob, int(p)))
    elif knob.kind == "enum":
        m = len(knob.enum_values)
        i = min(int(math.floor(v * m)), m - 1)
        for j in (i - 1, i + 1):
            if 0 <= j < m:
                out.append((j + 0.5) / m)
    elif knob.kind == "boolean":
        out.append(0.75 if v < 0.5 else 0.25)
    else:
        for step in (1e-4, -1e-4, 1e-6, -1e-6):
            w = v + step
            if 0.0 <= w <= 1.0:
                out.append(w)
    return out


# channel families for the synthetic metric generator
_CONSTANT_CHANNELS = {"innodb_page_size": 16384.0, "metadata_mem_pool_size": 434176.0}


class SyntheticEnv:
    """Deterministic simulator honoring the evaluation contract."""

    def __init__(self, spec: SyntheticModelSpec, catalog: KnobCatalog,
                 schema: MetricSchema, hardware: HardwareProfile | None = None):
        self.model = SyntheticModel(spec, catalog, hardware)
        self.catalog = catalog
        self.schema = schema
        self.spec = spec

    @property
    def hardware(self) -> HardwareProfile:
        return self.model.hardware

    def _buffer_knob(self):
        for c in self.spec.hardware_couplings:
            if c.resource == "ram":
                return c
        return None

    def _miss_level(self, v: np.ndarray) -> float:
        """Cache-miss intensity: falls as the RAM-coupled knob nears its
        optimum from below, flat beyond it."""
        c = self._buffer_knob()
        if c is None:
            return 0.3
        knob = self.catalog.knobs[c.index]
        o = _normalize_one(knob, self.model.coupled_target(c))
        if o <= 0:
            return math.exp(-3.0)
        return math.exp(-3.0 * min(float(v[c.index]), o) / o)

    def _channel_levels(self, v: np.ndarray, wl: WorkloadSpec,
                        tps: float) -> np.ndarray:
        """Per-second rate (counters) or level (instants) per channel."""
        rf = wl.read_fraction
        qps = tps * self.spec.queries_per_txn
        miss = self._miss_level(v)
        write_rate = (1.0 - rf) * tps
        lock_level = (1.0 - rf) * wl.threads / 64.0
        dirty = 0.2 + 0.6 * (1.0 - rf)
        bp = self._buffer_knob()
        if bp is not None:
            from .knobspace import _denormalize_one
            pool_bytes = float(_denormalize_one(self.catalog.knobs[bp.index],
                                                float(v[bp.index])))
        else:
            pool_bytes = 128 * 1024 * 1024
        pages_total = pool_bytes / 16384.0

        out = np.empty(self.schema.count)
        for i, (name, _kind) in enumerate(self.schema.entries):
            w = _name_weight(name)
            if name in _CONSTANT_CHANNELS:
                val = _CONSTANT_CHANNELS[name]
            elif name == "buffer_pool_size":
                val = pool_bytes
            elif name == "buffer_pool_pages_total":
                val = pages_total
            elif name == "buffer_pool_pages_data":
                val = 0.8 * pages_total
            elif name == "buffer_pool_bytes_data":
                val = 0.8 * pool_bytes
            elif name == "buffer_pool_pages_dirty":
                val = 0.3 * dirty * pages_total
            elif name == "buffer_pool_bytes_dirty":
                val = 0.3 * dirty * pool_bytes
            elif name == "buffer_pool_pages_free":
                val = 0.15 * pages_total
            elif name == "buffer_pool_pages_misc":
                val = 0.05 * pages_total
            elif name == "buffer_pool_reads" or name == "buffer_pages_read":
                val = w * 100.0 * miss
            elif name == "buffer_data_reads":
                val = 16384.0 * 100.0 * miss
            elif name.startswith("buffer_pool_read_ahead"):
                val = w * 20.0 * miss
            elif name == "buffer_pool_read_requests":
                val = w * qps * rf
            elif name == "buffer_pool_write_requests":
                val = w * qps * (1.0 - rf)
            elif name in ("buffer_pages_written", "buffer_data_written",
                          "innodb_dblwr_writes", "innodb_dblwr_pages_written",
                          "buffer_pages_created", "buffer_pool_wait_free"):
                scale = 16384.0 if "data" in name else 1.0
                val = w * scale * (0.5 + write_rate)
            elif name.startswith("lock_"):
                val = w * 50.0 * lock_level
            elif name.startswith("os_log") or name.startswith("log_"):
                scale = 256.0 if "bytes" in name else 1.0
                val = w * scale * (0.5 + write_rate)
            elif name.startswith("os_data"):
                val = w * (50.0 * miss + write_rate)
            elif name.startswith("dml_"):
                if name == "dml_reads":
                    val = rf * qps
                elif name == "dml_inserts":
                    val = 0.4 * (1 - rf) * qps
                elif name == "dml_updates":
                    val = 0.4 * (1 - rf) * qps
                else:
                    val = 0.2 * (1 - rf) * qps
            elif name.startswith("adaptive_hash"):
                val = w * qps * (0.5 + 0.5 * rf)
            elif name.startswith("ibuf_"):
                val = w * 10.0 * (0.5 + write_rate / 100.0)
            elif name.startswith("innodb_rwlock"):
                val = w * 200.0 * lock_level + w
            elif name == "trx_rseg_history_len":
                val = w * 100.0 * (1 - rf) + 10.0
            elif name == "file_num_open_files":
                val = 100.0 + w * 50.0
            elif name == "innodb_activity_count":
                val = qps
            else:
                val = w * qps / 10.0
            out[i] = val
        return out

    def instant_bounds(self, wl: WorkloadSpec):
        """Declared (lo, hi) per instant channel, valid for any config/seed."""
        spec = self.spec
        shape_max = (spec.baseline_score
                     + sum(k.weight for k in spec.influential_knobs)
                     + sum(abs(p.strength) for p in spec.interaction_pairs) / 4.0)
        tps_max = spec.score_scale * shape_max * _workload_factor(wl)
        noise_room = math.exp(5.0 * math.sqrt(math.log1p(spec.noise_sd ** 2)))
        hi_one = self._channel_levels(np.ones(self.catalog.dimension), wl,
                                      tps_max * noise_room)
        hi_zero = self._channel_levels(np.zeros(self.catalog.dimension), wl,
                                       tps_max * noise_room)
        bounds = []
        for i, (name, kind) in enumerate(self.schema.entries):
            if kind != "instant":
                bounds.append(None)
            elif name in _CONSTANT_CHANNELS:
                c = _CONSTANT_CHANNELS[name]
                bounds.append((c, c))
            else:
                # jitter multiplies levels by at most 1.1; channel levels are
                # monotone in the pool knob, so the extremes bound them
                bounds.append((0.0, 1.1 * max(hi_one[i], hi_zero[i]) + 1e-9))
        return bounds

    def evaluate(self, config: Configuration, workload: WorkloadSpec,
                 seed: int) -> EnvObservation:
        v = np.asarray(config.normalized, dtype=float)
        if v.shape != (self.catalog.dimension,):
            raise TrialError("configuration does not match the environment catalog")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        sigma = math.sqrt(math.log1p(self.spec.noise_sd ** 2))
        noise = np.exp(rng.normal(0.0, sigma, size=2) - 0.5 * sigma * sigma) \
            if sigma > 0 else np.ones(2)
        q = self.model.latent_score(v, workload)
        tps = self.spec.score_scale * q * float(noise[0])
        p95 = self.spec.p95_base_ms * _congestion(workload.threads) / q * float(noise[1])
        perf = PerfResult(tps=tps, p95_latency_ms=p95,
                          qps=tps * self.spec.queries_per_txn)

        T = workload.frame_count
        levels = self._channel_levels(self.model.grid_vector(v), workload, tps)
        jitter = rng.uniform(-1.0, 1.0, size=(T, self.schema.count))
        counter = self.schema.counter_mask()
        const_idx = [i for i, (n, _k) in enumerate(self.schema.entries)
                     if n in _CONSTANT_CHANNELS]
        const_vals = [_CONSTANT_CHANNELS[self.schema.entries[i][0]]
                      for i in const_idx]
        interval = workload.frame_interval_s
        frames = []
        cum = levels * 1000.0 + 17.0  # counter offset ("since startup")
        for t in range(T):
            inc = levels * interval * (1.0 + 0.2 * jitter[t])
            cum = cum + np.where(counter, inc, 0.0)
            inst = levels * (1.0 + 0.1 * jitter[t])
            inst[const_idx] = const_vals
            frames.append(MetricFrame(timestamp=(t + 1) * interval,
                                      values=np.where(counter, cum, inst)))
        # simulated trials take exactly the workload duration, which keeps
        # reports byte-reproducible across runs
        return EnvObservation(frames=tuple(frames), perf=perf,
                              wall_time_s=float(workload.duration_s))


def load_synthetic_env(spec_path, catalog: KnobCatalog, schema: MetricSchema,
                       hardware: HardwareProfile | None = None) -> SyntheticEnv:
    spec = load_synthetic_spec(spec_path, catalog)
    return SyntheticEnv(spec, catalog, schema, hardware)


class DriverEnv:
    """Client for an external benchmark driver over stdio.

    Protocol: one JSON request per line
        {"op": "evaluate", "config": {...}, "workload": {...}, "trial_id": s}
    answered by one JSON response line
        {"frames": [{"t": sec, "values": [...]}], "perf": {"tps":..,
         "p95_ms":.., "qps":..}}  or  {"error": msg}.

    A timeout or malformed response aborts the trial (TrialError via
    DriverError), never the run; the subprocess is restarted afterwards
    because the stream can no longer be trusted.
    """

    def __init__(self, command, catalog: KnobCatalog, schema: MetricSchema,
                 timeout_s: float = 600.0):
        self.command = command
        self.catalog = catalog
        self.schema = schema
        self.timeout_s = timeout_s
        self._proc = None
        self._lines = None
        self._reader = None

    def _ensure_proc(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        args = self.command if isinstance(self.command, (list, tuple)) \
            else ["/bin/sh", "-c", self.command]
        self._proc = subprocess.Popen(
            list(args), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        self._lines = queue.Queue()

        def pump(proc, q):
            for line in proc.stdout:
                q.put(line)
            q.put(None)

        self._reader = threading.Thread(target=pump,
                                        args=(self._proc, self._lines), daemon=True)
        self._reader.start()

    def _kill(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._kill()
        self._proc = None

    def evaluate(self, config: Configuration, workload: WorkloadSpec,
                 seed: int, trial_id: str | None = None) -> EnvObservation:
        self._ensure_proc()
        request = {"op": "evaluate", "config": config.physical,
                   "workload": workload.to_json(),
                   "trial_id": trial_id if trial_id is not None else str(seed)}
        import time
        started = time.monotonic()
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self._kill()
            raise DriverError(f"driver pipe closed: {e}") from e
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            self._kill()
            raise DriverError(f"driver timed out after {self.timeout_s}s") from None
        if line is None:
            self._kill()
            raise DriverError("driver exited before responding")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            self._kill()
            raise DriverError(f"driver sent invalid JSON: {e}") from e
        if "error" in obj:
            raise DriverError(f"driver error: {obj['error']}")
        try:
            frames = tuple(
                MetricFrame(timestamp=float(f["t"]),
                            values=np.asarray(f["values"], dtype=float))
                for f in obj["frames"])
            perf = PerfResult.from_json(obj["perf"])
        except (KeyError, TypeError, ValueError) as e:
            self._kill()
            raise DriverError(f"driver response malformed: {e}") from e
        for f in frames:
            if f.values.shape != (self.schema.count,):
                self._kill()
                raise DriverError(
                    f"driver frame has {f.values.shape[0]} values, schema "
                    f"expects {self.schema.count}")
        return EnvObservation(frames=frames, perf=perf,
                              wall_time_s=time.monotonic() - started)
