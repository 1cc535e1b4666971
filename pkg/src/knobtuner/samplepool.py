"""The shared pool of (state, action, perf) samples accumulated across stages.

Append-only, one JSON object per line so the file is streamable and
diff-able; the header pins the catalog fingerprint and hardware profile.
Floats survive the round trip bit-exactly (shortest-repr JSON encoding).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import PoolError
from .knobspace import (HardwareProfile, KnobCatalog, clamp_physical,
                        denormalize, normalize)
from .metrics import PerfResult, fitness

STAGES = ("lhs", "hint", "coarse", "td3")


@dataclass(frozen=True)
class Sample:
    state: np.ndarray
    action: np.ndarray
    perf: PerfResult
    fitness: float
    stage: str
    trial_index: int
    seed_info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float))
        object.__setattr__(self, "action", np.asarray(self.action, dtype=float))
        object.__setattr__(self, "fitness", float(self.fitness))
        if self.stage not in STAGES:
            raise PoolError(f"unknown stage {self.stage!r}")
        if abs(self.fitness - fitness(self.perf)) > 1e-12 * max(1.0, abs(self.fitness)):
            raise PoolError("cached fitness disagrees with perf")

    @property
    def stale(self) -> bool:
        return bool(self.seed_info.get("stale", False))

    def to_json(self) -> dict:
        rec = {
            "state": self.state.tolist(),
            "action": self.action.tolist(),
            "perf": self.perf.to_json(),
            "fitness": self.fitness,
            "stage": self.stage,
            "trial": self.trial_index,
            "stale": self.stale,
        }
        seed = self.seed_info.get("seed")
        if seed is not None:
            rec["seed"] = seed
        wall = self.seed_info.get("wall_s")
        if wall is not None:
            rec["wall_s"] = wall
        return rec

    @classmethod
    def from_json(cls, obj: dict) -> "Sample":
        seed_info = {"stale": bool(obj.get("stale", False))}
        if "seed" in obj:
            seed_info["seed"] = obj["seed"]
        if "wall_s" in obj:
            seed_info["wall_s"] = obj["wall_s"]
        return cls(
            state=np.asarray(obj["state"], dtype=float),
            action=np.asarray(obj["action"], dtype=float),
            perf=PerfResult.from_json(obj["perf"]),
            fitness=float(obj["fitness"]),
            stage=obj["stage"],
            trial_index=int(obj["trial"]),
            seed_info=seed_info,
        )


class SamplePool:
    def __init__(self, catalog_fingerprint: str, dimension: int,
                 hardware: HardwareProfile):
        self.catalog_fingerprint = catalog_fingerprint
        self.dimension = dimension
        self.hardware = hardware
        self.samples: list = []
        self._path = None
        self._fh = None

    @classmethod
    def for_catalog(cls, catalog: KnobCatalog,
                    hardware: HardwareProfile) -> "SamplePool":
        return cls(catalog.fingerprint(), catalog.dimension, hardware)

    def __len__(self) -> int:
        return len(self.samples)

    # ------------------------------------------------------------ persistence
    def attach(self, path) -> None:
        """Bind the pool to a jsonl file; appends flush through immediately."""
        path = Path(path)
        self._path = path
        exists = path.exists() and path.stat().st_size > 0
        if not exists:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w") as fh:
                fh.write(json.dumps(self._header()) + "\n")
        self._fh = path.open("a")

    def _header(self) -> dict:
        return {"catalog_fp": self.catalog_fingerprint,
                "dimension": self.dimension,
                "hardware": self.hardware.to_json()}

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def append(self, sample: Sample) -> None:
        if sample.action.shape != (self.dimension,):
            raise PoolError(
                f"action length {sample.action.shape[0]} != pool dimension "
                f"{self.dimension}")
        if self.samples and sample.trial_index <= self.samples[-1].trial_index:
            raise PoolError(
                f"trial_index {sample.trial_index} not increasing "
                f"(last {self.samples[-1].trial_index})")
        self.samples.append(sample)
        if self._fh is not None:
            self._fh.write(json.dumps(sample.to_json()) + "\n")
            self._fh.flush()

    # ------------------------------------------------------------- queries
    def filtered(self, stage=None, include_stale: bool = True) -> list:
        out = self.samples
        if stage is not None:
            stages = (stage,) if isinstance(stage, str) else tuple(stage)
            out = [s for s in out if s.stage in stages]
        if not include_stale:
            out = [s for s in out if not s.stale]
        return out

    def best_by_fitness(self, stage=None, include_stale: bool = True) -> Sample:
        pool = self.filtered(stage, include_stale)
        if not pool:
            raise PoolError("no samples match the filter")
        best = pool[0]
        for s in pool[1:]:
            if s.fitness > best.fitness:  # ties keep the lowest trial_index
                best = s
        return best

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            fh.write(json.dumps(self._header()) + "\n")
            for s in self.samples:
                fh.write(json.dumps(s.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "SamplePool":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise PoolError(f"pool file {path} is empty")
        try:
            header = json.loads(lines[0])
            pool = cls(catalog_fingerprint=header["catalog_fp"],
                       dimension=int(header["dimension"]),
                       hardware=HardwareProfile.from_json(header["hardware"]))
            for ln in lines[1:]:
                if ln.strip():
                    pool.samples.append(Sample.from_json(json.loads(ln)))
        except (json.JSONDecodeError, KeyError) as e:
            raise PoolError(f"pool file {path} corrupt: {e}") from e
        for a, b in zip(pool.samples, pool.samples[1:]):
            if b.trial_index <= a.trial_index:
                raise PoolError(f"pool file {path}: trial indices not increasing")
        return pool


def migrate_pool(pool: SamplePool, old_catalog: KnobCatalog,
                 new_hardware: HardwareProfile,
                 new_catalog: KnobCatalog) -> SamplePool:
    """Re-normalize every sample's action under new knob bounds.

    Physical values are preserved where still in range and clamped
    otherwise; recorded perf is kept but flagged stale (measured on the
    old hardware, so only the geometry is trustworthy).
    """
    if old_catalog.fingerprint() != pool.catalog_fingerprint:
        raise PoolError("old catalog does not match the pool fingerprint")
    if old_catalog.names() != new_catalog.names():
        old, new = set(old_catalog.names()), set(new_catalog.names())
        missing = sorted(old - new) or sorted(new - old) or ["<order differs>"]
        raise PoolError(f"catalog knob names incompatible: {missing}")
    for ko, kn in zip(old_catalog.knobs, new_catalog.knobs):
        if ko.kind != kn.kind or ko.scale != kn.scale \
                or ko.enum_values != kn.enum_values:
            raise PoolError(
                f"knob {ko.name!r}: only bounds/defaults may differ in migration")

    out = SamplePool.for_catalog(new_catalog, new_hardware)
    for s in pool.samples:
        physical = denormalize(old_catalog, s.action).physical
        adjusted = {}
        for kn in new_catalog.knobs:
            val = physical[kn.name]
            if kn.is_numeric:
                val = clamp_physical(kn, val)
            adjusted[kn.name] = val
        action = normalize(new_catalog, adjusted)
        info = dict(s.seed_info)
        info["stale"] = True
        out.samples.append(replace(s, action=action, seed_info=info))
    return out
