"""Knob catalog, hardware profiles, and normalized-vector <-> physical mappings.

The catalog's knob ordering is the canonical coordinate order for every
action vector in the system. All mapping functions are pure; nothing here
touches a live database.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CatalogError

KINDS = ("integer", "real", "enum", "boolean")
SCALES = ("linear", "log")


def round_half_up(x: float) -> int:
    """Deterministic, locale-free integer rounding (0.5 always rounds up)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class KnobSpec:
    name: str
    kind: str
    min_value: float | None = None
    max_value: float | None = None
    default_value: object = None
    enum_values: tuple = ()
    scale: str = "linear"
    unit: str = ""
    restart_required: bool = False

    def validate(self) -> None:
        if not self.name:
            raise CatalogError("knob with empty name")
        if self.kind not in KINDS:
            raise CatalogError(f"knob {self.name!r}: unknown kind {self.kind!r}")
        if self.scale not in SCALES:
            raise CatalogError(f"knob {self.name!r}: unknown scale {self.scale!r}")
        if self.kind in ("integer", "real"):
            if self.min_value is None or self.max_value is None:
                raise CatalogError(f"knob {self.name!r}: numeric kind requires min/max")
            if not (self.min_value < self.max_value):
                raise CatalogError(
                    f"knob {self.name!r}: min_value must be < max_value "
                    f"({self.min_value} vs {self.max_value})"
                )
            if self.scale == "log" and self.min_value <= 0:
                raise CatalogError(f"knob {self.name!r}: log scale requires min_value > 0")
            if self.default_value is None or not isinstance(self.default_value, (int, float)):
                raise CatalogError(f"knob {self.name!r}: numeric default required")
            if not (self.min_value <= self.default_value <= self.max_value):
                raise CatalogError(
                    f"knob {self.name!r}: default {self.default_value} outside "
                    f"[{self.min_value}, {self.max_value}]"
                )
            if self.kind == "integer":
                for label, v in (("min", self.min_value), ("max", self.max_value),
                                 ("default", self.default_value)):
                    if float(v) != int(v):
                        raise CatalogError(f"knob {self.name!r}: integer {label} must be integral")
        elif self.kind == "enum":
            if len(self.enum_values) < 2:
                raise CatalogError(f"knob {self.name!r}: enum needs >= 2 literals")
            if len(set(self.enum_values)) != len(self.enum_values):
                raise CatalogError(f"knob {self.name!r}: duplicate enum literals")
            if self.default_value not in self.enum_values:
                raise CatalogError(
                    f"knob {self.name!r}: default {self.default_value!r} not in enum_values"
                )
        else:  # boolean
            if not isinstance(self.default_value, bool):
                raise CatalogError(f"knob {self.name!r}: boolean default must be true/false")

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("integer", "real")


@dataclass(frozen=True)
class KnobCatalog:
    knobs: tuple

    def __post_init__(self):
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise CatalogError(f"duplicate knob names: {dup}")
        object.__setattr__(self, "_index", {k.name: i for i, k in enumerate(self.knobs)})

    @property
    def dimension(self) -> int:
        return len(self.knobs)

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise CatalogError(f"unknown knob {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def names(self) -> list:
        return [k.name for k in self.knobs]

    def fingerprint(self) -> str:
        payload = json.dumps([_spec_to_json(k) for k in self.knobs],
                             sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def default_physical(self) -> dict:
        return {k.name: k.default_value for k in self.knobs}


@dataclass(frozen=True)
class HardwareProfile:
    cpu_cores: int
    ram_bytes: int
    disk_bytes: int

    def __post_init__(self):
        for f in ("cpu_cores", "ram_bytes", "disk_bytes"):
            if getattr(self, f) <= 0:
                raise ValueError(f"HardwareProfile.{f} must be strictly positive")

    def resource(self, name: str) -> float:
        if name == "ram":
            return float(self.ram_bytes)
        if name == "cpu":
            return float(self.cpu_cores)
        if name == "disk":
            return float(self.disk_bytes)
        raise ValueError(f"unknown resource {name!r}")

    def to_json(self) -> dict:
        return {"cpu_cores": self.cpu_cores, "ram_bytes": self.ram_bytes,
                "disk_bytes": self.disk_bytes}

    @classmethod
    def from_json(cls, obj: dict) -> "HardwareProfile":
        return cls(cpu_cores=int(obj["cpu_cores"]), ram_bytes=int(obj["ram_bytes"]),
                   disk_bytes=int(obj["disk_bytes"]))


@dataclass(frozen=True)
class Configuration:
    """A point in knob space: normalized coordinates and their physical image.

    `physical` is always the exact image of `normalized` under
    `denormalize`, so two Configurations with equal vectors are equal
    settings. Build instances through `denormalize` or `from_physical`.
    """
    normalized: np.ndarray
    physical: dict

    def __post_init__(self):
        v = np.asarray(self.normalized, dtype=float)
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("normalized components must lie in [0, 1]")
        object.__setattr__(self, "normalized", v)


@dataclass(frozen=True)
class TrustRegion:
    center: np.ndarray
    ratio: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError("trust ratio must be in (0, 1]")
        if np.any(c < 0.0) or np.any(c > 1.0):
            raise ValueError("trust-region center must lie in [0, 1]^d")
        object.__setattr__(self, "center", c)


def _spec_to_json(k: KnobSpec) -> dict:
    return {
        "name": k.name,
        "kind": k.kind,
        "min": k.min_value,
        "max": k.max_value,
        "default": k.default_value,
        "enum_values": list(k.enum_values),
        "scale": k.scale,
        "unit": k.unit,
        "restart_required": k.restart_required,
    }


def _spec_from_json(obj: dict) -> KnobSpec:
    if not isinstance(obj, dict) or "name" not in obj:
        raise CatalogError(f"catalog entry is not a knob object: {obj!r}")
    default = obj.get("default")
    enum_values = tuple(obj.get("enum_values") or ())
    spec = KnobSpec(
        name=obj["name"],
        kind=obj.get("kind", ""),
        min_value=obj.get("min"),
        max_value=obj.get("max"),
        default_value=default,
        enum_values=enum_values,
        scale=obj.get("scale", "linear"),
        unit=obj.get("unit", ""),
        restart_required=bool(obj.get("restart_required", False)),
    )
    spec.validate()
    return spec


def load_catalog(path) -> KnobCatalog:
    """Load and validate a catalog file (JSON array of knob objects)."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CatalogError(f"catalog {path}: invalid JSON ({e})") from e
    if not isinstance(raw, list):
        raise CatalogError(f"catalog {path}: expected a JSON array")
    return KnobCatalog(knobs=tuple(_spec_from_json(o) for o in raw))


def save_catalog(catalog: KnobCatalog, path) -> None:
    Path(path).write_text(
        json.dumps([_spec_to_json(k) for k in catalog.knobs], indent=2) + "\n")


def _denormalize_one(spec: KnobSpec, v: float):
    if spec.kind == "boolean":
        return bool(v >= 0.5)
    if spec.kind == "enum":
        m = len(spec.enum_values)
        return spec.enum_values[min(int(math.floor(v * m)), m - 1)]
    if spec.scale == "log":
        lo, hi = math.log(spec.min_value), math.log(spec.max_value)
        x = math.exp(lo + v * (hi - lo))
    else:
        x = spec.min_value + v * (spec.max_value - spec.min_value)
    if spec.kind == "integer":
        xi = round_half_up(x)
        return int(min(max(xi, spec.min_value), spec.max_value))
    return float(min(max(x, spec.min_value), spec.max_value))


def _normalize_one(spec: KnobSpec, value) -> float:
    if spec.kind == "boolean":
        if not isinstance(value, (bool, np.bool_)):
            raise CatalogError(f"knob {spec.name!r}: expected boolean, got {value!r}")
        return 0.75 if value else 0.25
    if spec.kind == "enum":
        try:
            i = spec.enum_values.index(value)
        except ValueError:
            raise CatalogError(
                f"knob {spec.name!r}: {value!r} not in enum_values") from None
        # bucket centres so floor-mapping round-trips exactly
        return (i + 0.5) / len(spec.enum_values)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise CatalogError(f"knob {spec.name!r}: expected number, got {value!r}")
    if not (spec.min_value <= value <= spec.max_value):
        raise CatalogError(
            f"knob {spec.name!r}: value {value} outside "
            f"[{spec.min_value}, {spec.max_value}]")
    if spec.scale == "log":
        lo, hi = math.log(spec.min_value), math.log(spec.max_value)
        return (math.log(value) - lo) / (hi - lo)
    return (value - spec.min_value) / (spec.max_value - spec.min_value)


def denormalize(catalog: KnobCatalog, v) -> Configuration:
    """Map a vector in [0,1]^d to physical knob values (deterministic)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (catalog.dimension,):
        raise CatalogError(
            f"vector has shape {v.shape}, catalog dimension is {catalog.dimension}")
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise CatalogError("normalized components must lie in [0, 1]")
    physical = {k.name: _denormalize_one(k, float(v[i]))
                for i, k in enumerate(catalog.knobs)}
    return Configuration(normalized=v.copy(), physical=physical)


def normalize(catalog: KnobCatalog, physical: dict) -> np.ndarray:
    """Inverse of denormalize up to quantization of integers/enums/booleans."""
    missing = [k.name for k in catalog.knobs if k.name not in physical]
    if missing:
        raise CatalogError(f"missing knobs: {missing}")
    return np.array([_normalize_one(k, physical[k.name]) for k in catalog.knobs])


def from_physical(catalog: KnobCatalog, physical: dict) -> Configuration:
    return denormalize(catalog, normalize(catalog, physical))


def default_configuration(catalog: KnobCatalog) -> Configuration:
    return from_physical(catalog, catalog.default_physical())


def clip_to_trust_region(tr: TrustRegion, v) -> np.ndarray:
    """Clamp each component to [center_i - ratio, center_i + ratio] ∩ [0, 1]."""
    v = np.asarray(v, dtype=float)
    if v.shape != tr.center.shape:
        raise ValueError(f"dimension mismatch: {v.shape} vs {tr.center.shape}")
    lo = np.maximum(tr.center - tr.ratio, 0.0)
    hi = np.minimum(tr.center + tr.ratio, 1.0)
    return np.clip(v, lo, hi)


def clamp_physical(spec: KnobSpec, value: float):
    """Clamp a numeric physical value into the knob's range and quantize it."""
    if not spec.is_numeric:
        raise CatalogError(f"knob {spec.name!r}: clamp applies to numeric kinds only")
    x = min(max(float(value), spec.min_value), spec.max_value)
    if spec.kind == "integer":
        return int(min(max(round_half_up(x), spec.min_value), spec.max_value))
    return float(x)
