"""Knowledge-hint tuning: static hint tables plus an online controller.

Each hint converts documentation-style knowledge into a physical value via
one of three templates (absolute, relative-to-RAM, relative-to-CPU). The
online controller picks a multiplicative factor from {0.25, 0.5, 1, 2, 4}
and an importance weight from {1, 2, 4, 8, 16} per hint and composes trial
configurations from the weighted factor-scaled values. With budgets of a
handful of trials an epsilon-greedy action-value learner is used instead
of a full policy-gradient controller; the controller is a plain function
so alternatives can be swapped in.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import HintError
from .knobspace import (Configuration, HardwareProfile, KnobCatalog, KnobSpec,
                        clamp_physical, from_physical)

log = logging.getLogger(__name__)

TEMPLATES = ("absolute", "relative_to_ram", "relative_to_cpu")
FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
WEIGHTS = (1, 2, 4, 8, 16)

# controller schedule: front-loaded exploration, geometric decay
EPSILON_0 = 0.5
EPSILON_DECAY = 0.8
LEARNING_RATE = 0.5


@dataclass(frozen=True)
class HintEntry:
    knob: str
    template: str
    base: float
    provenance: str = ""
    suggested_values: tuple = ()
    min_value: float | None = None
    max_value: float | None = None
    special_value: float | None = None

    def validate(self, catalog: KnobCatalog) -> None:
        if self.knob not in catalog:
            raise HintError(f"hint references unknown knob {self.knob!r}")
        if self.template not in TEMPLATES:
            raise HintError(f"hint for {self.knob!r}: unknown template "
                            f"{self.template!r}")
        spec = catalog.knobs[catalog.index_of(self.knob)]
        if not spec.is_numeric:
            raise HintError(
                f"hint for {self.knob!r}: templates apply to numeric knobs only")
        if self.template == "relative_to_ram" and not (0.0 < self.base <= 1.5):
            raise HintError(
                f"hint for {self.knob!r}: relative_to_ram base must be in (0, 1.5]")


@dataclass(frozen=True)
class HintAction:
    """Per-entry (factor, weight) choices, aligned with the hint list."""
    choices: tuple  # of (factor, weight)

    def __post_init__(self):
        for f, w in self.choices:
            if f not in FACTORS:
                raise HintError(f"factor {f} not in {FACTORS}")
            if w not in WEIGHTS:
                raise HintError(f"weight {w} not in {WEIGHTS}")

    @classmethod
    def pure(cls, n_entries: int) -> "HintAction":
        return cls(choices=tuple((1.0, 1) for _ in range(n_entries)))


def _entry_from_json(obj: dict) -> HintEntry:
    if not isinstance(obj, dict) or "knob" not in obj:
        raise HintError(f"hint entry is not an object with a knob: {obj!r}")
    return HintEntry(
        knob=obj["knob"],
        template=obj.get("template", "absolute"),
        base=float(obj["base"]),
        provenance=obj.get("provenance", ""),
        suggested_values=tuple(obj.get("suggested_values") or ()),
        min_value=obj.get("min_value"),
        max_value=obj.get("max_value"),
        special_value=obj.get("special_value"),
    )


def load_hints(path, catalog: KnobCatalog) -> list:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise HintError(f"hint file {path}: invalid JSON ({e})") from e
    if not isinstance(raw, list):
        raise HintError(f"hint file {path}: expected a JSON array")
    entries = [_entry_from_json(o) for o in raw]
    unknown = sorted({e.knob for e in entries if e.knob not in catalog})
    if unknown:
        raise HintError(f"hints reference unknown knobs: {unknown}")
    for e in entries:
        e.validate(catalog)
    return entries


def resolve_scalar(template: str, value: float, hw: HardwareProfile) -> float:
    if template == "absolute":
        return float(value)
    if template == "relative_to_ram":
        return float(value) * hw.ram_bytes
    if template == "relative_to_cpu":
        return float(value) * hw.cpu_cores
    raise HintError(f"unknown template {template!r}")


def resolve_hint(entry: HintEntry, hw: HardwareProfile,
                 catalog: KnobCatalog):
    """Physical value of a hint under a hardware profile, clamped+quantized."""
    spec = catalog.knobs[catalog.index_of(entry.knob)]
    return clamp_physical(spec, resolve_scalar(entry.template, entry.base, hw))


def compose_configuration(entries, action: HintAction, base_config: Configuration,
                          catalog: KnobCatalog, hw: HardwareProfile) -> Configuration:
    """Overlay factor-scaled hint values on a base configuration.

    Multiple hints on one knob combine as the weight-weighted mean of
    their f*v values before the final clamp.
    """
    if len(action.choices) != len(entries):
        raise HintError(
            f"action covers {len(action.choices)} entries, expected {len(entries)}")
    sums: dict = {}
    for entry, (f, w) in zip(entries, action.choices):
        v = resolve_hint(entry, hw, catalog)
        num, den = sums.get(entry.knob, (0.0, 0.0))
        sums[entry.knob] = (num + w * f * v, den + w)
    physical = dict(base_config.physical)
    for knob, (num, den) in sums.items():
        spec = catalog.knobs[catalog.index_of(knob)]
        physical[knob] = clamp_physical(spec, num / den)
    return from_physical(catalog, physical)


def hint_tune(runner, entries, budget: int, base: Configuration, seed: int,
              baseline_fitness: float | None = None) -> Configuration:
    """Run `budget` hint-guided trials and return the best configuration.

    Trial 1 is the pure-hint action (all factors 1). Later trials are
    chosen epsilon-greedily over per-entry factor/weight values, with the
    reward being the relative fitness improvement over the stage-start
    fitness and per-entry factor credit scaled by the entry's share of its
    knob's total weight. Environment failures consume budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not entries:
        raise HintError("no hint entries to tune with")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    n = len(entries)
    q_factor = np.zeros((n, len(FACTORS)))
    q_weight = np.zeros((n, len(WEIGHTS)))
    f_start = baseline_fitness
    best_fit = -np.inf if baseline_fitness is None else baseline_fitness
    best_cfg = base

    for step in range(1, budget + 1):
        if step == 1:
            action = HintAction.pure(n)
        else:
            eps = EPSILON_0 * EPSILON_DECAY ** (step - 2)
            choices = []
            for e in range(n):
                if rng.random() < eps:
                    fi = int(rng.integers(len(FACTORS)))
                else:
                    fi = int(np.argmax(q_factor[e]))
                if rng.random() < eps:
                    wi = int(rng.integers(len(WEIGHTS)))
                else:
                    wi = int(np.argmax(q_weight[e]))
                choices.append((FACTORS[fi], WEIGHTS[wi]))
            action = HintAction(choices=tuple(choices))
        config = compose_configuration(entries, action, base, runner.catalog,
                                       runner.hardware)
        sample = runner.run(config, "hint")
        if sample is None:
            log.warning("hint trial %d failed; budget consumed", step)
            continue
        if f_start is None:
            f_start = sample.fitness
        ref = f_start if f_start > 0 else 1.0
        reward = (sample.fitness - f_start) / ref
        knob_weight_total: dict = {}
        for entry, (_f, w) in zip(entries, action.choices):
            knob_weight_total[entry.knob] = knob_weight_total.get(entry.knob, 0) + w
        for e, (entry, (f, w)) in enumerate(zip(entries, action.choices)):
            share = w / knob_weight_total[entry.knob]
            fi = FACTORS.index(f)
            wi = WEIGHTS.index(w)
            q_factor[e, fi] += LEARNING_RATE * share * (reward - q_factor[e, fi])
            q_weight[e, wi] += LEARNING_RATE * (reward - q_weight[e, wi])
        if sample.fitness > best_fit:
            best_fit, best_cfg = sample.fitness, config
    return best_cfg
