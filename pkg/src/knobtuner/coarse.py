"""Coarse surrogate search over a tiny feasible space.

Structured knowledge per knob (suggested values, narrowed ranges, special
values) is expanded into a small discrete candidate set; a short
stratified seed design is evaluated, then a random-forest surrogate
proposes candidates by an optimistic mean-plus-spread acquisition. The
fine, full-range stage is intentionally absent: later fine-tuning belongs
to the RL stage.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HintError, SpaceExhausted
from .hints import HintEntry, resolve_scalar
from .knobspace import (Configuration, HardwareProfile, KnobCatalog,
                        _normalize_one, clamp_physical, from_physical)
from .models import (ForestModel, ForestSpec, forest_fit,
                     forest_predict_with_spread)
from .sampling import LHSPlan, lhs_sample

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 1.0
CANDIDATE_POOL = 1000
SEED_TRIALS = 5
_ENUMERATE_LIMIT = 4096


@dataclass(frozen=True)
class FeasibleSpace:
    knob_names: tuple
    candidates: tuple  # per knob: tuple of physical values

    def __post_init__(self):
        if not self.knob_names:
            raise HintError("feasible space needs at least one knob")
        for name, cands in zip(self.knob_names, self.candidates):
            if not cands:
                raise HintError(f"knob {name!r}: empty candidate set")

    @property
    def sizes(self) -> tuple:
        return tuple(len(c) for c in self.candidates)

    @property
    def total(self) -> int:
        return math.prod(self.sizes)

    def assignment(self, tup) -> dict:
        return {name: self.candidates[i][j]
                for i, (name, j) in enumerate(zip(self.knob_names, tup))}


@dataclass
class CoarseState:
    evaluated: dict = field(default_factory=dict)  # tuple -> fitness
    surrogate: ForestModel | None = None
    iteration: int = 0
    incumbent: tuple | None = None  # (tuple, fitness)

    def record(self, tup, fit: float) -> None:
        self.evaluated[tup] = fit
        self.iteration += 1
        if self.incumbent is None or fit > self.incumbent[1]:
            self.incumbent = (tup, fit)


def _candidate_values(entry: HintEntry, spec, hw: HardwareProfile) -> list:
    if not spec.is_numeric:
        vals = list(entry.suggested_values) + [spec.default_value]
        seen, out = set(), []
        for v in vals:
            if v not in seen:
                seen.add(v)
                out.append(v)
        return out
    lo, hi = spec.min_value, spec.max_value
    if entry.min_value is not None:
        lo = max(lo, resolve_scalar(entry.template, entry.min_value, hw))
    if entry.max_value is not None:
        hi = min(hi, resolve_scalar(entry.template, entry.max_value, hw))
    if lo > hi:
        lo, hi = spec.min_value, spec.max_value

    def quantize(x):
        x = min(max(float(x), lo), hi)
        return clamp_physical(spec, x)

    out = []
    for sv in entry.suggested_values:
        v = resolve_scalar(entry.template, sv, hw)
        for scale in (0.5, 1.0, 2.0):
            out.append(quantize(v * scale))
    if entry.special_value is not None:
        out.append(quantize(entry.special_value))
    out.append(quantize(spec.default_value))
    uniq = sorted(set(out))
    return uniq


def build_feasible_space(entries, catalog: KnobCatalog,
                         hw: HardwareProfile) -> FeasibleSpace:
    """Per knob: suggested values, their half/double variants, the special
    value, and the catalog default, deduplicated after quantization."""
    if not entries:
        raise HintError("cannot build a feasible space from zero entries")
    names, cands = [], []
    for entry in entries:
        if entry.knob not in catalog:
            raise HintError(f"hint references unknown knob {entry.knob!r}")
        spec = catalog.knobs[catalog.index_of(entry.knob)]
        names.append(entry.knob)
        cands.append(tuple(_candidate_values(entry, spec, hw)))
    return FeasibleSpace(knob_names=tuple(names), candidates=tuple(cands))


def encode_tuple(space: FeasibleSpace, catalog: KnobCatalog, tup) -> np.ndarray:
    """Normalized coordinates of a candidate tuple, for the surrogate."""
    out = np.empty(len(tup))
    for i, (name, j) in enumerate(zip(space.knob_names, tup)):
        spec = catalog.knobs[catalog.index_of(name)]
        out[i] = _normalize_one(spec, space.candidates[i][j])
    return out


def _unevaluated_pool(state: CoarseState, space: FeasibleSpace,
                      rng: np.random.Generator) -> list:
    if space.total <= _ENUMERATE_LIMIT:
        pool = [t for t in itertools.product(*(range(s) for s in space.sizes))
                if t not in state.evaluated]
        if not pool:
            raise SpaceExhausted("all candidate tuples evaluated")
        return pool
    if len(state.evaluated) >= space.total:
        raise SpaceExhausted("all candidate tuples evaluated")
    found: dict = {}
    for _ in range(1000):
        draws = rng.integers(0, space.sizes, size=(CANDIDATE_POOL, len(space.sizes)))
        for row in draws:
            t = tuple(int(x) for x in row)
            if t not in state.evaluated:
                found.setdefault(t, None)
        if len(found) >= CANDIDATE_POOL:
            break
    if not found:
        # deterministic fallback: walk the full product lazily
        for t in itertools.product(*(range(s) for s in space.sizes)):
            if t not in state.evaluated:
                return [t]
        raise SpaceExhausted("all candidate tuples evaluated")
    return list(found.keys())[:CANDIDATE_POOL]


def propose_next(state: CoarseState, space: FeasibleSpace, seed: int,
                 catalog: KnobCatalog, kappa: float = DEFAULT_KAPPA):
    """Next unevaluated tuple by mean + kappa*spread under the surrogate;
    a stratified random pick before the surrogate exists."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    pool = _unevaluated_pool(state, space, rng)
    if state.surrogate is None or len(state.evaluated) < 2:
        return pool[int(rng.integers(len(pool)))]
    X = np.stack([encode_tuple(space, catalog, t) for t in pool])
    mean, spread = forest_predict_with_spread(state.surrogate, X)
    return pool[int(np.argmax(mean + kappa * spread))]


def seed_design(space: FeasibleSpace, count: int, seed: int) -> list:
    """Stratified pick over each knob's candidate index range."""
    design = lhs_sample(LHSPlan(dimension=len(space.sizes), count=count,
                                seed=seed))
    tuples = []
    for row in design:
        tuples.append(tuple(min(int(math.floor(v * s)), s - 1)
                            for v, s in zip(row, space.sizes)))
    return tuples


def coarse_tune(runner, space: FeasibleSpace, budget: int, seed: int,
                base: Configuration,
                baseline_fitness: float | None = None,
                kappa: float = DEFAULT_KAPPA) -> Configuration:
    """Seed trials then surrogate proposals; returns the best configuration."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    catalog = runner.catalog
    state = CoarseState()
    best_fit = -np.inf if baseline_fitness is None else baseline_fitness
    best_cfg = base

    def run_tuple(tup):
        nonlocal best_fit, best_cfg
        physical = dict(base.physical)
        physical.update(space.assignment(tup))
        config = from_physical(catalog, physical)
        sample = runner.run(config, "coarse")
        if sample is None:
            log.warning("coarse trial failed; budget consumed")
            return
        state.record(tup, sample.fitness)
        if sample.fitness > best_fit:
            best_fit, best_cfg = sample.fitness, config

    seeds = seed_design(space, min(budget, SEED_TRIALS), seed)
    for tup in seeds:
        run_tuple(tup)
    forest_seed = int(np.random.SeedSequence((int(seed), 1)).generate_state(1)[0] >> 1)
    for it in range(len(seeds), budget):
        if len(state.evaluated) >= 2:
            X = np.stack([encode_tuple(space, catalog, t) for t in state.evaluated])
            y = np.array(list(state.evaluated.values()))
            state.surrogate = forest_fit(
                ForestSpec(n_trees=100, features_per_split="sqrt",
                           seed=forest_seed), X, y)
        try:
            tup = propose_next(
                state, space,
                seed=int(np.random.SeedSequence((int(seed), 2, it)).generate_state(1)[0] >> 1),
                catalog=catalog, kappa=kappa)
        except SpaceExhausted:
            log.info("feasible space exhausted after %d trials", it)
            break
        run_tuple(tup)
    return best_cfg
