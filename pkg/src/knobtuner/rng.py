"""Seed derivation and random generator construction.

All randomness flows through PCG64 seeded from explicit (master, *key)
tuples, so any component can be re-created from the run's master seed and
a stable key path. Sub-streams are keyed by counters (stage code, trial
index), never by wall clock, which is what makes kill-and-resume replay
byte-identical.
"""
from __future__ import annotations

import numpy as np

# Stable key codes for the per-stage sub-streams.
KEY_LHS = 10
KEY_ENV = 20
KEY_STAGE2 = 30
KEY_TD3 = 40
KEY_MODELS = 50


def sequence(master: int, *keys: int) -> np.random.SeedSequence:
    if master < 0:
        raise ValueError("master seed must be non-negative")
    return np.random.SeedSequence((int(master), *[int(k) for k in keys]))


def generator(master: int, *keys: int) -> np.random.Generator:
    """PCG64 generator for the given key path; explicit algorithm pin."""
    return np.random.Generator(np.random.PCG64(sequence(master, *keys)))


def subseed(master: int, *keys: int) -> int:
    """A derived 63-bit integer seed for components that take plain ints."""
    return int(sequence(master, *keys).generate_state(1, np.uint64)[0] >> 1)
