"""Latin hypercube designs over [0,1]^d.

Every dimension's n samples land in n distinct equal-width strata; the
per-dimension stratum permutations are independent. Output is a pure
function of (dimension, count, seed): the generator is pinned to PCG64 so
designs are identical across platforms and numpy builds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# keeps floor(v * n) inside the intended stratum despite rounding
_EDGE = 1e-12


@dataclass(frozen=True)
class LHSPlan:
    dimension: int
    count: int
    seed: int
    centered: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def lhs_sample(plan: LHSPlan) -> np.ndarray:
    """Return an (n, d) stratified design; rows are sample vectors."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(plan.seed)))
    n, d = plan.count, plan.dimension
    out = np.empty((n, d), dtype=float)
    for j in range(d):
        perm = rng.permutation(n)
        if plan.centered:
            u = np.full(n, 0.5)
        else:
            u = np.clip(rng.random(n), _EDGE, 1.0 - _EDGE)
        out[:, j] = (perm + u) / n
    return out


def stratum_indices(design: np.ndarray, count: int) -> np.ndarray:
    """Stratum index of each design entry (floor rule, clipped to count-1)."""
    return np.minimum(np.floor(design * count).astype(int), count - 1)
