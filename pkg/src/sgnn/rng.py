"""Deterministic random-stream plumbing.

Every stochastic operation in the package takes an explicit
``numpy.random.Generator``.  Independent sub-streams are derived from a
master seed with ``derive``, so parallel Monte-Carlo loops replay
bit-identically regardless of scheduling: stream i is a pure function of
(master_seed, i).
"""

from __future__ import annotations

import numpy as np


def root_rng(seed) -> np.random.Generator:
    """Root generator for a run. ``seed`` may be an int or a SeedSequence."""
    return np.random.default_rng(seed)


def derive(master_seed, *keys) -> np.random.Generator:
    """Independent stream keyed by integers, e.g. derive(seed, task_index)."""
    return np.random.default_rng(np.random.SeedSequence((int(master_seed),) + tuple(int(k) for k in keys)))


def spawn(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Split ``count`` independent child streams off an existing generator."""
    return rng.spawn(count)
