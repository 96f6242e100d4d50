"""Deterministic seed derivation for all stochastic components.

Every random draw in a run is keyed off a single integer run seed through
``np.random.SeedSequence`` spawn keys, so that runs are exactly repeatable
and independent streams never alias.  The task stream index is 1-based and
equals 1 for single-task optimizers, which makes a K=1 multitask run and a
plain ES run consume identical random streams (the bitwise-reduction
identities in the tests rely on this).
"""

from __future__ import annotations

import numpy as np

# Stream tags.  Distinct leading spawn-key entries keep the streams disjoint.
_TAG_SAMPLING = 0  # noise-table offsets for a task's population
_TAG_EPISODE = 1   # per-pair episode seeds for training rollouts
_TAG_EVAL = 2      # episode seeds for mean-policy evaluation rollouts


def sampling_rng(run_seed: int, iteration: int, task_index: int) -> np.random.Generator:
    """Generator for drawing a task's noise-table offsets at one iteration."""
    ss = np.random.SeedSequence(run_seed, spawn_key=(_TAG_SAMPLING, iteration, task_index))
    return np.random.default_rng(ss)


def episode_seeds(run_seed: int, iteration: int, task_index: int, n_pairs: int) -> np.ndarray:
    """Integer episode seeds, one per mirror pair (both signs share a seed)."""
    ss = np.random.SeedSequence(run_seed, spawn_key=(_TAG_EPISODE, iteration, task_index))
    rng = np.random.default_rng(ss)
    return rng.integers(0, 2**62, size=n_pairs)


def eval_episode_seed(run_seed: int, iteration: int, episode: int) -> int:
    """Episode seed for the deterministic evaluation of a mean policy."""
    ss = np.random.SeedSequence(run_seed, spawn_key=(_TAG_EVAL, iteration, episode))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 2)
