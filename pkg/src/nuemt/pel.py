"""Progressive-episode-lengths sequential-transfer baseline.

The run is split into K stages of ascending horizon H_s = round((s/K) H),
each granted an equal share budget/K of the timestep budget.  Within a
stage the optimizer is exactly the single-task ES at horizon H_s; stage
s+1 starts from stage s's final mean (stage 1 from zeros) and the
observation normalizer carries across stages.  Stage transitions happen
only at iteration boundaries, at the first boundary where the stage's
cumulative share is spent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import merge_observation_stats
from .errors import ContractViolation
from .es import ESConfig, evaluate_mean, task_update
from .multitask import task_horizons
from .noise import MixtureState, NoiseTable
from .policy import RunningNormalizer
from .runlog import IterationLog


@dataclass(frozen=True)
class PELSchedule:
    """Stage horizons and the per-stage timestep budget."""

    horizons: tuple
    stage_budget: float
    k_stages: int

    @classmethod
    def build(cls, k: int, full_horizon: int, budget: int) -> "PELSchedule":
        if budget < 1:
            raise ContractViolation("budget must be positive")
        return cls(horizons=tuple(task_horizons(k, full_horizon)),
                   stage_budget=budget / k, k_stages=k)

    def stage_at(self, cum_timesteps: int) -> int:
        """Active stage for an iteration starting at this timestep count."""
        return min(self.k_stages, int(cum_timesteps // self.stage_budget) + 1)


def run_pel(config: ESConfig, k: int, full_horizon: int, budget: int,
            run_seed: int, table: NoiseTable, evaluator,
            eval_episodes: int = 1):
    """Generator driving the PEL baseline; yields (IterationLog, theta, norm).

    Evaluation rollouts always use the full target horizon so the logged
    eval_return is comparable across stages and against the other
    algorithms.
    """
    schedule = PELSchedule.build(k, full_horizon, budget)
    theta = np.zeros(evaluator.n)
    normalizer = RunningNormalizer(evaluator.obs_dim)
    cum = 0
    t = 0
    while cum < budget:
        t += 1
        stage = schedule.stage_at(cum)
        mix = MixtureState(1, [theta], config.sigma, np.array([1.0]))
        res = task_update(
            mix, config.n_pop, schedule.horizons[stage - 1], task_stream=stage,
            run_seed=run_seed, iteration=t, alpha=config.alpha,
            weight_decay=config.weight_decay,
            fitness_shaping=config.fitness_shaping, r=1.0, table=table,
            evaluator=evaluator, normalizer=normalizer)
        theta = res.new_mean
        normalizer = merge_observation_stats(normalizer, res.results)
        cum += res.timesteps
        eval_return = evaluate_mean(theta, full_horizon, evaluator,
                                    config.sigma, normalizer, run_seed, t,
                                    eval_episodes, task_index=k)
        mean_returns = [None] * k
        mean_returns[stage - 1] = res.mean_return
        w = [0.0] * k
        w[stage - 1] = 1.0
        alloc = [0] * k
        alloc[stage - 1] = config.n_pop
        yield IterationLog(
            iteration=t, cum_timesteps=cum, stage=stage,
            eval_return=eval_return, mean_returns=tuple(mean_returns),
            w_target=tuple(w), allocations=tuple(alloc)), theta, normalizer
