"""Multitask neuroevolution with importance-sampled skills transfer.

K concurrent tasks share one environment at truncated horizons
H_i = round((i/K) H).  Task i samples from a mixture over the search
distributions of tasks 1..i, reweights foreign samples by log-domain
density ratios, learns its mixture coefficients by projected gradient
ascent on the probability simplex, and the target task's coefficients
drive the per-task population allocation for the next iteration.

Tasks update in ascending order within an iteration, and a task's mixture
references the live means of lower tasks, so skills discovered by task
j < i this iteration are already visible to task i (in-sweep transfer).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import merge_observation_stats
from .errors import ConfigError, ContractViolation, EvaluationError
from .es import evaluate_mean, task_update
from .noise import EPS_SELF, MixtureState, NoiseTable, density_ratios, \
    largest_remainder, log_component_densities
from .policy import RunningNormalizer
from .runlog import IterationLog


@dataclass(frozen=True)
class NuEMTConfig:
    """Hyperparameters of the multitask optimizer."""

    n_total: int
    k_tasks: int
    sigma: float
    alpha: float
    beta: float
    r: float = 1.0
    eps_self: float = EPS_SELF
    weight_decay: float = 0.005
    fitness_shaping: str = "ranked"

    def __post_init__(self):
        if self.alpha <= 0.0 or self.beta <= 0.0 or self.sigma <= 0.0:
            raise ContractViolation("alpha, beta and sigma must be positive")
        if self.r <= 0.0:
            raise ContractViolation("projection radius r must be positive")
        if self.k_tasks < 1:
            raise ContractViolation("k_tasks must be >= 1")
        if self.n_total < 2 * self.k_tasks or self.n_total % 2 != 0:
            raise ContractViolation("n_total must be even and >= 2 * k_tasks")
        if self.fitness_shaping not in ("ranked", "raw"):
            raise ContractViolation("fitness_shaping must be 'ranked' or 'raw'")


@dataclass(frozen=True)
class TaskSpec:
    """One task of the curriculum: env horizon, population, index."""

    env_id: str
    horizon: int
    population: int
    index: int


def task_horizons(k: int, full_horizon: int) -> list:
    """H_i = round((i/K) H), validated to be ascending and positive."""
    horizons = [int(round(i / k * full_horizon)) for i in range(1, k + 1)]
    if horizons[0] < 1 or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigError(
            f"H={full_horizon} cannot be split into {k} ascending horizons: {horizons}")
    return horizons


def allocate_populations(w_target, n_total: int, k: int) -> list:
    """Population sizes from the target task's coefficients (N_j ~ N w_Kj).

    Allocation happens on mirror pairs so every size is even.  The target
    task is served first with at least ceil of both its proportional share
    and the N_total/K floor; the remaining pairs go to the auxiliaries by
    largest remainder on their renormalized coefficients.  Zero is a legal
    auxiliary allocation.
    """
    w = np.asarray(w_target, dtype=float)
    if w.shape != (k,):
        raise ContractViolation(f"w_target must have length {k}")
    if n_total % 2 != 0:
        raise ContractViolation("n_total must be even")
    pairs = n_total // 2
    target_pairs = max(math.ceil(pairs * w[-1] - 1e-9), math.ceil(pairs / k - 1e-9))
    target_pairs = min(max(target_pairs, 0), pairs)
    counts = np.zeros(k, dtype=int)
    counts[-1] = target_pairs
    rest = pairs - target_pairs
    if k > 1 and rest > 0:
        aux = w[:-1].copy()
        total = aux.sum()
        if total <= 0.0:
            # Degenerate: all mass on the target; give leftovers to it.
            counts[-1] += rest
        else:
            counts[:-1] = largest_remainder(aux * (rest / total), rest)
    return [int(2 * c) for c in counts]


def coefficient_gradient(mix: MixtureState, thetas: np.ndarray,
                         utilities: np.ndarray) -> np.ndarray:
    """b_j = (1/N) sum_k u_k p_j(theta_k) / q_i(theta_k).

    Uses the unprojected samples and the uncentered shaped fitness, so with
    all component means identical every b_j equals mean(u).
    """
    log_p = log_component_densities(thetas, mix.means, mix.sigma)
    n = thetas.shape[0]
    b = np.empty(mix.task_index)
    for j in range(1, mix.task_index + 1):
        b[j - 1] = float((utilities * density_ratios(j, log_p, mix.weights)).sum() / n)
    return b


def simplex_step(w, b, beta: float, eps_self: float = EPS_SELF) -> np.ndarray:
    """Projected coefficient ascent step staying on the simplex.

    The raw gradient is projected onto the sum-zero plane,
    d = beta (b - mean(b)), then scaled by the largest lambda in (0, 1]
    keeping every coefficient nonnegative and the self coefficient (last
    entry) at or above eps_self.  If the boundary blocks the direction
    entirely the step is skipped.  The result is renormalized only when
    float drift exceeds 1e-12.
    """
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise EvaluationError(f"non-finite coefficient gradient: {b}")
    d = beta * (b - b.mean())
    floors = np.zeros_like(w)
    floors[-1] = eps_self
    lam = 1.0
    shrinking = d < 0.0
    if np.any(shrinking):
        room = (w[shrinking] - floors[shrinking]) / -d[shrinking]
        lam = min(1.0, float(room.min()))
    if lam <= 0.0:
        return w.copy()
    out = w + lam * d
    out = np.maximum(out, floors)
    total = out.sum()
    if abs(total - 1.0) > 1e-12:
        out = out / total
    return out


@dataclass
class MultitaskState:
    """Mutable optimizer state across one multitask run."""

    k: int
    horizons: list
    means: list          # K flat vectors, updated in place each sweep
    weights: list        # weights[i-1] is task i's coefficient vector (len i)
    allocations: list    # populations for the next iteration
    normalizer: RunningNormalizer
    cum_timesteps: int = 0
    iteration: int = 0

    @classmethod
    def initial(cls, config: NuEMTConfig, n_params: int, obs_dim: int,
                full_horizon: int) -> "MultitaskState":
        k = config.k_tasks
        horizons = task_horizons(k, full_horizon)
        means = [np.zeros(n_params) for _ in range(k)]
        weights = [np.ones(i) / i for i in range(1, k + 1)]
        allocations = allocate_populations(weights[-1], config.n_total, k)
        return cls(k=k, horizons=horizons, means=means, weights=weights,
                   allocations=allocations,
                   normalizer=RunningNormalizer(obs_dim))

    def mixture(self, i: int, sigma: float) -> MixtureState:
        return MixtureState(i, self.means[:i], sigma, self.weights[i - 1])


def nuemt_iteration(state: MultitaskState, config: NuEMTConfig, evaluator,
                    table: NoiseTable, run_seed: int,
                    eval_episodes: int = 1) -> IterationLog:
    """One full sweep over the K tasks, mutating state in place."""
    t = state.iteration + 1
    frozen_norm = state.normalizer
    used_allocations = tuple(state.allocations)
    mean_returns = [None] * state.k
    step_count = 0
    all_results = []
    for i in range(1, state.k + 1):
        n_i = state.allocations[i - 1]
        if n_i == 0:
            continue
        mix = state.mixture(i, config.sigma)
        res = task_update(
            mix, n_i, state.horizons[i - 1], task_stream=i, run_seed=run_seed,
            iteration=t, alpha=config.alpha, weight_decay=config.weight_decay,
            fitness_shaping=config.fitness_shaping, r=config.r, table=table,
            evaluator=evaluator, normalizer=frozen_norm)
        if i >= 2:
            b = coefficient_gradient(mix, res.thetas, res.utilities)
            state.weights[i - 1] = simplex_step(state.weights[i - 1], b,
                                                config.beta, config.eps_self)
        state.means[i - 1] = res.new_mean
        mean_returns[i - 1] = res.mean_return
        step_count += res.timesteps
        all_results.extend(res.results)
    state.normalizer = merge_observation_stats(frozen_norm, all_results)
    state.cum_timesteps += step_count
    state.allocations = allocate_populations(state.weights[-1], config.n_total,
                                             state.k)
    state.iteration = t
    eval_return = evaluate_mean(
        state.means[-1], state.horizons[-1], evaluator, config.sigma,
        state.normalizer, run_seed, t, eval_episodes, task_index=state.k)
    return IterationLog(
        iteration=t, cum_timesteps=state.cum_timesteps, stage=1,
        eval_return=eval_return, mean_returns=tuple(mean_returns),
        w_target=tuple(float(v) for v in state.weights[-1]),
        allocations=used_allocations)


def run_nuemt(config: NuEMTConfig, full_horizon: int, budget: int,
              run_seed: int, table: NoiseTable, evaluator,
              eval_episodes: int = 1):
    """Generator driving NuEMT until the timestep budget is exhausted.

    Yields (IterationLog, state) after every iteration.
    """
    state = MultitaskState.initial(config, evaluator.n, evaluator.obs_dim,
                                   full_horizon)
    while state.cum_timesteps < budget:
        log = nuemt_iteration(state, config, evaluator, table, run_seed,
                              eval_episodes)
        yield log, state
