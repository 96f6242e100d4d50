"""Single-task OpenAI-style evolution strategy.

The heart of the module is ``task_update``, which performs one full
search-distribution update for an arbitrary labeled mixture: sample,
evaluate, rank-shape, project foreign samples into the trust region,
importance-weight, and step the mean.  Plain ES is the single-component
special case (every importance weight is exactly 1.0 and the self
coefficient is exactly 1.0, so the update reduces bitwise to

    theta <- theta + alpha * ((1 / (N sigma^2)) sum_k u_k (theta_k - theta)
                              - weight_decay * theta)

with mirrored sampling); the multitask optimizer calls the same function
per task, which is what makes its K=1 reduction to ES exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .engine import EvalJob, merge_observation_stats
from .errors import ContractViolation, EvaluationError
from .noise import (MixtureState, NoiseTable, density_ratios,
                    log_component_densities, perturbations, sample_population)
from .policy import RunningNormalizer
from .runlog import IterationLog

SHAPING_MODES = ("ranked", "raw")


@dataclass(frozen=True)
class ESConfig:
    """Hyperparameters of the single-task optimizer."""

    alpha: float
    sigma: float
    n_pop: int
    weight_decay: float = 0.005
    fitness_shaping: str = "ranked"

    def __post_init__(self):
        if self.alpha <= 0.0 or self.sigma <= 0.0:
            raise ContractViolation("alpha and sigma must be positive")
        if self.n_pop < 2 or self.n_pop % 2 != 0:
            raise ContractViolation("population size must be even and >= 2")
        if self.fitness_shaping not in SHAPING_MODES:
            raise ContractViolation(
                f"fitness_shaping must be one of {SHAPING_MODES}")


def rank_utilities(fitnesses) -> np.ndarray:
    """Rank-based utilities, returned in sample order.

    Sample with descending-fitness rank k (1-based, ties broken by sample
    index) receives u_k = max(0, ln(N/2 + 1) - ln k) normalized to sum 1.
    """
    f = np.asarray(fitnesses, dtype=float)
    n = f.size
    if n < 1:
        raise ContractViolation("rank_utilities needs at least one fitness")
    order = np.argsort(-f, kind="stable")
    base = np.maximum(0.0, np.log(n / 2.0 + 1.0) - np.log(np.arange(1, n + 1)))
    utilities = np.empty(n)
    utilities[order] = base / base.sum()
    return utilities


@dataclass
class TaskUpdateResult:
    """Everything one mixture update produced, for logging and coefficients."""

    new_mean: np.ndarray
    records: list
    thetas: np.ndarray          # unprojected candidates, row k = sample k
    utilities: np.ndarray       # uncentered shaped fitness, sample order
    mean_return: float
    timesteps: int
    results: list               # EvalResults in sample order


def task_update(mix: MixtureState, n_pop: int, horizon: int, task_stream: int,
                run_seed: int, iteration: int, *, alpha: float,
                weight_decay: float, fitness_shaping: str, r: float,
                table: NoiseTable, evaluator, normalizer: RunningNormalizer
                ) -> TaskUpdateResult:
    """One search-distribution mean update for task ``mix.task_index``.

    Samples n_pop mirrored candidates from the mixture, evaluates them at
    ``horizon``, shapes fitness, pulls foreign-labeled candidates back to
    the trust radius r (utilities ride along unchanged), and takes the
    importance-weighted gradient step on the task's own mean.  All random
    streams derive from (run_seed, iteration, task_stream).
    """
    i = mix.task_index
    own_mean = mix.means[i - 1]
    n = own_mean.size
    rng = seeding.sampling_rng(run_seed, iteration, task_stream)
    records = sample_population(mix, n_pop, table, rng)
    ep_seeds = seeding.episode_seeds(run_seed, iteration, task_stream, n_pop // 2)
    jobs = [EvalJob(rec.sample_index, task_stream, rec.component, rec.offset,
                    rec.sign, horizon, int(ep_seeds[rec.sample_index // 2]))
            for rec in records]
    results = evaluator.evaluate_batch(jobs, mix.means, mix.sigma, normalizer)
    fitness = np.array([res.fitness for res in results])
    if not np.all(np.isfinite(fitness)):
        bad = [records[k] for k in np.flatnonzero(~np.isfinite(fitness))[:8]]
        raise EvaluationError(
            f"non-finite fitness in task {i} at iteration {iteration}; "
            f"offending records: {bad}")
    for rec, f in zip(records, fitness):
        rec.fitness = float(f)

    if fitness_shaping == "ranked":
        utilities = rank_utilities(fitness)
    else:
        utilities = fitness.copy()
    for rec, u in zip(records, utilities):
        rec.utility = float(u)

    # Candidates and their offsets from the task's own mean.  Own-label rows
    # use the raw table perturbation so mirrored pairs cancel exactly;
    # foreign rows are projected into the trust region, and the density
    # ratio below is evaluated at the projected point.
    perts = perturbations(table, records, mix.sigma, n)
    thetas = np.empty_like(perts)
    deltas = np.empty_like(perts)
    for k, rec in enumerate(records):
        thetas[k] = mix.means[rec.component - 1] + perts[k]
        if rec.component == i:
            deltas[k] = perts[k]
        else:
            delta = thetas[k] - own_mean
            dist = float(np.linalg.norm(delta)) / mix.sigma
            if dist > r:
                delta = (delta * r) / dist
                rec.proj_scale = r / dist
            deltas[k] = delta
    projected = own_mean + deltas

    log_p = log_component_densities(projected, mix.means, mix.sigma)
    ratios = density_ratios(i, log_p, mix.weights)

    if fitness_shaping == "ranked":
        shaped = utilities - utilities.mean()
    else:
        shaped = utilities
    coeff = (mix.weights[-1] * shaped) * ratios
    gradient = (coeff[:, None] * deltas).sum(axis=0) / (n_pop * mix.sigma * mix.sigma)
    if not np.all(np.isfinite(gradient)):
        raise EvaluationError(
            f"non-finite mean gradient in task {i} at iteration {iteration}; "
            f"records: {records[:8]}")
    gradient = gradient - weight_decay * own_mean
    new_mean = own_mean + alpha * gradient

    return TaskUpdateResult(
        new_mean=new_mean,
        records=records,
        thetas=thetas,
        utilities=utilities,
        mean_return=float(fitness.mean()),
        timesteps=int(sum(res.timesteps_used for res in results)),
        results=results,
    )


def _single_mixture(theta: np.ndarray, sigma: float) -> MixtureState:
    return MixtureState(1, [theta], sigma, np.array([1.0]))


def es_iteration(theta: np.ndarray, config: ESConfig, horizon: int,
                 evaluator, table: NoiseTable, normalizer: RunningNormalizer,
                 run_seed: int, iteration: int) -> tuple:
    """One ES update of theta; returns (new_theta, TaskUpdateResult)."""
    res = task_update(
        _single_mixture(theta, config.sigma), config.n_pop, horizon,
        task_stream=1, run_seed=run_seed, iteration=iteration,
        alpha=config.alpha, weight_decay=config.weight_decay,
        fitness_shaping=config.fitness_shaping, r=1.0, table=table,
        evaluator=evaluator, normalizer=normalizer)
    return res.new_mean, res


def evaluate_mean(theta: np.ndarray, horizon: int, evaluator, sigma: float,
                  normalizer: RunningNormalizer, run_seed: int, iteration: int,
                  episodes: int, task_index: int = 1) -> float:
    """Deterministic evaluation rollouts of a mean policy (not budgeted)."""
    jobs = [EvalJob(e, task_index, 1, 0, 0, horizon,
                    seeding.eval_episode_seed(run_seed, iteration, e))
            for e in range(episodes)]
    results = evaluator.evaluate_batch(jobs, [theta], sigma, normalizer)
    return float(np.mean([res.fitness for res in results]))


def run_es(config: ESConfig, horizon: int, budget: int, run_seed: int,
           table: NoiseTable, evaluator, eval_episodes: int = 1):
    """Generator driving ES until the timestep budget is exhausted.

    Yields (IterationLog, theta, normalizer) after every iteration; the
    last yielded pair is the run's final state.
    """
    theta = np.zeros(evaluator.n)
    normalizer = RunningNormalizer(evaluator.obs_dim)
    cum = 0
    t = 0
    while cum < budget:
        t += 1
        theta, res = es_iteration(theta, config, horizon, evaluator, table,
                                  normalizer, run_seed, t)
        normalizer = merge_observation_stats(normalizer, res.results)
        cum += res.timesteps
        eval_return = evaluate_mean(theta, horizon, evaluator, config.sigma,
                                    normalizer, run_seed, t, eval_episodes)
        yield IterationLog(
            iteration=t, cum_timesteps=cum, stage=1, eval_return=eval_return,
            mean_returns=(res.mean_return,), w_target=(1.0,),
            allocations=(config.n_pop,)), theta, normalizer
