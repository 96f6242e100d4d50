"""Deterministic parallel evaluation of candidate populations.

Jobs carry provenance indices, never parameter vectors: each worker
rebuilds theta_k from the shared noise table plus the iteration-frozen
component means, evaluates one episode, and reports fitness together with
raw observation moments.  Results are sorted by sample index before any
reduction, so every downstream quantity is bitwise identical for any
worker count.

Worker processes are forked once per batch (POSIX fork, so the noise
table and means are shared copy-on-write and nothing large is pickled).
A failed job is retried once in the parent; a second failure aborts the
run with diagnostics.
"""

from __future__ import annotations

import multiprocessing as mp
import traceback
from dataclasses import dataclass

import numpy as np

from .environments import make_env, rollout
from .errors import EvaluationError
from .noise import NoiseTable, materialize
from .policy import PolicySpec, RunningNormalizer, parameter_count


@dataclass(frozen=True)
class EvalJob:
    """One evaluation: rebuildable candidate plus episode coordinates.

    sign +1/-1 selects the mirror half; sign 0 requests the component mean
    itself (used to score the current policy, offset is ignored).
    """

    sample_index: int
    task_index: int
    component: int
    offset: int
    sign: int
    horizon: int
    episode_seed: int


@dataclass(frozen=True)
class EvalResult:
    """Fitness plus raw observation moments for the normalizer merge."""

    sample_index: int
    fitness: float
    timesteps_used: int
    obs_count: int
    obs_sum: np.ndarray | None
    obs_sumsq: np.ndarray | None


# Per-process context for pool workers, populated by the initializer.
_CTX = None


def _init_worker(ctx):
    global _CTX
    env = make_env(ctx["env_id"], **ctx["env_kwargs"])
    _CTX = dict(ctx, env=env)


def _run_one(env, policy_spec, table, means, sigma, norm, job: EvalJob):
    theta = materialize(table, means, job.component, job.offset, job.sign, sigma)
    result, trace = rollout(env, policy_spec, theta, norm, job.horizon, job.episode_seed)
    return EvalResult(
        sample_index=job.sample_index,
        fitness=result.total_return,
        timesteps_used=result.timesteps_used,
        obs_count=trace.shape[0],
        obs_sum=trace.sum(axis=0),
        obs_sumsq=(trace * trace).sum(axis=0),
    )


def _worker_shard(jobs):
    ctx = _CTX
    out = []
    for job in jobs:
        try:
            out.append(("ok", _run_one(ctx["env"], ctx["policy_spec"], ctx["table"],
                                       ctx["means"], ctx["sigma"], ctx["norm"], job)))
        except Exception:
            out.append(("err", (job, traceback.format_exc())))
    return out


class RolloutEvaluator:
    """Evaluates populations by environment rollouts, optionally in parallel."""

    def __init__(self, env_id: str, policy_spec: PolicySpec, table: NoiseTable,
                 workers: int = 1, env_kwargs: dict | None = None):
        self.env_id = env_id
        self.env_kwargs = dict(env_kwargs or {})
        self.policy_spec = policy_spec
        self.table = table
        self.workers = max(1, int(workers))
        self._env = make_env(env_id, **self.env_kwargs)
        self.obs_dim = self._env.spec.obs_dim
        self.n = parameter_count(policy_spec)

    def evaluate_batch(self, jobs, means, sigma: float,
                       norm: RunningNormalizer) -> list:
        """Evaluate all jobs; results sorted by sample index.

        Bitwise identical output for any worker count: every job is computed
        in isolation and the aggregation order is fixed by sample index.
        """
        jobs = list(jobs)
        if not jobs:
            return []
        self._means = list(means)
        self._sigma = float(sigma)
        self._norm = norm
        w = min(self.workers, len(jobs))
        if w == 1:
            tagged = self._run_local(jobs)
        else:
            tagged = self._run_pool(jobs, w)
        results = []
        for tag, payload in tagged:
            if tag == "ok":
                results.append(payload)
                continue
            job, tb = payload
            # Single retry in the parent on a fresh environment instance.
            try:
                retry_env = make_env(self.env_id, **self.env_kwargs)
                results.append(_run_one(retry_env, self.policy_spec, self.table,
                                        means, sigma, norm, job))
            except Exception as exc:
                raise EvaluationError(
                    f"evaluation failed twice for {job}: {exc}\n"
                    f"first failure:\n{tb}") from exc
        results.sort(key=lambda r: r.sample_index)
        if len({r.sample_index for r in results}) != len(jobs):
            raise EvaluationError("duplicate or missing sample indices in results")
        return results

    def _run_local(self, jobs):
        out = []
        for job in jobs:
            try:
                out.append(("ok", _run_one(self._env, self.policy_spec, self.table,
                                           self._means, self._sigma, self._norm, job)))
            except Exception:
                out.append(("err", (job, traceback.format_exc())))
        return out

    def _run_pool(self, jobs, w):
        ctx = {
            "env_id": self.env_id,
            "env_kwargs": self.env_kwargs,
            "policy_spec": self.policy_spec,
            "table": self.table,
            "means": self._means,
            "sigma": self._sigma,
            "norm": self._norm,
        }
        shards = [jobs[k::w] for k in range(w)]
        mp_ctx = mp.get_context("fork")
        with mp_ctx.Pool(processes=w, initializer=_init_worker, initargs=(ctx,)) as pool:
            shard_results = pool.map(_worker_shard, shards)
        return [item for shard in shard_results for item in shard]


class SyntheticEvaluator:
    """Analytic fitness oracle; each evaluation counts as one timestep.

    ``fitness_fn(task_index, theta) -> float`` selects the objective, so
    multitask tests can give each task its own optimum.  Always runs
    in-process (the oracle is far cheaper than any dispatch).
    """

    def __init__(self, n: int, fitness_fn, table: NoiseTable):
        self.n = int(n)
        self.obs_dim = 1
        self.fitness_fn = fitness_fn
        self.table = table
        self.workers = 1

    def evaluate_batch(self, jobs, means, sigma: float,
                       norm: RunningNormalizer) -> list:
        results = []
        for job in jobs:
            theta = materialize(self.table, means, job.component, job.offset,
                                job.sign, sigma)
            f = float(self.fitness_fn(job.task_index, theta))
            results.append(EvalResult(job.sample_index, f, 1, 0, None, None))
        results.sort(key=lambda r: r.sample_index)
        return results


def merge_observation_stats(norm: RunningNormalizer, results) -> RunningNormalizer:
    """Fold per-episode observation moments into the normalizer.

    Results must already be in sample-index order; the fold order is part
    of the determinism contract.
    """
    out = norm
    for res in results:
        if res.obs_count:
            out = out.merge(RunningNormalizer.from_moments(
                norm.dim, res.obs_count, res.obs_sum, res.obs_sumsq))
    return out
