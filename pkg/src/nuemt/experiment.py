"""Experiment configuration, training orchestration, and plot-data export.

A run is described by one JSON config (schema below, unknown keys
rejected).  ``train`` executes one run per seed, streaming a CSV run log,
writing a final checkpoint per seed, and a machine-readable summary with
the mean and standard deviation of final returns across seeds.

Config schema (defaults in parentheses):

    algorithm        "nuemt" | "openai_es" | "pel"        [required]
    env_id           registered environment id             [required]
    env_kwargs       constructor overrides ({})
    K                number of tasks / stages              [required]
    H                full horizon (null -> env default)
    N_total          total population per iteration        [required]
    sigma (0.02)     noise scale
    alpha (0.05)     mean step size
    beta (0.05)      mixture-coefficient step size
    r (1.0)          trust radius of the solution projection, in sigma units
    eps_self (1e-3)  floor on each task's self-coefficient
    weight_decay (0.005)
    fitness_shaping  "ranked" | "raw" ("ranked")
    budget           training timesteps per run            [required]
    seeds            nonempty list of run seeds            [required]
    workers          evaluation processes (null -> cpu count)
    hidden_sizes     policy hidden layers ([64, 64])
    eval_episodes (1)
    noise_table_size (2^25)
    noise_table_seed (2025)
    out_dir          output directory (null -> set on the command line)

openai_es requires K = 1.  Evaluation episodes are measurement only and do
not count against the budget.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .engine import RolloutEvaluator
from .environments import default_policy_spec, make_env, rollout
from .errors import ConfigError
from .es import ESConfig, run_es
from .multitask import NuEMTConfig, run_nuemt, task_horizons
from .noise import DEFAULT_TABLE_SIZE, EPS_SELF, NoiseTable
from .pel import run_pel
from .policy import load_checkpoint, parameter_count, save_checkpoint
from .runlog import RunLogWriter, read_log
from .seeding import eval_episode_seed

ALGORITHMS = ("nuemt", "openai_es", "pel")

_FIELD_TYPES = {
    "algorithm": str, "env_id": str, "env_kwargs": dict, "K": int, "H": int,
    "N_total": int, "sigma": float, "alpha": float, "beta": float, "r": float,
    "eps_self": float, "weight_decay": float, "fitness_shaping": str,
    "budget": int, "seeds": list, "workers": int, "hidden_sizes": list,
    "eval_episodes": int, "noise_table_size": int, "noise_table_seed": int,
    "out_dir": str,
}
_REQUIRED = ("algorithm", "env_id", "K", "N_total", "budget", "seeds")
_OPTIONAL_NONE = ("H", "workers", "out_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated run description; see the module docstring for the schema."""

    algorithm: str
    env_id: str
    K: int
    N_total: int
    budget: int
    seeds: tuple
    env_kwargs: tuple = ()   # sorted (key, value) pairs, kept hashable
    H: int | None = None
    sigma: float = 0.02
    alpha: float = 0.05
    beta: float = 0.05
    r: float = 1.0
    eps_self: float = EPS_SELF
    weight_decay: float = 0.005
    fitness_shaping: str = "ranked"
    workers: int | None = None
    hidden_sizes: tuple = (64, 64)
    eval_episodes: int = 1
    noise_table_size: int = DEFAULT_TABLE_SIZE
    noise_table_seed: int = 2025
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        unknown = sorted(set(data) - set(_FIELD_TYPES))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        missing = [k for k in _REQUIRED if data.get(k) is None]
        if missing:
            raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
        kwargs = {}
        for key, value in data.items():
            if value is None and key in _OPTIONAL_NONE:
                continue
            expected = _FIELD_TYPES[key]
            if expected is float and isinstance(value, (int, float)) \
                    and not isinstance(value, bool):
                value = float(value)
            if expected is int and (isinstance(value, bool)
                                    or not isinstance(value, int)):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            if not isinstance(value, expected):
                raise ConfigError(
                    f"{key} must be {expected.__name__}, got {value!r}")
            if key == "seeds":
                value = tuple(int(s) for s in value)
            elif key == "hidden_sizes":
                value = tuple(int(h) for h in value)
            elif key == "env_kwargs":
                value = tuple(sorted(value.items()))
            kwargs[key] = value
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["env_kwargs"] = dict(self.env_kwargs)
        return d

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.algorithm == "openai_es" and self.K != 1:
            raise ConfigError("K must be 1 for openai_es")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.budget < 1:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if self.N_total < 2 * self.K or self.N_total % 2 != 0:
            raise ConfigError(
                f"N_total must be even and >= 2K, got {self.N_total} with K={self.K}")
        for name in ("sigma", "alpha", "beta", "r"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.eps_self < 1.0:
            raise ConfigError(f"eps_self must lie in (0, 1), got {self.eps_self}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.fitness_shaping not in ("ranked", "raw"):
            raise ConfigError(
                f"fitness_shaping must be 'ranked' or 'raw', got {self.fitness_shaping!r}")
        if self.H is not None and self.H < 1:
            raise ConfigError(f"H must be positive, got {self.H}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden_sizes must be positive, got {self.hidden_sizes}")
        if self.eval_episodes < 1:
            raise ConfigError(f"eval_episodes must be >= 1, got {self.eval_episodes}")
        if self.noise_table_size < 1:
            raise ConfigError("noise_table_size must be positive")


# The table is pure function of (seed, size); cache the most recent one so
# multi-seed runs and test suites do not regenerate it per run.
_TABLE_CACHE: dict = {}


def get_noise_table(seed: int, size: int) -> NoiseTable:
    key = (int(seed), int(size))
    if key not in _TABLE_CACHE:
        _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = NoiseTable(seed, size)
    return _TABLE_CACHE[key]


def _resolve(config: ExperimentConfig):
    """Instantiate env/policy/table and the resolved full horizon."""
    env = make_env(config.env_id, **dict(config.env_kwargs))
    horizon = config.H if config.H is not None else env.spec.max_horizon
    if horizon > env.spec.max_horizon:
        raise ConfigError(
            f"H={horizon} exceeds the {config.env_id} horizon cap "
            f"{env.spec.max_horizon}; raise max_horizon via env_kwargs")
    task_horizons(config.K, horizon)  # raises ConfigError if the split is bad
    policy_spec = default_policy_spec(env, config.hidden_sizes)
    table = get_noise_table(config.noise_table_seed, config.noise_table_size)
    if parameter_count(policy_spec) > config.noise_table_size:
        raise ConfigError("noise_table_size is smaller than the parameter count")
    return env, horizon, policy_spec, table


def _driver(config: ExperimentConfig, horizon: int, run_seed: int, table,
            evaluator):
    """Uniform generator of (IterationLog, theta_target, normalizer)."""
    if config.algorithm == "openai_es":
        es_cfg = ESConfig(config.alpha, config.sigma, config.N_total,
                          config.weight_decay, config.fitness_shaping)
        yield from run_es(es_cfg, horizon, config.budget, run_seed, table,
                          evaluator, config.eval_episodes)
    elif config.algorithm == "pel":
        es_cfg = ESConfig(config.alpha, config.sigma, config.N_total,
                          config.weight_decay, config.fitness_shaping)
        yield from run_pel(es_cfg, config.K, horizon, config.budget, run_seed,
                           table, evaluator, config.eval_episodes)
    else:
        mt_cfg = NuEMTConfig(config.N_total, config.K, config.sigma,
                             config.alpha, config.beta, config.r,
                             config.eps_self, config.weight_decay,
                             config.fitness_shaping)
        for log, state in run_nuemt(mt_cfg, horizon, config.budget, run_seed,
                                    table, evaluator, config.eval_episodes):
            yield log, state.means[-1], state.normalizer


def train(config: ExperimentConfig, out_dir=None, workers=None, seeds=None) -> dict:
    """Run one training run per seed; write logs, checkpoints, and a summary.

    Returns the summary dict (also written to ``summary.json``).
    """
    out = out_dir or config.out_dir
    if not out:
        raise ConfigError("out_dir must be set in the config or on the command line")
    run_seeds = tuple(seeds) if seeds else config.seeds
    n_workers = workers or config.workers or os.cpu_count() or 1
    os.makedirs(out, exist_ok=True)
    env, horizon, policy_spec, table = _resolve(config)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(dict(config.to_dict(), H=horizon), fh, indent=2, sort_keys=True)

    final_eval = {}
    final_train = {}
    final_cum = {}
    for run_seed in run_seeds:
        evaluator = RolloutEvaluator(config.env_id, policy_spec, table,
                                     workers=n_workers,
                                     env_kwargs=dict(config.env_kwargs))
        log_path = os.path.join(out, f"log_seed{run_seed}.csv")
        last = None
        with RunLogWriter(log_path, config.K) as writer:
            for log, theta, normalizer in _driver(config, horizon, run_seed,
                                                  table, evaluator):
                writer.write(log)
                last = (log, theta, normalizer)
        log, theta, normalizer = last
        save_checkpoint(
            os.path.join(out, f"checkpoint_seed{run_seed}.json"),
            policy_spec, theta, normalizer,
            extra={"algorithm": config.algorithm, "env_id": config.env_id,
                   "env_kwargs": dict(config.env_kwargs), "run_seed": run_seed,
                   "cum_timesteps": log.cum_timesteps, "H": horizon})
        final_eval[run_seed] = log.eval_return
        final_train[run_seed] = log.mean_returns[-1]
        final_cum[run_seed] = log.cum_timesteps

    evals = np.array([final_eval[s] for s in run_seeds], dtype=float)
    summary = {
        "algorithm": config.algorithm,
        "env_id": config.env_id,
        "K": config.K,
        "H": horizon,
        "budget": config.budget,
        "seeds": list(run_seeds),
        "final_eval_returns": {str(s): final_eval[s] for s in run_seeds},
        "final_train_returns": {str(s): final_train[s] for s in run_seeds},
        "cum_timesteps": {str(s): final_cum[s] for s in run_seeds},
        "final_eval_mean": float(evals.mean()),
        "final_eval_std": float(evals.std()),
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def evaluate(checkpoint_path, env_id=None, episodes: int = 10, horizon=None,
             seed: int = 0):
    """Score a checkpointed policy; returns (mean return, per-episode list)."""
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    policy_spec, params, normalizer, extra = load_checkpoint(checkpoint_path)
    env_id = env_id or extra.get("env_id")
    if not env_id:
        raise ConfigError("checkpoint lacks an env_id; pass one explicitly")
    env_kwargs = extra.get("env_kwargs", {}) if env_id == extra.get("env_id") else {}
    env = make_env(env_id, **env_kwargs)
    if (env.spec.obs_dim, env.spec.action_dim) != (policy_spec.obs_dim,
                                                   policy_spec.action_dim):
        raise ConfigError(
            f"checkpoint dims (obs={policy_spec.obs_dim}, act={policy_spec.action_dim}) "
            f"do not match {env_id} (obs={env.spec.obs_dim}, act={env.spec.action_dim})")
    if horizon is None and env_id == extra.get("env_id"):
        horizon = extra.get("H")
    horizon = horizon or env.spec.max_horizon
    returns = []
    for e in range(episodes):
        result, _ = rollout(env, policy_spec, params, normalizer, horizon,
                            eval_episode_seed(seed, 0, e))
        returns.append(result.total_return)
    return float(np.mean(returns)), returns


def _series(rows, row_value):
    """(timesteps, values) for rows where row_value yields a number."""
    xs, ys = [], []
    for row in rows:
        v = row_value(row)
        if v is not None:
            xs.append(row.cum_timesteps)
            ys.append(v)
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


def emit_plot_data(run_dirs, out_path, points: int = 200) -> None:
    """Align runs onto a common timestep grid and write mean/std curves.

    Emits, per algorithm label: the evaluation-return curve and the
    target-task training-return curve (mean and population std across
    seeds), plus the mean coefficient trajectories w_1..w_K for nuemt runs.
    All run directories must concern the same environment.
    """
    groups = []
    env_ids = set()
    for run_dir in run_dirs:
        cfg_path = os.path.join(run_dir, "config.json")
        try:
            with open(cfg_path, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"{run_dir} has no config.json") from None
        logs = sorted(f for f in os.listdir(run_dir)
                      if f.startswith("log_seed") and f.endswith(".csv"))
        if not logs:
            raise ConfigError(f"{run_dir} has no run logs")
        rows_per_seed = [read_log(os.path.join(run_dir, f)) for f in logs]
        env_ids.add(cfg["env_id"])
        groups.append((cfg, rows_per_seed))
    if len(env_ids) > 1:
        raise ConfigError(f"run dirs mix environments: {sorted(env_ids)}")

    lo = min(rows[0].cum_timesteps for _, per in groups for rows in per)
    hi = min(rows[-1].cum_timesteps for _, per in groups for rows in per)
    grid = np.linspace(lo, hi, points) if hi > lo else np.array([float(hi)])

    columns = {"timesteps": grid}
    seen = {}
    for cfg, rows_per_seed in groups:
        label = cfg["algorithm"]
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            label = f"{label}_{seen[label]}"
        k = cfg["K"]
        for name, getter in (("eval", lambda r: r.eval_return),
                             ("train", lambda r: r.mean_returns[k - 1])):
            curves = []
            for rows in rows_per_seed:
                xs, ys = _series(rows, getter)
                if xs.size:
                    curves.append(np.interp(grid, xs, ys))
            if not curves:
                continue
            curves = np.vstack(curves)
            columns[f"{label}_{name}_mean"] = curves.mean(axis=0)
            columns[f"{label}_{name}_std"] = curves.std(axis=0)
        if cfg["algorithm"] == "nuemt":
            for j in range(k):
                curves = np.vstack([
                    np.interp(grid, *_series(rows, lambda r: r.w_target[j]))
                    for rows in rows_per_seed])
                columns[f"{label}_w_{j + 1}_mean"] = curves.mean(axis=0)

    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        names = list(columns)
        fh.write(",".join(names) + "\n")
        for row_idx in range(grid.size):
            fh.write(",".join(repr(float(columns[c][row_idx])) for c in names) + "\n")
