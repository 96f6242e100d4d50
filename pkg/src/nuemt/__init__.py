"""Derivative-free policy search over deterministic control environments.

Implements isotropic-Gaussian evolution strategies (openai_es), a
multitask variant that trains a ladder of truncated-horizon tasks jointly
and shares samples across them through per-task Gaussian mixtures with
importance-sampling corrections (nuemt), and a sequential curriculum
baseline that walks the same ladder one stage at a time (pel).
"""

from .engine import (EvalJob, EvalResult, RolloutEvaluator, SyntheticEvaluator,
                     merge_observation_stats)
from .environments import (EnvSpec, EpisodeResult, default_policy_spec,
                           make_env, register_env, rollout, synthetic_fitness)
from .errors import ConfigError, ContractViolation, EvaluationError
from .es import ESConfig, es_iteration, evaluate_mean, rank_utilities, run_es, task_update
from .experiment import (ExperimentConfig, emit_plot_data, evaluate,
                         get_noise_table, train)
from .multitask import (MultitaskState, NuEMTConfig, allocate_populations,
                        coefficient_gradient, nuemt_iteration, run_nuemt,
                        simplex_step, task_horizons)
from .noise import (EPS_SELF, MixtureState, NoiseTable, SampleRecord,
                    density_ratio, density_ratios, largest_remainder,
                    mahalanobis_project, sample_population)
from .pel import PELSchedule, run_pel
from .policy import (PolicySpec, RunningNormalizer, flatten, forward,
                     load_checkpoint, parameter_count, save_checkpoint,
                     unflatten)
from .runlog import IterationLog, RunLogWriter, read_log

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractViolation", "EvaluationError",
    "PolicySpec", "RunningNormalizer", "parameter_count", "forward",
    "flatten", "unflatten", "save_checkpoint", "load_checkpoint",
    "EnvSpec", "EpisodeResult", "make_env", "register_env", "rollout",
    "default_policy_spec", "synthetic_fitness",
    "NoiseTable", "MixtureState", "SampleRecord", "EPS_SELF",
    "sample_population", "density_ratio", "density_ratios",
    "mahalanobis_project", "largest_remainder",
    "EvalJob", "EvalResult", "RolloutEvaluator", "SyntheticEvaluator",
    "merge_observation_stats",
    "ESConfig", "rank_utilities", "es_iteration", "task_update",
    "evaluate_mean", "run_es",
    "NuEMTConfig", "MultitaskState", "task_horizons", "allocate_populations",
    "coefficient_gradient", "simplex_step", "nuemt_iteration", "run_nuemt",
    "PELSchedule", "run_pel",
    "IterationLog", "RunLogWriter", "read_log",
    "ExperimentConfig", "train", "evaluate", "emit_plot_data",
    "get_noise_table",
]
