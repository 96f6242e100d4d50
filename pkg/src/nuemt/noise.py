"""Shared noise table, mixture sampling, density ratios, and projection.

Candidate solutions are never shipped around as vectors: a sample is a
(component label, table offset, mirror sign) triple that any process
holding the table and the current component means can rebuild exactly.
Density ratios for importance weighting are computed in the log domain;
the Gaussian normalizing constants cancel because every component shares
the same isotropic sigma^2 I covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# Lower floor for the self-coefficient keeps the mixture's support covering
# the task's own search distribution.
EPS_SELF = 1e-3

# Upper clip for log importance weights before exponentiation; preserves
# ordering and keeps pathological geometry from overflowing to inf.
_LOG_CLIP = 700.0

DEFAULT_TABLE_SIZE = 2 ** 25


class NoiseTable:
    """Immutable bank of standard-normal draws, reproducible from its seed."""

    def __init__(self, seed: int, length: int = DEFAULT_TABLE_SIZE):
        if length < 1:
            raise ContractViolation("noise table length must be positive")
        self.seed = int(seed)
        self.length = int(length)
        self.entries = np.random.default_rng(self.seed).standard_normal(self.length)
        self.entries.flags.writeable = False

    def slice(self, offset: int, n: int) -> np.ndarray:
        """Read-only view of n consecutive entries starting at offset."""
        if offset < 0 or offset + n > self.length:
            raise ContractViolation(
                f"slice [{offset}, {offset + n}) outside table of length {self.length}")
        return self.entries[offset:offset + n]

    def max_offset(self, n: int) -> int:
        if n > self.length:
            raise ContractViolation(
                f"table of length {self.length} cannot serve vectors of size {n}")
        return self.length - n


@dataclass
class MixtureState:
    """Task i's search distribution: component means, shared sigma, weights.

    Component j's density is N(means[j-1], sigma^2 I); the mixture is
    sum_j weights[j-1] * p_j.  Weights live on the simplex with the task's
    own entry (the last one) floored at eps_self.
    """

    task_index: int
    means: list
    sigma: float
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.sigma <= 0.0:
            raise ContractViolation("sigma must be positive")
        if len(self.means) != self.task_index or self.weights.shape != (self.task_index,):
            raise ContractViolation(
                f"task {self.task_index} mixture needs {self.task_index} means and weights")

    def validate(self, eps_self: float = EPS_SELF) -> None:
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ContractViolation(f"mixture weights sum to {self.weights.sum()!r}, not 1")
        if np.any(self.weights < 0.0):
            raise ContractViolation("mixture weights must be nonnegative")
        if self.weights[-1] < eps_self:
            raise ContractViolation(
                f"self-coefficient {self.weights[-1]!r} below floor {eps_self!r}")


@dataclass
class SampleRecord:
    """One candidate: provenance triple plus evaluation results filled later.

    The realized parameter vector is implied by (component, offset, sign):
    theta = means[component-1] + sign * sigma * table[offset:offset+n].
    ``proj_scale`` is min(1, r / distance) from the trust-region projection;
    1.0 means the sample was not moved.
    """

    sample_index: int
    component: int
    offset: int
    sign: int
    fitness: float | None = None
    utility: float | None = None
    proj_scale: float = 1.0


def largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` by the largest-remainder rule.

    Ties in the fractional parts are broken by lower index.  The result
    satisfies |counts[j] - quotas[j]| < 1 whenever sum(quotas) == total.
    """
    quotas = np.maximum(np.asarray(quotas, dtype=float), 0.0)
    counts = np.floor(quotas).astype(int)
    remaining = int(total) - int(counts.sum())
    if remaining < 0:
        raise ContractViolation("quotas exceed the total being apportioned")
    if remaining > 0:
        fracs = quotas - np.floor(quotas)
        order = np.lexsort((np.arange(quotas.size), -fracs))
        counts[order[:remaining]] += 1
    return counts


def sample_population(mix: MixtureState, n_samples: int, table: NoiseTable,
                      seed) -> list:
    """Draw a labeled, mirrored population from the mixture.

    Samples are allocated to components by stratified proportional counts
    (largest remainder over mirror pairs, so every component count is even),
    then laid out component-major as (+1, -1) pairs sharing one table offset.
    ``seed`` may be an integer or a Generator; identical seeds reproduce
    identical records.
    """
    if n_samples % 2 != 0 or n_samples < 0:
        raise ContractViolation(f"population size {n_samples} must be even")
    mix.validate()
    if n_samples == 0:
        return []
    rng = np.random.default_rng(seed)
    n = mix.means[0].size
    n_pairs = n_samples // 2
    offsets = rng.integers(0, table.max_offset(n) + 1, size=n_pairs)
    pair_counts = largest_remainder(mix.weights * n_pairs, n_pairs)
    records = []
    pair = 0
    for j, c in enumerate(pair_counts, start=1):
        for _ in range(int(c)):
            off = int(offsets[pair])
            records.append(SampleRecord(2 * pair, j, off, +1))
            records.append(SampleRecord(2 * pair + 1, j, off, -1))
            pair += 1
    return records


def materialize(table: NoiseTable, means: list, component: int, offset: int,
                sign: int, sigma: float) -> np.ndarray:
    """Rebuild a candidate vector from its provenance triple.

    sign 0 denotes the component mean itself (used for evaluation rollouts).
    """
    mean = means[component - 1]
    if sign == 0:
        return mean.copy()
    return mean + (sign * sigma) * table.slice(offset, mean.size)


def perturbations(table: NoiseTable, records: list, sigma: float, n: int) -> np.ndarray:
    """Matrix of sign * sigma * epsilon rows, one per record.

    These are the exact offsets of each sample from its own component mean;
    mirrored rows are exact negations of each other.
    """
    out = np.empty((len(records), n))
    for k, rec in enumerate(records):
        out[k] = (rec.sign * sigma) * table.slice(rec.offset, n)
    return out


def log_component_densities(thetas: np.ndarray, means: list, sigma: float) -> np.ndarray:
    """Unnormalized log densities: [k, j] = -||theta_k - mean_j||^2 / (2 sigma^2).

    The shared Gaussian constant is dropped; every ratio formed from these
    values cancels it anyway.
    """
    thetas = np.atleast_2d(thetas)
    out = np.empty((thetas.shape[0], len(means)))
    inv = 1.0 / (2.0 * sigma * sigma)
    for j, mu in enumerate(means):
        d = thetas - mu
        out[:, j] = -(d * d).sum(axis=1) * inv
    return out


def density_ratios(numerator: int, log_p: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Vector of p_numerator(theta_k) / q(theta_k) from a log-density matrix.

    q is the weights-mixture over the columns of log_p; zero-weight
    components are excluded from the mixture sum (their density still may
    appear in the numerator).  Computed with max-subtraction; exact 1.0
    when the mixture has a single active component equal to the numerator.
    """
    weights = np.asarray(weights, dtype=float)
    active = np.flatnonzero(weights > 0.0)
    if active.size == 0:
        raise ContractViolation("mixture has no active component")
    terms = np.log(weights[active]) + log_p[:, active]
    peak = terms.max(axis=1)
    log_q = peak + np.log(np.exp(terms - peak[:, None]).sum(axis=1))
    return np.exp(np.minimum(log_p[:, numerator - 1] - log_q, _LOG_CLIP))


def density_ratio(numerator: int, theta: np.ndarray, mix: MixtureState) -> float:
    """p_j(theta) / q_i(theta) for one point (log-domain, stable)."""
    if mix.sigma <= 0.0:
        raise ContractViolation("sigma must be positive")
    log_p = log_component_densities(np.asarray(theta, dtype=float), mix.means, mix.sigma)
    return float(density_ratios(numerator, log_p, mix.weights)[0])


def _project_with_scale(theta: np.ndarray, mean: np.ndarray, sigma: float,
                        r: float) -> tuple:
    delta = theta - mean
    dist = float(np.linalg.norm(delta)) / sigma
    if dist <= r:
        return theta, 1.0
    # (delta * r) / dist rather than delta * (r / dist): correctly-rounded
    # division keeps the documented fixed cases exact.
    return mean + (delta * r) / dist, r / dist


def mahalanobis_project(theta: np.ndarray, target_mean: np.ndarray, sigma: float,
                        r: float = 1.0) -> np.ndarray:
    """Pull theta back to within r sigma-units of target_mean, keeping direction.

    theta' = mean + (theta - mean) * min(1, r / ||(theta - mean) / sigma||).
    Points already inside the radius are returned unchanged.
    """
    if r <= 0.0:
        raise ContractViolation("projection radius r must be positive")
    theta = np.asarray(theta, dtype=float)
    target_mean = np.asarray(target_mean, dtype=float)
    projected, _ = _project_with_scale(theta, target_mean, float(sigma), float(r))
    return projected
