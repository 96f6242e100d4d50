"""Deterministic tanh MLP policy over a flat parameter vector.

The optimizer side of the package only ever sees flat vectors in R^n
(``ParamVector``); this module owns the mapping between those vectors and
the layered network, plus the running observation normalizer whose
statistics are frozen during an iteration and merged at iteration
barriers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# Variance floor in the observation whitening denominator.
EPS_NORM = 1e-8

# Flat vector of policy parameters, length parameter_count(spec).
ParamVector = np.ndarray


@dataclass(frozen=True)
class PolicySpec:
    """Network shape and action bounds.

    Attributes:
        obs_dim: observation dimensionality.
        action_dim: action dimensionality.
        hidden_sizes: widths of the tanh hidden layers.
        action_low: per-dimension lower action bound.
        action_high: per-dimension upper action bound.
    """

    obs_dim: int
    action_dim: int
    hidden_sizes: tuple = (64, 64)
    action_low: tuple = (-1.0,)
    action_high: tuple = (1.0,)

    def __post_init__(self):
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ContractViolation("obs_dim and action_dim must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ContractViolation("hidden sizes must be positive")
        low = _as_bound(self.action_low, self.action_dim)
        high = _as_bound(self.action_high, self.action_dim)
        if not all(lo < hi for lo, hi in zip(low, high)):
            raise ContractViolation("action_low must be < action_high componentwise")
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)

    def layer_dims(self) -> list:
        """(fan_in, fan_out) per affine layer, input to output."""
        sizes = [self.obs_dim, *self.hidden_sizes, self.action_dim]
        return list(zip(sizes[:-1], sizes[1:]))


def _as_bound(value, dim: int) -> tuple:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(dim, arr[0])
    if arr.size != dim:
        raise ContractViolation(
            f"action bound has {arr.size} entries, expected {dim}")
    return tuple(float(v) for v in arr)


def parameter_count(spec: PolicySpec) -> int:
    """Total flat length: sum over layers of (fan_in + 1) * fan_out."""
    return sum((fi + 1) * fo for fi, fo in spec.layer_dims())


def unflatten(spec: PolicySpec, params: ParamVector) -> list:
    """Views (W, b) per layer into the flat vector; no copies."""
    params = np.asarray(params)
    if params.ndim != 1 or params.size != parameter_count(spec):
        raise ContractViolation(
            f"params has length {params.size}, expected {parameter_count(spec)}")
    layers = []
    pos = 0
    for fi, fo in spec.layer_dims():
        w = params[pos:pos + fi * fo].reshape(fo, fi)
        pos += fi * fo
        b = params[pos:pos + fo]
        pos += fo
        layers.append((w, b))
    return layers


def flatten(layers) -> ParamVector:
    """Inverse of unflatten: concatenate row-major weights and biases."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=float).ravel())
        parts.append(np.asarray(b, dtype=float).ravel())
    return np.concatenate(parts)


class RunningNormalizer:
    """Streaming per-dimension mean/variance (Welford parallel form).

    Attributes:
        count: number of absorbed observation vectors.
        mean: per-dimension running mean.
        m2: per-dimension sum of squared deviations from the mean, so the
            population variance is m2 / count for count > 0.
    """

    def __init__(self, dim: int, count: int = 0, mean=None, m2=None):
        self.dim = int(dim)
        self.count = int(count)
        self.mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float).copy()
        self.m2 = np.zeros(dim) if m2 is None else np.asarray(m2, dtype=float).copy()
        if self.mean.shape != (self.dim,) or self.m2.shape != (self.dim,):
            raise ContractViolation("normalizer statistics have wrong dimension")

    def copy(self) -> "RunningNormalizer":
        return RunningNormalizer(self.dim, self.count, self.mean, self.m2)

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return np.maximum(self.m2 / self.count, 0.0)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if self.count == 0:
            return obs.copy()
        return (obs - self.mean) * (1.0 / np.sqrt(self.variance + EPS_NORM))

    def update(self, batch) -> "RunningNormalizer":
        """New normalizer with the batch of observation vectors absorbed."""
        batch = np.asarray(batch, dtype=float)
        if batch.size == 0:
            return self.copy()
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.shape[1] != self.dim:
            raise ContractViolation(
                f"batch has dimension {batch.shape[1]}, expected {self.dim}")
        n = batch.shape[0]
        bmean = batch.mean(axis=0)
        bm2 = ((batch - bmean) ** 2).sum(axis=0)
        return self.merge(RunningNormalizer(self.dim, n, bmean, bm2))

    def merge(self, other: "RunningNormalizer") -> "RunningNormalizer":
        """Chan parallel combination; associative/commutative up to float error."""
        if other.dim != self.dim:
            raise ContractViolation("cannot merge normalizers of different dims")
        if other.count == 0:
            return self.copy()
        if self.count == 0:
            return other.copy()
        total = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / total)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / total)
        return RunningNormalizer(self.dim, total, mean, m2)

    @classmethod
    def from_moments(cls, dim: int, count: int, total: np.ndarray, total_sq: np.ndarray):
        """Build from raw per-dimension sums (count, sum x, sum x^2)."""
        if count == 0:
            return cls(dim)
        total = np.asarray(total, dtype=float)
        mean = total / count
        m2 = np.maximum(np.asarray(total_sq, dtype=float) - total * mean, 0.0)
        return cls(dim, count, mean, m2)

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunningNormalizer":
        mean = np.asarray(d["mean"], dtype=float)
        return cls(mean.size, int(d["count"]), mean, np.asarray(d["m2"], dtype=float))


class PreparedPolicy:
    """Per-rollout fast path: parameters unflattened and whitening baked once.

    Calling it runs exactly the same float operations as ``forward``, so the
    two paths agree bitwise.
    """

    def __init__(self, spec: PolicySpec, params: ParamVector, norm: RunningNormalizer):
        self.layers = unflatten(spec, params)
        low = np.asarray(spec.action_low)
        high = np.asarray(spec.action_high)
        self.center = (low + high) / 2.0
        self.halfspan = (high - low) / 2.0
        if norm is not None and norm.count > 0:
            self.norm_mean = norm.mean
            self.norm_inv = 1.0 / np.sqrt(norm.variance + EPS_NORM)
        else:
            self.norm_mean = None
            self.norm_inv = None

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        if self.norm_mean is not None:
            x = (obs - self.norm_mean) * self.norm_inv
        else:
            x = np.asarray(obs, dtype=float)
        for w, b in self.layers[:-1]:
            x = np.tanh(w @ x + b)
        w, b = self.layers[-1]
        return self.center + self.halfspan * np.tanh(w @ x + b)


def forward(spec: PolicySpec, params: ParamVector, obs, norm: RunningNormalizer) -> np.ndarray:
    """Map one observation to a bounded action.

    The observation is whitened with the normalizer's frozen statistics
    (identity when count == 0), pushed through tanh hidden layers, and the
    tanh output is affinely rescaled into (action_low, action_high).
    """
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (spec.obs_dim,):
        raise ContractViolation(
            f"obs has shape {obs.shape}, expected ({spec.obs_dim},)")
    return PreparedPolicy(spec, params, norm)(obs)


def save_checkpoint(path, spec: PolicySpec, params: ParamVector,
                    norm: RunningNormalizer, extra: dict | None = None) -> None:
    """Write a versioned JSON checkpoint (floats stored at full precision)."""
    payload = {
        "version": 1,
        "policy": {
            "obs_dim": spec.obs_dim,
            "action_dim": spec.action_dim,
            "hidden_sizes": list(spec.hidden_sizes),
            "action_low": list(spec.action_low),
            "action_high": list(spec.action_high),
        },
        "params": [float(v) for v in np.asarray(params)],
        "normalizer": norm.to_dict(),
    }
    if extra:
        payload["extra"] = dict(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Inverse of save_checkpoint: (spec, params, normalizer, extra)."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ContractViolation(f"unsupported checkpoint version {payload.get('version')!r}")
    p = payload["policy"]
    spec = PolicySpec(
        obs_dim=int(p["obs_dim"]),
        action_dim=int(p["action_dim"]),
        hidden_sizes=tuple(p["hidden_sizes"]),
        action_low=tuple(p["action_low"]),
        action_high=tuple(p["action_high"]),
    )
    params = np.asarray(payload["params"], dtype=float)
    if params.size != parameter_count(spec):
        raise ContractViolation(
            f"checkpoint has {params.size} parameters, expected {parameter_count(spec)}")
    norm = RunningNormalizer.from_dict(payload["normalizer"])
    return spec, params, norm, payload.get("extra", {})
