"""Native deterministic control environments and analytic fitness oracles.

All environments integrate fixed-step explicit Euler dynamics and draw
nothing random after reset, so a rollout is fully determined by
(parameters, episode seed, horizon).  The only stochasticity is a small
initial-state jitter drawn from the episode seed, which makes fitness
noisy-but-seedable.  Episodes end at the horizon; corridor_dash can also
end early on a collision.

Shipped environments:

``linear_actuator``
    1-D integrator toward a goal.  State x, dynamics x' = x + a * dt,
    reward -(x - goal)^2 evaluated after the step.  Zero init noise by
    default so it doubles as an exact analytic test case.

``corridor_dash``
    2-D point mass dashing along a corridor with circular obstacles at
    increasing distances.  Acceleration control with drag and a speed
    limit; side walls clamp lateral motion, and hitting an obstacle ends
    the episode, which forfeits the remaining progress instead of adding
    a negative penalty.  Reward each step is the *new ground* gained,
    max(0, x - best_x_so_far), so the return equals the furthest point
    reached and is nonnegative and non-decreasing in the horizon.  The
    obstacle layout is a deterministic function of ``obstacle_seed``
    (an environment parameter, not the episode seed), so truncated-horizon
    variants of the task share the same course prefix.

``pendulum_swingup``
    Torque-limited pendulum, angle measured from upright.  The torque
    bound is far below gravity so the policy must pump energy.  Cost
    -(wrap(phi)^2 + 0.1 phidot^2 + 0.001 u^2) per step (nonpositive).

``cartpole_swingup``
    Continuous-force cart-pole swing-up; pole starts hanging down.
    Classic two-body dynamics, bounded track (hitting the end clamps the
    cart), reward cos(phi) - 0.001 u^2 per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation
from .policy import ParamVector, PolicySpec, PreparedPolicy, RunningNormalizer


@dataclass(frozen=True)
class EnvSpec:
    """Static environment description used to size policies and configs."""

    env_id: str
    obs_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    max_horizon: int


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one rollout: total return and timesteps actually used."""

    total_return: float
    timesteps_used: int


class LinearActuator:
    """1-D integrator: x' = x + a * dt, reward -(x - goal)^2 after the step."""

    def __init__(self, goal: float = 1.0, dt: float = 1.0, max_horizon: int = 50,
                 init_noise: float = 0.0):
        self.goal = float(goal)
        self.dt = float(dt)
        self.init_noise = float(init_noise)
        self.spec = EnvSpec("linear_actuator", obs_dim=1, action_dim=1,
                            action_low=(-1.0,), action_high=(1.0,),
                            max_horizon=int(max_horizon))
        self.x = 0.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = self.init_noise * rng.uniform(-1.0, 1.0)
        return np.array([self.x - self.goal])

    def step(self, action):
        a = min(max(float(action[0]), -1.0), 1.0)
        self.x += a * self.dt
        err = self.x - self.goal
        return np.array([err]), -(err * err), False


class CorridorDash:
    """2-D point mass in an obstacle corridor; return = furthest x reached.

    Hitting an obstacle ends the episode, so the collision penalty is the
    forfeited remaining progress and the per-step reward stays nonnegative.
    """

    def __init__(self, max_horizon: int = 600, dt: float = 0.1, accel: float = 3.0,
                 drag: float = 0.5, v_max: float = 2.0, obstacle_seed: int = 7,
                 obstacle_radius: float = 0.45, obstacle_spacing: float = 3.5,
                 first_obstacle: float = 4.0, n_obstacles: int = 40,
                 wall_y: float = 0.95, init_noise: float = 0.3,
                 lookahead: float = 8.0):
        self.dt = float(dt)
        self.accel = float(accel)
        self.drag = float(drag)
        self.v_max = float(v_max)
        self.radius = float(obstacle_radius)
        self.wall_y = float(wall_y)
        self.init_noise = float(init_noise)
        self.lookahead = float(lookahead)
        self.first = float(first_obstacle)
        self.spacing = float(obstacle_spacing)
        self.n_obstacles = int(n_obstacles)
        if self.radius >= self.spacing / 2.0:
            raise ConfigError("obstacle_radius must be below half the spacing")
        layout_rng = np.random.default_rng(obstacle_seed)
        self.obs_x = self.first + self.spacing * np.arange(n_obstacles, dtype=float)
        self.obs_y = layout_rng.uniform(-0.5, 0.5, size=n_obstacles)
        self._oy = self.obs_y.tolist()
        self.spec = EnvSpec("corridor_dash", obs_dim=5, action_dim=2,
                            action_low=(-1.0, -1.0), action_high=(1.0, 1.0),
                            max_horizon=int(max_horizon))
        self.x = self.y = self.vx = self.vy = 0.0
        self.best_x = 0.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = 0.0
        self.y = self.init_noise * rng.uniform(-1.0, 1.0)
        self.vx = 0.0
        self.vy = 0.0
        self.best_x = 0.0
        return self._observe()

    def _observe(self) -> np.ndarray:
        # Obstacles are uniformly spaced, so the next one ahead is closed-form.
        idx = math.ceil((self.x - self.first) / self.spacing)
        if idx < 0:
            idx = 0
        if idx < self.n_obstacles:
            gap = min(self.first + self.spacing * idx - self.x, self.lookahead)
            oy = self._oy[idx]
        else:
            gap = self.lookahead
            oy = 0.0
        return np.array([self.y, self.vx, self.vy, gap, oy])

    def step(self, action):
        ax = min(max(float(action[0]), -1.0), 1.0) * self.accel
        ay = min(max(float(action[1]), -1.0), 1.0) * self.accel
        vx = self.vx + self.dt * (ax - self.drag * self.vx)
        vy = self.vy + self.dt * (ay - self.drag * self.vy)
        vx = min(max(vx, -self.v_max), self.v_max)
        vy = min(max(vy, -self.v_max), self.v_max)
        nx = self.x + self.dt * vx
        ny = self.y + self.dt * vy
        if ny > self.wall_y:
            ny = self.wall_y
            vy = 0.0
        elif ny < -self.wall_y:
            ny = -self.wall_y
            vy = 0.0
        done = self._collides(nx, ny)
        if not done:
            self.x = nx
            self.y = ny
        self.vx = vx
        self.vy = vy
        gained = self.x - self.best_x
        if gained > 0.0:
            self.best_x = self.x
            reward = gained
        else:
            reward = 0.0
        return self._observe(), reward, done

    def _collides(self, x: float, y: float) -> bool:
        # radius < spacing / 2, so only the nearest obstacle can be hit.
        m = round((x - self.first) / self.spacing)
        if m < 0 or m >= self.n_obstacles:
            return False
        dx = x - (self.first + self.spacing * m)
        dy = y - self._oy[m]
        return dx * dx + dy * dy < self.radius * self.radius


class PendulumSwingup:
    """Torque-limited pendulum; angle phi measured from the upright position."""

    def __init__(self, max_horizon: int = 400, dt: float = 0.05, g: float = 9.8,
                 mass: float = 1.0, length: float = 1.0, damping: float = 0.05,
                 max_torque: float = 6.0, max_speed: float = 8.0,
                 init_noise: float = 0.1):
        self.dt = float(dt)
        self.g = float(g)
        self.mass = float(mass)
        self.length = float(length)
        self.damping = float(damping)
        self.max_torque = float(max_torque)
        self.max_speed = float(max_speed)
        self.init_noise = float(init_noise)
        self.spec = EnvSpec("pendulum_swingup", obs_dim=3, action_dim=1,
                            action_low=(-max_torque,), action_high=(max_torque,),
                            max_horizon=int(max_horizon))
        self.phi = 0.0
        self.phidot = 0.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.phi = math.pi + self.init_noise * rng.uniform(-1.0, 1.0)
        self.phidot = self.init_noise * rng.uniform(-1.0, 1.0)
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.array([math.cos(self.phi), math.sin(self.phi), self.phidot])

    def step(self, action):
        u = min(max(float(action[0]), -self.max_torque), self.max_torque)
        ml2 = self.mass * self.length * self.length
        acc = (self.g / self.length) * math.sin(self.phi) \
            - self.damping * self.phidot + u / ml2
        self.phidot = min(max(self.phidot + self.dt * acc, -self.max_speed), self.max_speed)
        self.phi += self.dt * self.phidot
        wrapped = math.remainder(self.phi, 2.0 * math.pi)
        cost = wrapped * wrapped + 0.1 * self.phidot * self.phidot + 0.001 * u * u
        return self._observe(), -cost, False


class CartPoleSwingup:
    """Cart-pole swing-up with continuous force; pole angle from upright."""

    def __init__(self, max_horizon: int = 500, dt: float = 0.02, g: float = 9.8,
                 mass_cart: float = 1.0, mass_pole: float = 0.1,
                 half_length: float = 0.5, force_mag: float = 10.0,
                 x_limit: float = 2.4, max_xdot: float = 10.0,
                 max_phidot: float = 25.0, init_noise: float = 0.05):
        self.dt = float(dt)
        self.g = float(g)
        self.mc = float(mass_cart)
        self.mp = float(mass_pole)
        self.hl = float(half_length)
        self.force_mag = float(force_mag)
        self.x_limit = float(x_limit)
        self.max_xdot = float(max_xdot)
        self.max_phidot = float(max_phidot)
        self.init_noise = float(init_noise)
        self.spec = EnvSpec("cartpole_swingup", obs_dim=5, action_dim=1,
                            action_low=(-force_mag,), action_high=(force_mag,),
                            max_horizon=int(max_horizon))
        self.x = self.xdot = 0.0
        self.phi = self.phidot = 0.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = self.init_noise * rng.uniform(-1.0, 1.0)
        self.xdot = 0.0
        self.phi = math.pi + self.init_noise * rng.uniform(-1.0, 1.0)
        self.phidot = self.init_noise * rng.uniform(-1.0, 1.0)
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.array([self.x, self.xdot, math.cos(self.phi),
                         math.sin(self.phi), self.phidot])

    def step(self, action):
        u = min(max(float(action[0]), -self.force_mag), self.force_mag)
        total = self.mc + self.mp
        sin_p = math.sin(self.phi)
        cos_p = math.cos(self.phi)
        temp = (u + self.mp * self.hl * self.phidot * self.phidot * sin_p) / total
        phiacc = (self.g * sin_p - cos_p * temp) / \
            (self.hl * (4.0 / 3.0 - self.mp * cos_p * cos_p / total))
        xacc = temp - self.mp * self.hl * phiacc * cos_p / total
        self.xdot = min(max(self.xdot + self.dt * xacc, -self.max_xdot), self.max_xdot)
        self.x += self.dt * self.xdot
        if self.x > self.x_limit:
            self.x = self.x_limit
            self.xdot = 0.0
        elif self.x < -self.x_limit:
            self.x = -self.x_limit
            self.xdot = 0.0
        self.phidot = min(max(self.phidot + self.dt * phiacc, -self.max_phidot),
                          self.max_phidot)
        self.phi += self.dt * self.phidot
        reward = math.cos(self.phi) - 0.001 * u * u
        return self._observe(), reward, False


_REGISTRY = {
    "linear_actuator": LinearActuator,
    "corridor_dash": CorridorDash,
    "pendulum_swingup": PendulumSwingup,
    "cartpole_swingup": CartPoleSwingup,
}


def register_env(env_id: str, factory) -> None:
    """Add a constructor to the registry (used by tests for fault injection)."""
    _REGISTRY[env_id] = factory


def make_env(env_id: str, **kwargs):
    if env_id not in _REGISTRY:
        raise ConfigError(
            f"unknown env_id {env_id!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[env_id](**kwargs)


def default_policy_spec(env, hidden_sizes=(64, 64)) -> PolicySpec:
    """Policy shape matching an environment's observation/action spaces."""
    s = env.spec
    return PolicySpec(obs_dim=s.obs_dim, action_dim=s.action_dim,
                      hidden_sizes=tuple(hidden_sizes),
                      action_low=s.action_low, action_high=s.action_high)


def rollout(env, policy_spec: PolicySpec, params: ParamVector,
            norm: RunningNormalizer, horizon: int, episode_seed: int):
    """Run one episode; returns (EpisodeResult, observation trace).

    The trace holds the observations the policy acted on (reset obs plus all
    but the last step obs) and feeds the normalizer update.  Deterministic
    given (params, episode_seed, horizon).
    """
    horizon = int(horizon)
    if horizon < 1 or horizon > env.spec.max_horizon:
        raise ContractViolation(
            f"horizon {horizon} outside [1, {env.spec.max_horizon}]")
    policy = PreparedPolicy(policy_spec, params, norm)
    rng = np.random.default_rng(int(episode_seed))
    obs = env.reset(rng)
    trace = np.empty((horizon, env.spec.obs_dim))
    total = 0.0
    t = 0
    while t < horizon:
        trace[t] = obs
        action = policy(obs)
        obs, reward, done = env.step(action)
        total += reward
        t += 1
        if done:
            break
    return EpisodeResult(total_return=float(total), timesteps_used=t), trace[:t]


# Default optima for the staged synthetic tasks: task i sits at (i-1) * e1.
def staged_sphere_target(task_index: int, dim: int) -> np.ndarray:
    target = np.zeros(dim)
    target[0] = float(task_index - 1)
    return target


def synthetic_fitness(name: str, theta: ParamVector) -> float:
    """Analytic fitness oracles (no episode semantics).

    ``sphere``            F(theta) = -||theta||^2           (optimum at 0)
    ``staged_sphere_<i>`` F(theta) = -||theta - (i-1)e1||^2 (per-task optima)
    """
    theta = np.asarray(theta, dtype=float)
    if name == "sphere":
        return float(-(theta @ theta))
    if name.startswith("staged_sphere_"):
        try:
            i = int(name.rsplit("_", 1)[1])
        except ValueError:
            raise ConfigError(f"unknown synthetic fitness {name!r}") from None
        d = theta - staged_sphere_target(i, theta.size)
        return float(-(d @ d))
    raise ConfigError(f"unknown synthetic fitness {name!r}")
