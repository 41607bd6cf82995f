"""Small continuous-control tasks with exact state snapshots.

Every built-in environment is deterministic given its state and the action,
so ``restore_state(save_state())`` replays trajectories bit for bit.  The
only randomness is the initial-state draw in :meth:`Env.reset`, whose RNG
state is also part of the snapshot.

Termination and truncation are separate flags: ``terminal`` marks an MDP
end (goal reached, failure) after which nothing is bootstrapped, while
``truncated`` marks a time-limit cutoff.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int
    reward_min: float
    reward_max: float

    @property
    def action_range(self) -> np.ndarray:
        return self.action_high - self.action_low


@dataclass(frozen=True)
class EnvState:
    env_type: str
    physics: tuple
    step_count: int
    rng_state: Dict[str, Any]


@dataclass(frozen=True)
class StepResult:
    next_obs: np.ndarray
    reward: float
    terminal: bool
    truncated: bool


class Env:
    """Base class.  Subclasses implement ``_reset``, ``_step`` and ``_obs``.

    Physics state lives in ``self._physics`` as a tuple of Python floats so
    snapshots are cheap and immutable.
    """

    env_id = "env"
    deterministic = True

    def __init__(self, spec: EnvSpec, seed: Optional[int] = None):
        if np.any(spec.action_low >= spec.action_high):
            raise ConfigError("action_low must be strictly below action_high")
        if spec.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be >= 1")
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self._physics: tuple = ()
        self._t = 0
        self.clip_count = 0

    # public API -------------------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._t = 0
        self._physics = self._reset(self._rng)
        return self._obs()

    def step(self, action) -> StepResult:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.spec.act_dim,):
            raise DimensionError(f"action has shape {a.shape}, expected ({self.spec.act_dim},)")
        if np.any(np.isnan(a)):
            raise ValueError("action contains NaN")
        clipped = np.clip(a, self.spec.action_low, self.spec.action_high)
        if np.any(clipped != a):
            self.clip_count += 1
        self._physics, reward, terminal = self._step(self._physics, clipped)
        self._t += 1
        truncated = (not terminal) and self._t >= self.spec.max_episode_steps
        return StepResult(self._obs(), float(reward), bool(terminal), bool(truncated))

    def save_state(self) -> EnvState:
        return EnvState(
            type(self).__name__, self._physics, self._t, copy.deepcopy(self._rng.bit_generator.state)
        )

    def restore_state(self, state: EnvState) -> None:
        if not isinstance(state, EnvState) or state.env_type != type(self).__name__:
            got = getattr(state, "env_type", type(state).__name__)
            raise TypeError(f"cannot restore a {got} state into {type(self).__name__}")
        self._physics = state.physics
        self._t = state.step_count
        self._rng.bit_generator.state = copy.deepcopy(state.rng_state)

    @property
    def step_count(self) -> int:
        return self._t

    def observation(self) -> np.ndarray:
        return self._obs()

    # subclass hooks ---------------------------------------------------------

    def _reset(self, rng: np.random.Generator) -> tuple:
        raise NotImplementedError

    def _step(self, physics: tuple, action: np.ndarray):
        raise NotImplementedError

    def _obs(self) -> np.ndarray:
        raise NotImplementedError


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


class Pendulum(Env):
    """Torque-limited swing-up.  Angle 0 is upright, +-pi hangs down."""

    env_id = "pendulum"
    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    length = 1.0

    def __init__(self, seed: Optional[int] = None, max_episode_steps: int = 200):
        r_min = -(math.pi**2 + 0.1 * self.max_speed**2 + 0.001 * self.max_torque**2)
        spec = EnvSpec(
            obs_dim=3,
            act_dim=1,
            action_low=np.array([-self.max_torque]),
            action_high=np.array([self.max_torque]),
            max_episode_steps=max_episode_steps,
            reward_min=r_min,
            reward_max=0.0,
        )
        super().__init__(spec, seed)

    def _reset(self, rng):
        theta = float(rng.uniform(-math.pi, math.pi))
        theta_dot = float(rng.uniform(-1.0, 1.0))
        return (theta, theta_dot)

    def _step(self, physics, action):
        theta, theta_dot = physics
        u = float(action[0])
        th = angle_normalize(theta)
        cost = th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u
        # semi-implicit Euler: velocity first, position from the new velocity
        acc = 3.0 * self.g / (2.0 * self.length) * math.sin(theta) + 3.0 / (self.m * self.length**2) * u
        theta_dot = min(max(theta_dot + acc * self.dt, -self.max_speed), self.max_speed)
        theta = theta + theta_dot * self.dt
        return (theta, theta_dot), -cost, False

    def _obs(self):
        theta, theta_dot = self._physics
        return np.array([math.cos(theta), math.sin(theta), theta_dot])


class PointMass(Env):
    """2-D double integrator chasing a random goal inside a walled box.

    Observation is ``(x, y, vx, vy, gx - x, gy - y)``; reward is minus the
    distance to the goal.  Hitting a wall stops motion along that axis.
    """

    env_id = "pointmass"
    dt = 0.05
    bound = 2.0

    def __init__(self, seed: Optional[int] = None, max_episode_steps: int = 200):
        spec = EnvSpec(
            obs_dim=6,
            act_dim=2,
            action_low=-np.ones(2),
            action_high=np.ones(2),
            max_episode_steps=max_episode_steps,
            reward_min=-2.0 * self.bound * math.sqrt(2.0),
            reward_max=0.0,
        )
        super().__init__(spec, seed)

    def _reset(self, rng):
        pos = rng.uniform(-1.0, 1.0, size=2)
        goal = rng.uniform(-1.0, 1.0, size=2)
        return (float(pos[0]), float(pos[1]), 0.0, 0.0, float(goal[0]), float(goal[1]))

    def _step(self, physics, action):
        x, y, vx, vy, gx, gy = physics
        vx = vx + float(action[0]) * self.dt
        vy = vy + float(action[1]) * self.dt
        x = x + vx * self.dt
        y = y + vy * self.dt
        if abs(x) > self.bound:
            x, vx = math.copysign(self.bound, x), 0.0
        if abs(y) > self.bound:
            y, vy = math.copysign(self.bound, y), 0.0
        reward = -math.hypot(gx - x, gy - y)
        return (x, y, vx, vy, gx, gy), reward, False

    def _obs(self):
        x, y, vx, vy, gx, gy = self._physics
        return np.array([x, y, vx, vy, gx - x, gy - y])


class MountainCar(Env):
    """Continuous mountain car: +100 on reaching the flag, -0.1*u^2 per step."""

    env_id = "mountaincar"
    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    power = 0.0015

    def __init__(self, seed: Optional[int] = None, max_episode_steps: int = 999):
        spec = EnvSpec(
            obs_dim=2,
            act_dim=1,
            action_low=-np.ones(1),
            action_high=np.ones(1),
            max_episode_steps=max_episode_steps,
            reward_min=-0.1,
            reward_max=100.0,
        )
        super().__init__(spec, seed)

    def _reset(self, rng):
        return (float(rng.uniform(-0.6, -0.4)), 0.0)

    def _step(self, physics, action):
        position, velocity = physics
        force = float(action[0])
        velocity += force * self.power - 0.0025 * math.cos(3.0 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0.0:
            velocity = 0.0
        done = position >= self.goal_position
        reward = -0.1 * force * force + (100.0 if done else 0.0)
        return (position, velocity), reward, done

    def _obs(self):
        return np.array(self._physics)


class Chain(Env):
    """Deterministic 1-D chain: every step moves right and pays ``reward``.

    The episode terminates on reaching index ``length``, so from index ``i``
    the discounted return of any policy is ``sum_{k < length - i} gamma^k *
    reward``.  The observation is ``i / length``.
    """

    env_id = "chain"

    def __init__(self, length: int = 20, reward: float = 1.0, seed: Optional[int] = None):
        if length < 1:
            raise ConfigError("chain length must be >= 1")
        self.length = int(length)
        self.reward = float(reward)
        spec = EnvSpec(
            obs_dim=1,
            act_dim=1,
            action_low=-np.ones(1),
            action_high=np.ones(1),
            max_episode_steps=self.length,
            reward_min=min(0.0, self.reward),
            reward_max=max(0.0, self.reward),
        )
        super().__init__(spec, seed)

    def _reset(self, rng):
        return (0,)

    def _step(self, physics, action):
        i = physics[0] + 1
        return (i,), self.reward, i >= self.length

    def _obs(self):
        return np.array([self._physics[0] / self.length])

    def index_of(self, obs) -> int:
        return int(round(float(np.asarray(obs).reshape(-1)[0]) * self.length))

    def optimal_value(self, index: int, gamma: float) -> float:
        """Exact discounted return from ``index`` (any policy)."""
        return sum(gamma**k * self.reward for k in range(self.length - index))


_CHAIN_RE = re.compile(r"^chain(?::(.*))?$")


def make_env(env_id: str, seed: Optional[int] = None) -> Env:
    """Build an environment from its string id.

    Recognised ids: ``pendulum``, ``pointmass``, ``mountaincar`` and
    ``chain`` with optional ``L=<length>`` and ``r=<reward>`` parameters,
    e.g. ``chain:L=20`` or ``chain:L=10,r=0``.
    """
    key = env_id.strip().lower()
    if key == "pendulum":
        return Pendulum(seed)
    if key == "pointmass":
        return PointMass(seed)
    if key == "mountaincar":
        return MountainCar(seed)
    m = _CHAIN_RE.match(key)
    if m:
        kwargs: Dict[str, Any] = {}
        if m.group(1):
            for part in m.group(1).split(","):
                name, _, value = part.partition("=")
                name = name.strip().lower()
                try:
                    if name == "l":
                        kwargs["length"] = int(value)
                    elif name == "r":
                        kwargs["reward"] = float(value)
                    else:
                        raise ConfigError(f"unknown chain parameter {name!r}")
                except ValueError as exc:
                    raise ConfigError(f"bad chain parameter {part!r}") from exc
        return Chain(seed=seed, **kwargs)
    raise ConfigError(f"unknown env id {env_id!r}")
