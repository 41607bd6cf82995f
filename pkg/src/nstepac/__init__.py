"""Multi-step DDPG variants and overestimation diagnostics on a numpy MLP kernel."""

from .agents import Agent, AgentConfig
from .envs import Chain, EnvSpec, EnvState, MountainCar, Pendulum, PointMass, StepResult, make_env
from .replay import NStepBatch, NStepSample, ReplayBuffer, Transition, n_step_return
from .targets import TargetKind, TargetSpec

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AgentConfig",
    "Chain",
    "EnvSpec",
    "EnvState",
    "MountainCar",
    "NStepBatch",
    "NStepSample",
    "Pendulum",
    "PointMass",
    "ReplayBuffer",
    "StepResult",
    "TargetKind",
    "TargetSpec",
    "Transition",
    "make_env",
    "n_step_return",
]
