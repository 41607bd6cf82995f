"""Target rules: 1-step, n-step, their mixtures, and the twin-critic minimum.

A window of ``k <= n`` stored steps yields one bootstrapped estimate per
prefix length ``i``::

    Q_i = sum_{j < m} gamma^j r_j + gamma^m * V(s_m)      m = min(i, k)

where the bootstrap term is dropped when the window ended on a terminal at
step ``m``.  Prefixes longer than the window therefore collapse onto the
longest available one.  The mixture rules aggregate ``Q_1 .. Q_n`` computed
on one shared window.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .errors import ConfigError, ContractError
from .replay import NStepBatch


class TargetKind(enum.Enum):
    ONE_STEP = "onestep"
    NSTEP = "nstep"
    MIX_AVG = "avg"
    MIX_MIN = "min"
    MIX_AVG_MINUS1 = "avg-1"
    TWIN_MIN = "twinmin"


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.kind == TargetKind.MIX_AVG_MINUS1 and self.n < 2:
            raise ConfigError("the avg-1 mixture needs n >= 2")
        if self.kind in (TargetKind.ONE_STEP, TargetKind.TWIN_MIN) and self.n != 1:
            raise ConfigError(f"{self.kind.value} targets use a single step")

    @classmethod
    def one_step(cls) -> "TargetSpec":
        return cls(TargetKind.ONE_STEP)

    @classmethod
    def nstep(cls, n: int) -> "TargetSpec":
        return cls(TargetKind.NSTEP, n)

    @classmethod
    def mix_avg(cls, n: int) -> "TargetSpec":
        return cls(TargetKind.MIX_AVG, n)

    @classmethod
    def mix_min(cls, n: int) -> "TargetSpec":
        return cls(TargetKind.MIX_MIN, n)

    @classmethod
    def mix_avg_minus1(cls, n: int) -> "TargetSpec":
        return cls(TargetKind.MIX_AVG_MINUS1, n)

    @classmethod
    def twin_min(cls) -> "TargetSpec":
        return cls(TargetKind.TWIN_MIN)

    @property
    def is_mixture(self) -> bool:
        return self.kind in (TargetKind.MIX_AVG, TargetKind.MIX_MIN, TargetKind.MIX_AVG_MINUS1)

    @property
    def prefixes(self) -> Tuple[int, ...]:
        """Prefix lengths whose bootstrapped estimates the rule consumes."""
        if self.kind in (TargetKind.ONE_STEP, TargetKind.TWIN_MIN):
            return (1,)
        if self.kind == TargetKind.NSTEP:
            return (self.n,)
        if self.kind == TargetKind.MIX_AVG_MINUS1:
            return tuple(range(2, self.n + 1))
        return tuple(range(1, self.n + 1))

    @property
    def num_critics(self) -> int:
        return 2 if self.kind == TargetKind.TWIN_MIN else 1

    @property
    def forward_passes(self) -> int:
        """Batch-level target-critic forward passes per critic update."""
        if self.kind == TargetKind.TWIN_MIN:
            return 2
        return len(self.prefixes)

    @property
    def backward_passes(self) -> int:
        return self.num_critics

    @property
    def label(self) -> str:
        if self.kind == TargetKind.ONE_STEP:
            return "DDPG"
        if self.kind == TargetKind.TWIN_MIN:
            return "TD3"
        if self.kind == TargetKind.NSTEP:
            return f"MDDPG({self.n})"
        return f"MMDDPG({self.n}-{self.kind.value})"

    def __str__(self) -> str:
        if self.kind in (TargetKind.ONE_STEP, TargetKind.TWIN_MIN):
            return self.kind.value
        return f"{self.kind.value}:{self.n}"

    @classmethod
    def parse(cls, text: str) -> "TargetSpec":
        """Parse ``onestep``, ``ddpg``, ``td3``, ``twinmin``, ``nstep:5``,
        ``avg:8``, ``min:8``, ``avg-1:8``, ``MDDPG(5)`` or ``MMDDPG(8-avg)``."""
        s = text.strip().lower().replace(" ", "")
        if s in ("onestep", "ddpg"):
            return cls.one_step()
        if s in ("twinmin", "td3"):
            return cls.twin_min()
        m = re.fullmatch(r"mddpg\((\d+)\)", s)
        if m:
            return cls.nstep(int(m.group(1)))
        m = re.fullmatch(r"mmddpg\((\d+)-(avg-1|avg|min)\)", s)
        if m:
            return cls(TargetKind(m.group(2)), int(m.group(1)))
        m = re.fullmatch(r"(nstep|avg-1|avg|min):(\d+)", s)
        if m:
            return cls(TargetKind(m.group(1)), int(m.group(2)))
        raise ConfigError(f"unrecognised target spec {text!r}")


def discounted_prefix_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """``out[:, j] = sum_{i <= j} gamma^i r_i``, accumulated left to right."""
    out = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for j in range(rewards.shape[1]):
        acc = acc + gamma**j * rewards[:, j]
        out[:, j] = acc
    return out


BootstrapFn = Callable[[np.ndarray], np.ndarray]


def prefix_targets(
    batch: NStepBatch, gamma: float, prefixes: Tuple[int, ...], bootstrap: BootstrapFn
) -> np.ndarray:
    """Bootstrapped estimates, one column per prefix length.

    ``bootstrap`` maps a stack of observations ``(M, obs_dim)`` to state
    values ``(M,)``; it is called once on all prefixes stacked together.
    """
    if not prefixes:
        raise ContractError("no prefixes requested")
    ks = batch.effective_k
    if np.any(ks < 1) or np.any(ks > batch.n):
        raise ContractError("window lengths inconsistent with the batch width")
    if max(prefixes) > batch.n:
        raise ContractError(f"prefix {max(prefixes)} exceeds window width {batch.n}")
    b = len(batch)
    rows = np.arange(b)
    cum = discounted_prefix_returns(batch.rewards, gamma)
    powers = np.array([gamma**m for m in range(batch.n + 1)])
    ms = [np.minimum(i, ks) for i in prefixes]
    stacked = np.concatenate([batch.next_obs[rows, m - 1] for m in ms], axis=0)
    values = np.asarray(bootstrap(stacked), dtype=np.float64).reshape(len(prefixes), b)
    out = np.empty((b, len(prefixes)))
    for c, m in enumerate(ms):
        ret = cum[rows, m - 1]
        boot = (m < ks) | batch.bootstrap_valid
        out[:, c] = np.where(boot, ret + powers[m] * values[c], ret)
    return out


def combine(spec: TargetSpec, columns: np.ndarray) -> np.ndarray:
    """Reduce per-prefix estimates (columns ordered as ``spec.prefixes``)."""
    if spec.kind == TargetKind.MIX_MIN:
        return columns.min(axis=1)
    if spec.kind in (TargetKind.MIX_AVG, TargetKind.MIX_AVG_MINUS1):
        return columns.mean(axis=1)
    return columns[:, 0]
