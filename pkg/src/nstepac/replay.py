"""Episode-ordered ring buffer with contiguous n-step window sampling.

Transitions are stored in the order the environment produced them.  A
sampled window starts at a uniformly drawn stored transition and walks
forward until it has ``n`` steps or hits a terminal, a time-limit
truncation, the end of the episode or the newest stored transition.
Only a terminal invalidates the bootstrap; every other cut bootstraps from
the last ``next_obs`` in the window.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np

from .envs import EnvState
from .errors import ConfigError, ContractError, DimensionError, OrderingError, ParseError, UnavailableError

BUFFER_MAGIC = b"NSRB\x01"


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool
    truncated: bool
    episode_id: int
    step_index: int
    # environment snapshot taken right after this step (online expansion only)
    env_state: Optional[EnvState] = None


@dataclass
class NStepSample:
    transitions: List[Transition]
    effective_k: int
    bootstrap_obs: np.ndarray
    bootstrap_valid: bool
    start_index: int = -1

    @property
    def rewards(self) -> List[float]:
        return [t.reward for t in self.transitions]


@dataclass
class NStepBatch:
    """Array form of a list of windows, zero-padded to ``n`` steps.

    ``next_obs[b, j]`` is the observation after step ``j`` of window ``b``;
    entries with ``j >= effective_k[b]`` are padding.
    """

    obs: np.ndarray  # (B, obs_dim)
    action: np.ndarray  # (B, act_dim)
    rewards: np.ndarray  # (B, n)
    next_obs: np.ndarray  # (B, n, obs_dim)
    effective_k: np.ndarray  # (B,) int
    bootstrap_valid: np.ndarray  # (B,) bool
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.rewards.shape[1]

    def __len__(self) -> int:
        return self.obs.shape[0]


def n_step_return(sample: NStepSample, gamma: float) -> Tuple[float, float]:
    """Discounted reward sum over the window and the discount on the bootstrap."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    ret = 0.0
    for i, t in enumerate(sample.transitions[: sample.effective_k]):
        ret += gamma**i * t.reward
    discount = gamma**sample.effective_k if sample.bootstrap_valid else 0.0
    return ret, discount


def collate(samples: Sequence[NStepSample], n: Optional[int] = None) -> NStepBatch:
    """Stack windows into an :class:`NStepBatch` padded to ``n`` steps."""
    if not samples:
        raise UnavailableError("no samples to collate")
    width = max(s.effective_k for s in samples)
    n = width if n is None else n
    if n < width:
        raise ConfigError(f"window of {width} steps does not fit n={n}")
    first = samples[0].transitions[0]
    d, a = first.obs.shape[0], first.action.shape[0]
    b = len(samples)
    obs = np.zeros((b, d))
    act = np.zeros((b, a))
    rew = np.zeros((b, n))
    nxt = np.zeros((b, n, d))
    ks = np.zeros(b, dtype=np.int64)
    valid = np.zeros(b, dtype=bool)
    for i, s in enumerate(samples):
        if s.effective_k < 1 or len(s.transitions) < s.effective_k:
            raise ContractError("window shorter than its effective_k claims")
        obs[i] = s.transitions[0].obs
        act[i] = s.transitions[0].action
        for j, t in enumerate(s.transitions[: s.effective_k]):
            rew[i, j] = t.reward
            nxt[i, j] = t.next_obs
        ks[i] = s.effective_k
        valid[i] = s.bootstrap_valid
    idx = np.array([s.start_index for s in samples], dtype=np.int64)
    return NStepBatch(obs, act, rew, nxt, ks, valid, idx)


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions kept in environment order.

    Args:
        capacity: maximum number of stored transitions.
        obs_dim, act_dim: sizes of the stored vectors.
        store_env_states: keep an :class:`EnvState` per transition so that
            windows can be re-expanded online in the real environment.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, store_env_states: bool = False):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.store_env_states = store_env_states
        self._obs = np.zeros((capacity, obs_dim))
        self._act = np.zeros((capacity, act_dim))
        self._rew = np.zeros(capacity)
        self._next = np.zeros((capacity, obs_dim))
        self._term = np.zeros(capacity, dtype=bool)
        self._trunc = np.zeros(capacity, dtype=bool)
        self._ep = np.zeros(capacity, dtype=np.int64)
        self._step = np.zeros(capacity, dtype=np.int64)
        self._states: List[Optional[EnvState]] = [None] * capacity if store_env_states else []
        self._cursor = 0
        self._size = 0
        self._last: Optional[Tuple[int, int, bool]] = None  # episode_id, step_index, ended

    def __len__(self) -> int:
        return self._size

    @property
    def write_cursor(self) -> int:
        return self._cursor

    def _physical(self, logical):
        """Map storage-order positions (0 = oldest) to array slots."""
        oldest = self._cursor if self._size == self.capacity else 0
        return (oldest + logical) % self.capacity

    def push(self, t: Transition) -> None:
        if self._last is not None:
            ep, step, ended = self._last
            if t.episode_id < ep:
                raise OrderingError(f"episode {t.episode_id} pushed after episode {ep}")
            if t.episode_id == ep:
                if ended:
                    raise OrderingError(f"episode {ep} already ended")
                if t.step_index != step + 1:
                    raise OrderingError(
                        f"step_index {t.step_index} does not follow {step} in episode {ep}"
                    )
        obs = np.asarray(t.obs, dtype=np.float64).reshape(-1)
        act = np.asarray(t.action, dtype=np.float64).reshape(-1)
        nxt = np.asarray(t.next_obs, dtype=np.float64).reshape(-1)
        if obs.shape[0] != self.obs_dim or nxt.shape[0] != self.obs_dim or act.shape[0] != self.act_dim:
            raise DimensionError("transition does not match buffer dimensions")
        i = self._cursor
        self._obs[i] = obs
        self._act[i] = act
        self._rew[i] = t.reward
        self._next[i] = nxt
        self._term[i] = t.terminal
        self._trunc[i] = t.truncated
        self._ep[i] = t.episode_id
        self._step[i] = t.step_index
        if self.store_env_states:
            self._states[i] = t.env_state
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self._last = (t.episode_id, t.step_index, bool(t.terminal or t.truncated))

    def transition(self, logical: int) -> Transition:
        """The ``logical``-th stored transition, oldest first."""
        if not 0 <= logical < self._size:
            raise IndexError(logical)
        i = int(self._physical(logical))
        return Transition(
            self._obs[i].copy(),
            self._act[i].copy(),
            float(self._rew[i]),
            self._next[i].copy(),
            bool(self._term[i]),
            bool(self._trunc[i]),
            int(self._ep[i]),
            int(self._step[i]),
            self._states[i] if self.store_env_states else None,
        )

    def env_state(self, logical: int) -> Optional[EnvState]:
        if not self.store_env_states:
            return None
        return self._states[int(self._physical(logical))]

    # sampling ---------------------------------------------------------------

    def window_lengths(self, starts: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Effective horizon and bootstrap validity for each logical start."""
        if n < 1:
            raise ConfigError("n must be >= 1")
        starts = np.asarray(starts, dtype=np.int64)
        p0 = self._physical(starts)
        ep0 = self._ep[p0]
        st0 = self._step[p0]
        k = np.zeros(starts.shape[0], dtype=np.int64)
        alive = np.ones(starts.shape[0], dtype=bool)
        valid = np.ones(starts.shape[0], dtype=bool)
        for j in range(n):
            logical = starts + j
            inside = logical < self._size
            p = self._physical(np.minimum(logical, self._size - 1))
            ok = alive & inside & (self._ep[p] == ep0) & (self._step[p] == st0 + j)
            k += ok
            valid &= ~(ok & self._term[p])
            alive = ok & ~self._term[p] & ~self._trunc[p]
        return k, valid

    def gather(self, starts: np.ndarray, n: int) -> NStepBatch:
        """Build the padded window batch for the given logical starts."""
        if self._size == 0:
            raise UnavailableError("replay buffer is empty")
        starts = np.asarray(starts, dtype=np.int64)
        k, valid = self.window_lengths(starts, n)
        b = starts.shape[0]
        p0 = self._physical(starts)
        rew = np.zeros((b, n))
        nxt = np.zeros((b, n, self.obs_dim))
        for j in range(n):
            live = k > j
            if not live.any():
                break
            p = self._physical(np.minimum(starts + j, self._size - 1))
            rew[live, j] = self._rew[p[live]]
            nxt[live, j] = self._next[p[live]]
        return NStepBatch(self._obs[p0].copy(), self._act[p0].copy(), rew, nxt, k, valid, starts)

    def sample_batch(self, batch_size: int, n: int, rng: np.random.Generator) -> NStepBatch:
        if self._size == 0:
            raise UnavailableError("replay buffer is empty")
        starts = rng.integers(0, self._size, size=batch_size)
        return self.gather(starts, n)

    def window(self, start: int, n: int) -> NStepSample:
        """The n-step window beginning at logical position ``start``."""
        k, valid = self.window_lengths(np.array([start]), n)
        kk = int(k[0])
        ts = [self.transition(start + j) for j in range(kk)]
        return NStepSample(ts, kk, ts[-1].next_obs.copy(), bool(valid[0]), int(start))

    def sample_n(self, batch_size: int, n: int, rng: np.random.Generator) -> List[NStepSample]:
        if self._size == 0:
            raise UnavailableError("replay buffer is empty")
        if n < 1:
            raise ConfigError("n must be >= 1")
        starts = rng.integers(0, self._size, size=batch_size)
        return [self.window(int(s), n) for s in starts]

    # persistence ------------------------------------------------------------
    #
    # magic "NSRB\x01", then u32 obs_dim, u32 act_dim, u64 capacity, u64 size,
    # followed by the stored transitions oldest first as little-endian f64
    # columns: obs, action, reward, next_obs, terminal, truncated,
    # episode_id, step_index.  Environment snapshots are not persisted.

    def dump(self, path: Union[str, Path]) -> None:
        order = self._physical(np.arange(self._size))
        cols = [
            self._obs[order],
            self._act[order],
            self._rew[order],
            self._next[order],
            self._term[order].astype(np.float64),
            self._trunc[order].astype(np.float64),
            self._ep[order].astype(np.float64),
            self._step[order].astype(np.float64),
        ]
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(BUFFER_MAGIC)
            fh.write(struct.pack("<IIQQ", self.obs_dim, self.act_dim, self.capacity, self._size))
            for c in cols:
                fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            return cls._read(fh)

    @classmethod
    def _read(cls, fh: BinaryIO) -> "ReplayBuffer":
        if fh.read(len(BUFFER_MAGIC)) != BUFFER_MAGIC:
            raise ParseError("not a replay buffer dump")
        head = fh.read(struct.calcsize("<IIQQ"))
        if len(head) != struct.calcsize("<IIQQ"):
            raise ParseError("replay buffer dump truncated")
        d, a, cap, size = struct.unpack("<IIQQ", head)

        def take(shape):
            n = int(np.prod(shape))
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ParseError("replay buffer dump truncated")
            return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

        obs, act, rew = take((size, d)), take((size, a)), take((size,))
        nxt, term, trunc = take((size, d)), take((size,)), take((size,))
        ep, step = take((size,)), take((size,))
        buf = cls(int(cap), d, a)
        for i in range(size):
            buf.push(
                Transition(obs[i], act[i], float(rew[i]), nxt[i], bool(term[i]), bool(trunc[i]),
                           int(ep[i]), int(step[i]))
            )
        return buf
