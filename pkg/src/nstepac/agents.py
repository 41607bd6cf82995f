"""DDPG-family agents sharing one update skeleton.

The target rule (:class:`~nstepac.targets.TargetSpec`) is the only thing
that distinguishes DDPG, MDDPG(n), the MMDDPG mixtures and TD3 here: it
selects how the critic target is built, whether two critics are trained,
and whether actor updates are delayed.

Propagation counts are measured at the network calls themselves: every
target-critic forward and every critic backward adds its row count to
``Agent.row_counters``; per-update counts are those rows divided by the
mini-batch size.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import numkit as nk
from .diagnostics import DiagnosticsRecord, PropagationLedger
from .envs import Env, EnvSpec
from .errors import ConfigError, ContractError, ParseError
from .replay import NStepBatch, NStepSample, ReplayBuffer, Transition, collate
from .targets import TargetKind, TargetSpec, combine, prefix_targets

CHECKPOINT_MAGIC = b"NSACKPT"
CHECKPOINT_VERSION = 1

# (obs, act) -> q values, shape (B,)
CriticFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
# (obs, act) -> (q values (B,), dq/da (B, act_dim))
CriticGradFn = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    hidden_sizes: Tuple[int, ...] = (300, 300)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    # standard deviation as a fraction of the action range
    exploration_noise_sigma: float = 0.1
    warmup_steps: int = 1000
    update_every: int = 1
    target_spec: TargetSpec = field(default_factory=TargetSpec.one_step)
    td3_policy_noise: float = 0.2
    td3_noise_clip: float = 0.5
    td3_policy_delay: int = 2
    buffer_capacity: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.target_spec, str):
            self.target_spec = TargetSpec.parse(self.target_spec)
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.batch_size < 1 or self.update_every < 1 or self.td3_policy_delay < 1:
            raise ConfigError("batch_size, update_every and td3_policy_delay must be >= 1")
        if self.warmup_steps < 0 or self.exploration_noise_sigma < 0:
            raise ConfigError("warmup_steps and exploration_noise_sigma must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_spec"] = str(self.target_spec)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class _Rollout:
    obs: Optional[np.ndarray] = None
    episode_id: int = -1
    step_index: int = 0
    episode_return: float = 0.0
    episode_length: int = 0


class Agent:
    """Actor, critic(s), their target copies and Adam states."""

    def __init__(self, env_spec: EnvSpec, config: AgentConfig):
        self.env_spec = env_spec
        self.config = config
        self.spec = config.target_spec
        ss = np.random.SeedSequence(config.seed)
        init_seq, noise_seq = ss.spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(noise_seq)
        d, a = env_spec.obs_dim, env_spec.act_dim
        low, high = env_spec.action_low, env_spec.action_high
        self.actor = nk.init_mlp(
            (d, *config.hidden_sizes, a),
            init_rng,
            output_activation=nk.OutputActivation.TANH,
            output_scale=(high - low) / 2.0,
            output_offset=(high + low) / 2.0,
        )
        self.critics: List[nk.MlpParams] = [
            nk.init_mlp((d + a, *config.hidden_sizes, 1), init_rng) for _ in range(self.spec.num_critics)
        ]
        self.target_actor = self.actor.copy()
        self.target_critics = [c.copy() for c in self.critics]
        self.actor_opt = nk.adam_init(self.actor, config.actor_lr)
        self.critic_opts = [nk.adam_init(c, config.critic_lr) for c in self.critics]
        self.ledger = PropagationLedger()
        self.row_counters = {"target_fp_rows": 0, "critic_bp_rows": 0}
        self.total_steps = 0
        self.critic_updates = 0
        self.actor_updates = 0
        self._roll = _Rollout()

    # networks ---------------------------------------------------------------

    def policy(self, obs: np.ndarray) -> np.ndarray:
        out, _ = nk.mlp_forward(self.actor, obs)
        return out

    def q_value(self, obs: np.ndarray, act: np.ndarray, which: int = 0) -> np.ndarray:
        out, _ = nk.mlp_forward(self.critics[which], np.concatenate([obs, act], axis=-1))
        return out[..., 0]

    def _target_q(self, critic: nk.MlpParams, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        out, _ = nk.mlp_forward(critic, np.concatenate([obs, act], axis=1))
        self.row_counters["target_fp_rows"] += obs.shape[0]
        return out[:, 0]

    def _clip_action(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.env_spec.action_low, self.env_spec.action_high)

    def select_action(self, obs: np.ndarray, explore: bool, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        a = self.policy(np.asarray(obs, dtype=np.float64))
        sigma = self.config.exploration_noise_sigma
        if explore and sigma > 0.0:
            if rng is None:
                raise ContractError("exploration needs an rng")
            a = a + rng.normal(0.0, 1.0, size=a.shape) * (sigma * self.env_spec.action_range)
        return self._clip_action(a)

    # targets ----------------------------------------------------------------

    def _as_batch(self, samples: Union[NStepBatch, Sequence[NStepSample]], spec: TargetSpec) -> NStepBatch:
        if isinstance(samples, NStepBatch):
            return samples
        width = max(max(spec.prefixes), max(s.effective_k for s in samples))
        return collate(samples, width)

    def compute_target(
        self,
        samples: Union[NStepBatch, Sequence[NStepSample]],
        spec: Optional[TargetSpec] = None,
        critic: Optional[CriticFn] = None,
    ) -> Tuple[np.ndarray, int]:
        """Critic targets for a batch and the batch-level forward-pass count.

        ``critic`` replaces the target critic by an arbitrary function of
        ``(obs, act)``; the target actor still picks the bootstrap action.
        """
        spec = spec or self.spec
        batch = self._as_batch(samples, spec)
        b = len(batch)
        rows_before = self.row_counters["target_fp_rows"]

        if spec.kind == TargetKind.TWIN_MIN:
            if len(self.target_critics) < 2 and critic is None:
                raise ContractError("twin-min targets need two critics")

            def bootstrap(obs):
                a, _ = nk.mlp_forward(self.target_actor, obs)
                half = self.env_spec.action_range / 2.0
                noise = self.rng.normal(0.0, 1.0, size=a.shape) * (self.config.td3_policy_noise * half)
                clip = self.config.td3_noise_clip * half
                a = self._clip_action(a + np.clip(noise, -clip, clip))
                if critic is not None:
                    self.row_counters["target_fp_rows"] += 2 * obs.shape[0]
                    return np.asarray(critic(obs, a), dtype=np.float64).reshape(-1)
                q1 = self._target_q(self.target_critics[0], obs, a)
                q2 = self._target_q(self.target_critics[1], obs, a)
                return np.minimum(q1, q2)

        else:

            def bootstrap(obs):
                a, _ = nk.mlp_forward(self.target_actor, obs)
                if critic is not None:
                    self.row_counters["target_fp_rows"] += obs.shape[0]
                    return np.asarray(critic(obs, a), dtype=np.float64).reshape(-1)
                return self._target_q(self.target_critics[0], obs, a)

        cols = prefix_targets(batch, self.config.gamma, spec.prefixes, bootstrap)
        fp_rows = self.row_counters["target_fp_rows"] - rows_before
        return combine(spec, cols), fp_rows // b

    def prefix_estimates(self, batch: NStepBatch, max_n: int, critic: Optional[CriticFn] = None) -> np.ndarray:
        """Columns ``Q_1 .. Q_max_n`` from the current target networks (no counting)."""

        def bootstrap(obs):
            a, _ = nk.mlp_forward(self.target_actor, obs)
            if critic is not None:
                return np.asarray(critic(obs, a), dtype=np.float64).reshape(-1)
            out, _ = nk.mlp_forward(self.target_critics[0], np.concatenate([obs, a], axis=1))
            return out[:, 0]

        return prefix_targets(batch, self.config.gamma, tuple(range(1, max_n + 1)), bootstrap)

    # updates ----------------------------------------------------------------

    def update_critic(
        self,
        samples: Union[NStepBatch, Sequence[NStepSample]],
        spec: Optional[TargetSpec] = None,
        targets: Optional[np.ndarray] = None,
    ) -> Tuple[float, int, int]:
        """One Adam step per critic on the mean squared TD error.

        Returns the loss (averaged over critics) and the batch-level forward
        and backward propagation counts.
        """
        spec = spec or self.spec
        batch = self._as_batch(samples, spec)
        b = len(batch)
        fp = 0
        if targets is None:
            targets, fp = self.compute_target(batch, spec)
        targets = np.asarray(targets, dtype=np.float64).reshape(b)
        x = np.concatenate([batch.obs, batch.action], axis=1)
        losses = []
        bp_rows = 0
        for i, (critic, opt) in enumerate(zip(self.critics, self.critic_opts)):
            q, cache = nk.mlp_forward(critic, x)
            err = q[:, 0] - targets
            losses.append(float(np.mean(err * err)))
            grads = nk.mlp_backward(critic, cache, (2.0 / b) * err[:, None])
            bp_rows += b
            self.critics[i], self.critic_opts[i] = nk.adam_step(critic, grads, opt)
        self.row_counters["critic_bp_rows"] += bp_rows
        self.critic_updates += 1
        bp = bp_rows // b
        self.ledger.record(fp, bp)
        return float(np.mean(losses)), fp, bp

    def _critic_action_grad(self, obs: np.ndarray, act: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        critic = self.critics[0]
        q, cache = nk.mlp_forward(critic, np.concatenate([obs, act], axis=1))
        g = nk.mlp_backward(critic, cache, np.ones_like(q))
        return q[:, 0], g.input_grad[:, self.env_spec.obs_dim :]

    def actor_gradients(self, obs_batch: np.ndarray, critic: Optional[CriticGradFn] = None) -> nk.Gradients:
        """Gradients of ``-mean_b Q(s_b, mu(s_b))`` with respect to actor weights."""
        obs_batch = np.atleast_2d(np.asarray(obs_batch, dtype=np.float64))
        a, cache = nk.mlp_forward(self.actor, obs_batch)
        critic = critic or self._critic_action_grad
        _, dq_da = critic(obs_batch, a)
        dq_da = np.asarray(dq_da, dtype=np.float64).reshape(a.shape)
        return nk.mlp_backward(self.actor, cache, -dq_da / obs_batch.shape[0])

    def update_actor(self, obs_batch: np.ndarray, critic: Optional[CriticGradFn] = None) -> float:
        """Deterministic policy-gradient ascent step; returns the gradient norm."""
        grads = self.actor_gradients(obs_batch, critic)
        self.actor, self.actor_opt = nk.adam_step(self.actor, grads, self.actor_opt)
        self.actor_updates += 1
        return grads.norm()

    def soft_update_targets(self) -> None:
        tau = self.config.tau
        self.target_actor = nk.soft_update(self.target_actor, self.actor, tau)
        self.target_critics = [nk.soft_update(t, c, tau) for t, c in zip(self.target_critics, self.critics)]

    @property
    def window_n(self) -> int:
        return max(self.spec.prefixes)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> Tuple[float, Optional[float], int, int]:
        """Sample a mini-batch and run one full update tick."""
        batch = buffer.sample_batch(self.config.batch_size, self.window_n, rng)
        loss, fp, bp = self.update_critic(batch)
        grad_norm = None
        if self.spec.kind != TargetKind.TWIN_MIN or self.critic_updates % self.config.td3_policy_delay == 0:
            grad_norm = self.update_actor(batch.obs)
            self.soft_update_targets()
        return loss, grad_norm, fp, bp

    # environment interaction --------------------------------------------------

    def _begin_episode(self, env: Env) -> None:
        self._roll.obs = env.reset()
        self._roll.episode_id += 1
        self._roll.step_index = 0
        self._roll.episode_return = 0.0
        self._roll.episode_length = 0

    def train_step(self, buffer: ReplayBuffer, env: Env, rng: np.random.Generator) -> DiagnosticsRecord:
        """Take one environment step, store it, and update on update ticks."""
        if self._roll.obs is None:
            self._begin_episode(env)
        obs = self._roll.obs
        if self.total_steps < self.config.warmup_steps:
            action = rng.uniform(self.env_spec.action_low, self.env_spec.action_high)
        else:
            action = self.select_action(obs, True, rng)
        res = env.step(action)
        state = env.save_state() if buffer.store_env_states else None
        buffer.push(
            Transition(
                obs, action, res.reward, res.next_obs, res.terminal, res.truncated,
                self._roll.episode_id, self._roll.step_index, state,
            )
        )
        self.total_steps += 1
        self._roll.episode_return += res.reward
        self._roll.episode_length += 1
        self._roll.step_index += 1
        self._roll.obs = res.next_obs
        record = DiagnosticsRecord(step=self.total_steps)
        if res.terminal or res.truncated:
            record.episode_return = self._roll.episode_return
            record.episode_length = self._roll.episode_length
            self._roll.obs = None

        cfg = self.config
        if self.total_steps > cfg.warmup_steps and self.total_steps % cfg.update_every == 0:
            losses, norms = [], []
            for _ in range(cfg.update_every):
                loss, norm, fp, bp = self.update(buffer, rng)
                losses.append(loss)
                if norm is not None:
                    norms.append(norm)
                record.fp_count += fp
                record.bp_count += bp
                record.critic_updates += 1
            record.critic_loss = float(np.mean(losses))
            if norms:
                record.actor_grad_norm = float(np.mean(norms))
                record.actor_updates = len(norms)
        return record

    # checkpoints --------------------------------------------------------------
    #
    # magic "NSACKPT", u32 version, u32 JSON length, UTF-8 JSON header with the
    # agent config and env spec, then numkit snapshots in the order: actor,
    # critics..., target actor, target critics...

    def networks(self) -> List[nk.MlpParams]:
        return [self.actor, *self.critics, self.target_actor, *self.target_critics]

    def save(self, path: Union[str, Path]) -> None:
        s = self.env_spec
        header = {
            "config": self.config.to_dict(),
            "env_spec": {
                "obs_dim": s.obs_dim,
                "act_dim": s.act_dim,
                "action_low": s.action_low.tolist(),
                "action_high": s.action_high.tolist(),
                "max_episode_steps": s.max_episode_steps,
                "reward_min": s.reward_min,
                "reward_max": s.reward_max,
            },
            "total_steps": self.total_steps,
        }
        raw = json.dumps(header, sort_keys=True).encode()
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(raw)) + raw)
            for net in self.networks():
                fh.write(nk.params_to_bytes(net))
        tmp.replace(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Agent":
        with open(path, "rb") as fh:
            if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
                raise ParseError(f"{path} is not an agent checkpoint")
            try:
                version, length = struct.unpack("<II", fh.read(8))
                if version != CHECKPOINT_VERSION:
                    raise ParseError(f"unsupported checkpoint version {version}")
                header = json.loads(fh.read(length).decode())
            except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path} has a corrupt header: {exc}") from exc
            es = header["env_spec"]
            spec = EnvSpec(
                es["obs_dim"], es["act_dim"], np.array(es["action_low"]), np.array(es["action_high"]),
                es["max_episode_steps"], es["reward_min"], es["reward_max"],
            )
            agent = cls(spec, AgentConfig.from_dict(header["config"]))
            nets = [nk.params_from_stream(fh) for _ in agent.networks()]
        k = len(agent.critics)
        agent.actor = nets[0]
        agent.critics = nets[1 : 1 + k]
        agent.target_actor = nets[1 + k]
        agent.target_critics = nets[2 + k :]
        agent.actor_opt = nk.adam_init(agent.actor, agent.config.actor_lr)
        agent.critic_opts = [nk.adam_init(c, agent.config.critic_lr) for c in agent.critics]
        agent.total_steps = header["total_steps"]
        return agent
