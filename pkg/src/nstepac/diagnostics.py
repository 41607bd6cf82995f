"""Measurement instruments for target rules and overestimation.

None of the functions here update network weights.  The ones that touch an
environment restore its state before returning, so calling them twice with
the same RNG stream gives identical results.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapabilityError, ParseError, UnavailableError
from .replay import NStepBatch, NStepSample, Transition, collate
from .targets import TargetSpec

if TYPE_CHECKING:  # pragma: no cover
    from .agents import Agent
    from .envs import Env

CSV_SCHEMA_VERSION = 1


@dataclass
class DiagnosticsRecord:
    step: int
    episode_return: Optional[float] = None
    episode_length: Optional[int] = None
    avg_q: Optional[float] = None
    target_gaps: Dict[int, float] = field(default_factory=dict)
    mix_avg_target: Optional[float] = None
    mix_min_target: Optional[float] = None
    fp_count: int = 0
    bp_count: int = 0
    critic_updates: int = 0
    actor_updates: int = 0
    critic_loss: Optional[float] = None
    actor_grad_norm: Optional[float] = None
    bias: Optional[float] = None


@dataclass
class BiasEstimate:
    mean_predicted_q: float
    mean_mc_return: float
    bias: float
    num_rollouts: int
    horizon: int


@dataclass
class TargetGaps:
    """Batch means of ``Q_1 - Q_i`` plus the per-prefix and mixture means."""

    gaps: Dict[int, float]
    mean_targets: Dict[int, float]
    mix_avg: float
    mix_min: float


class PropagationLedger:
    """Per-update (forward, backward) counts with independently kept totals."""

    def __init__(self) -> None:
        self.per_update: List[Tuple[int, int]] = []
        self.total_fp = 0
        self.total_bp = 0

    def record(self, fp: int, bp: int) -> None:
        self.per_update.append((fp, bp))
        self.total_fp += fp
        self.total_bp += bp

    def __len__(self) -> int:
        return len(self.per_update)

    def consistent(self) -> bool:
        return (
            sum(f for f, _ in self.per_update) == self.total_fp
            and sum(b for _, b in self.per_update) == self.total_bp
        )


def propagation_counters(agent: "Agent") -> Tuple[int, int]:
    """(forward, backward) batch-level counts of the most recent critic update."""
    if not agent.ledger.per_update:
        raise UnavailableError("no critic update has been performed yet")
    return agent.ledger.per_update[-1]


def record_target_gaps(agent: "Agent", samples: Union[NStepBatch, Sequence[NStepSample]], max_n: int) -> TargetGaps:
    """Gaps between the 1-step target and each i-step target on one batch."""
    batch = samples if isinstance(samples, NStepBatch) else collate(samples, max_n)
    cols = agent.prefix_estimates(batch, max_n)
    gaps = {i: float(np.mean(cols[:, 0] - cols[:, i - 1])) for i in range(1, max_n + 1)}
    means = {i: float(np.mean(cols[:, i - 1])) for i in range(1, max_n + 1)}
    return TargetGaps(gaps, means, float(np.mean(cols.mean(axis=1))), float(np.mean(cols.min(axis=1))))


def average_q(agent: "Agent", obs: np.ndarray) -> float:
    """Mean of Q(s, mu(s)) over a probe batch of observations."""
    obs = np.atleast_2d(obs)
    return float(np.mean(agent.q_value(obs, agent.policy(obs))))


def _require_snapshots(env: "Env") -> None:
    if not (hasattr(env, "save_state") and hasattr(env, "restore_state")):
        raise CapabilityError(f"{type(env).__name__} cannot save and restore its state")


def estimate_bias(
    agent: "Agent",
    env: "Env",
    probe_states: int,
    horizon: int,
    rng: np.random.Generator,
    critic: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
) -> BiasEstimate:
    """Predicted Q minus Monte-Carlo return of the noise-free policy.

    Each probe state is reached by resetting ``env`` and following the
    policy for a uniformly drawn number of steps.  From there the policy is
    rolled out for ``horizon`` steps (or to a terminal); time-limit
    truncation is ignored because the critic bootstraps through it.
    """
    _require_snapshots(env)
    gamma = agent.config.gamma
    q_fn = critic or (lambda o, a: agent.q_value(o, a))
    outer = env.save_state()
    preds, rets = [], []
    try:
        for _ in range(probe_states):
            env.reset(seed=int(rng.integers(0, 2**31 - 1)))
            t0 = int(rng.integers(0, env.spec.max_episode_steps))
            obs = env.observation()
            for _ in range(t0):
                before = env.save_state()
                res = env.step(agent.select_action(obs, False))
                if res.terminal:
                    env.restore_state(before)
                    break
                obs = res.next_obs
            act = agent.select_action(obs, False)
            preds.append(float(np.asarray(q_fn(obs[None, :], act[None, :])).reshape(-1)[0]))
            ret, disc = 0.0, 1.0
            for _ in range(horizon):
                res = env.step(act)
                ret += disc * res.reward
                disc *= gamma
                if res.terminal:
                    break
                act = agent.select_action(res.next_obs, False)
            rets.append(ret)
    finally:
        env.restore_state(outer)
    mp, mr = float(np.mean(preds)), float(np.mean(rets))
    return BiasEstimate(mp, mr, mp - mr, probe_states, horizon)


def online_expansion(agent: "Agent", env: "Env", sample: NStepSample, n: int) -> NStepSample:
    """Re-expand a stored window by rolling the current policy in ``env``.

    The first transition is kept as stored; the remaining ``n - 1`` steps
    come from restoring the snapshot taken after it and acting with the
    noise-free online policy.
    """
    first = sample.transitions[0]
    if first.env_state is None:
        raise CapabilityError("stored transitions carry no environment snapshots")
    ts: List[Transition] = [first]
    env.restore_state(first.env_state)
    last = first
    while len(ts) < n and not (last.terminal or last.truncated):
        res = env.step(agent.select_action(last.next_obs, False))
        last = Transition(
            last.next_obs, np.zeros_like(first.action), res.reward, res.next_obs,
            res.terminal, res.truncated, first.episode_id, last.step_index + 1,
        )
        ts.append(last)
    return NStepSample(ts, len(ts), last.next_obs, not last.terminal, sample.start_index)


def online_offline_gap(
    agent: "Agent", env: "Env", samples: Sequence[NStepSample], n: int
) -> Tuple[float, float, float]:
    """Batch-mean n-step targets from stored vs freshly rolled expansions."""
    if not getattr(env, "deterministic", False):
        raise CapabilityError("online/offline gap needs a deterministic environment")
    _require_snapshots(env)
    spec = TargetSpec.nstep(n)
    outer = env.save_state()
    try:
        online = [online_expansion(agent, env, s, n) for s in samples]
    finally:
        env.restore_state(outer)
    offline_windows = [
        NStepSample(s.transitions[: min(n, s.effective_k)], min(n, s.effective_k),
                    s.transitions[min(n, s.effective_k) - 1].next_obs,
                    s.bootstrap_valid or s.effective_k > n, s.start_index)
        for s in samples
    ]
    off, _ = agent.compute_target(collate(offline_windows, n), spec)
    on, _ = agent.compute_target(collate(online, n), spec)
    off_mean, on_mean = float(np.mean(off)), float(np.mean(on))
    return off_mean, on_mean, on_mean - off_mean


# --- CSV logs -------------------------------------------------------------------


class CsvLog:
    """Rows accumulated in memory and written atomically (temp file + rename).

    The first line is a ``#`` comment naming the schema and its version.
    """

    def __init__(self, path: Union[str, Path], columns: Sequence[str], schema: str):
        self.path = Path(path)
        self.columns = list(columns)
        self.schema = schema
        self.rows: List[List[str]] = []

    def append(self, **values) -> None:
        self.rows.append([_fmt(values.get(c)) for c in self.columns])

    def extend(self, rows: Iterable[dict]) -> None:
        for r in rows:
            self.append(**r)

    def flush(self) -> None:
        buf = io.StringIO()
        buf.write(f"# schema={self.schema} version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        atomic_write_text(self.path, buf.getvalue())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Parse a log written by :class:`CsvLog` (comment header skipped)."""

    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{path}: no header row")
    reader = csv.DictReader(lines)
    rows = list(reader)
    for r in rows:
        if None in r or any(v is None for v in r.values()):
            raise ParseError(f"{path}: row with wrong number of fields")
    return rows
