"""Fast built-in oracle checks, run by ``nstepac selftest``.

These are reduced-size versions of the invariants the test suite checks in
full: analytic vs finite-difference gradients, target-rule identities,
window truncation against a forward scan, and Bellman consistency on the
chain task.
"""

from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import numkit as nk
from .agents import Agent, AgentConfig
from .envs import Chain, EnvSpec
from .replay import ReplayBuffer, Transition, n_step_return
from .targets import TargetSpec


def _fd_gradient_check(rng: np.random.Generator, cases: int = 10) -> bool:
    for _ in range(cases):
        sizes = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(2, 5)))]
        p = nk.init_mlp(sizes, rng, final_init=1.0)
        x = rng.normal(size=sizes[0])
        g_out = rng.normal(size=sizes[-1])
        out, cache = nk.mlp_forward(p, x)
        grads = nk.mlp_backward(p, cache, g_out)
        for arr, g in zip(p.arrays(), grads.arrays()):
            flat = arr.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + 1e-5
                up = float(nk.mlp_forward(p, x)[0] @ g_out)
                flat[j] = old - 1e-5
                down = float(nk.mlp_forward(p, x)[0] @ g_out)
                flat[j] = old
                fd = (up - down) / 2e-5
                an = g.reshape(-1)[j]
                if abs(fd - an) > 1e-4 * max(1.0, abs(fd), abs(an)):
                    return False
    return True


def _random_buffer(rng: np.random.Generator, steps: int = 200) -> ReplayBuffer:
    buf = ReplayBuffer(int(rng.integers(20, steps)), 2, 1)
    ep, k = 0, 0
    for _ in range(steps):
        term = bool(rng.random() < 0.08)
        trunc = (not term) and bool(rng.random() < 0.05)
        buf.push(Transition(rng.normal(size=2), rng.normal(size=1), float(rng.normal()),
                            rng.normal(size=2), term, trunc, ep, k))
        k += 1
        if term or trunc:
            ep, k = ep + 1, 0
    return buf


def _window_oracle(rng: np.random.Generator, cases: int = 1000) -> bool:
    buf = _random_buffer(rng)
    for _ in range(cases):
        start = int(rng.integers(0, len(buf)))
        n = int(rng.integers(1, 9))
        ts = [buf.transition(start)]
        while len(ts) < n and not (ts[-1].terminal or ts[-1].truncated) and start + len(ts) < len(buf):
            nxt = buf.transition(start + len(ts))
            if nxt.episode_id != ts[0].episode_id:
                break
            ts.append(nxt)
        s = buf.window(start, n)
        if s.effective_k != len(ts) or s.bootstrap_valid != (not ts[-1].terminal):
            return False
        ret, _ = n_step_return(s, 0.9)
        if ret != sum(0.9**i * t.reward for i, t in enumerate(ts)):
            return False
    return True


def _target_identities(rng: np.random.Generator, cases: int = 100) -> bool:
    buf = _random_buffer(rng)
    env_spec = EnvSpec(2, 1, -np.ones(1), np.ones(1), 100, -5.0, 5.0)
    agent = Agent(env_spec, AgentConfig(hidden_sizes=(8,), gamma=0.9, seed=int(rng.integers(1 << 30))))
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        batch = buf.sample_batch(16, n, rng)
        one, _ = agent.compute_target(batch, TargetSpec.one_step())
        n1, _ = agent.compute_target(batch, TargetSpec.nstep(1))
        cols = np.stack([agent.compute_target(batch, TargetSpec.nstep(i))[0] for i in range(1, n + 1)], axis=1)
        mn, _ = agent.compute_target(batch, TargetSpec.mix_min(n))
        avg, _ = agent.compute_target(batch, TargetSpec.mix_avg(n))
        am1, _ = agent.compute_target(batch, TargetSpec.mix_avg_minus1(n))
        if np.max(np.abs(one - n1)) > 1e-12 or np.any(mn[:, None] > cols):
            return False
        if np.max(np.abs(am1 - (n * avg - cols[:, 0]) / (n - 1))) > 1e-9:
            return False
    return True


def _chain_bellman(length: int = 20, gamma: float = 0.9) -> bool:
    env = Chain(length)
    buf = ReplayBuffer(100, 1, 1)
    obs = env.reset()
    i = 0
    while True:
        res = env.step(np.zeros(1))
        buf.push(Transition(obs, np.zeros(1), res.reward, res.next_obs, res.terminal, res.truncated, 0, i))
        obs, i = res.next_obs, i + 1
        if res.terminal:
            break
    agent = Agent(env.spec, AgentConfig(hidden_sizes=(4,), gamma=gamma))

    def oracle(o, a):
        return np.array([env.optimal_value(env.index_of(row), gamma) for row in o])

    for n in range(1, 9):
        batch = buf.gather(np.arange(length), n)
        y, _ = agent.compute_target(batch, TargetSpec.nstep(n), critic=oracle)
        q = np.array([env.optimal_value(s, gamma) for s in range(length)])
        if np.max(np.abs(y - q)) > 1e-12:
            return False
    return True


CHECKS: List[Tuple[str, Callable[[np.random.Generator], bool]]] = [
    ("gradients match finite differences", _fd_gradient_check),
    ("n-step windows match forward scan", _window_oracle),
    ("target-rule identities", _target_identities),
    ("chain Bellman consistency", lambda rng: _chain_bellman()),
]


def run(seed: int = 0) -> bool:
    ok = True
    for name, check in CHECKS:
        passed = check(np.random.default_rng(seed))
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {name}")
    return ok
