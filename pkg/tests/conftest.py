import numpy as np
import pytest

from nstepac import Agent, AgentConfig, EnvSpec, ReplayBuffer, Transition


def random_buffer(rng, steps=200, capacity=None, obs_dim=2, act_dim=1, p_term=0.08, p_trunc=0.05):
    """Buffer of random transitions with random terminal/truncation cuts."""
    buf = ReplayBuffer(capacity or steps, obs_dim, act_dim)
    ep, k = 0, 0
    for _ in range(steps):
        term = bool(rng.random() < p_term)
        trunc = (not term) and bool(rng.random() < p_trunc)
        buf.push(Transition(rng.normal(size=obs_dim), rng.normal(size=act_dim), float(rng.normal()),
                            rng.normal(size=obs_dim), term, trunc, ep, k))
        k += 1
        if term or trunc:
            ep, k = ep + 1, 0
    return buf


def small_spec(obs_dim=2, act_dim=1, bound=1.0):
    return EnvSpec(obs_dim, act_dim, -bound * np.ones(act_dim), bound * np.ones(act_dim), 100, -10.0, 10.0)


def small_agent(spec=None, **kw):
    kw.setdefault("hidden_sizes", (8, 8))
    kw.setdefault("gamma", 0.9)
    return Agent(spec or small_spec(), AgentConfig(**kw))


def fd_gradients(params, loss_fn, h=1e-5):
    """Central finite differences of ``loss_fn(params)`` for every trainable entry."""
    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = loss_fn(params)
            flat[j] = old - h
            down = loss_fn(params)
            flat[j] = old
            gflat[j] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic, numeric):
    """||a - f|| / max(||a|| + ||f||, 1e-12) over all concatenated entries."""
    a = np.concatenate([x.reshape(-1) for x in analytic])
    f = np.concatenate([x.reshape(-1) for x in numeric])
    return float(np.linalg.norm(a - f) / max(np.linalg.norm(a) + np.linalg.norm(f), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    """Record one acceptance line; printed in the terminal summary and to stdout."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
