import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nstepac.errors import ConfigError, ContractError
from nstepac.replay import NStepBatch
from nstepac.targets import TargetKind, TargetSpec, combine, discounted_prefix_returns, prefix_targets

from conftest import random_buffer


def const_value(v):
    return lambda obs: np.full(obs.shape[0], float(v))


def one_window(rewards, n, valid=True, k=None):
    k = len(rewards) if k is None else k
    r = np.zeros((1, n))
    r[0, : len(rewards)] = rewards
    nxt = np.arange(1, n + 1, dtype=float).reshape(1, n, 1)
    return NStepBatch(np.zeros((1, 1)), np.zeros((1, 1)), r, nxt, np.array([k]), np.array([valid]))


# --- specs -------------------------------------------------------------------------


@pytest.mark.parametrize("text,kind,n,label", [
    ("ddpg", TargetKind.ONE_STEP, 1, "DDPG"),
    ("onestep", TargetKind.ONE_STEP, 1, "DDPG"),
    ("TD3", TargetKind.TWIN_MIN, 1, "TD3"),
    ("nstep:5", TargetKind.NSTEP, 5, "MDDPG(5)"),
    ("MDDPG(3)", TargetKind.NSTEP, 3, "MDDPG(3)"),
    ("avg:8", TargetKind.MIX_AVG, 8, "MMDDPG(8-avg)"),
    ("MMDDPG(8-avg)", TargetKind.MIX_AVG, 8, "MMDDPG(8-avg)"),
    ("min:4", TargetKind.MIX_MIN, 4, "MMDDPG(4-min)"),
    ("avg-1:6", TargetKind.MIX_AVG_MINUS1, 6, "MMDDPG(6-avg-1)"),
])
def test_parse_and_label(text, kind, n, label):
    spec = TargetSpec.parse(text)
    assert (spec.kind, spec.n, spec.label) == (kind, n, label)
    assert TargetSpec.parse(str(spec)) == spec


@pytest.mark.parametrize("bad", ["", "nstep", "avg:0", "avg-1:1", "sarsa:3", "MMDDPG(8-max)"])
def test_parse_rejects(bad):
    with pytest.raises(ConfigError):
        TargetSpec.parse(bad)


def test_invalid_direct_construction():
    with pytest.raises(ConfigError):
        TargetSpec(TargetKind.ONE_STEP, 3)
    with pytest.raises(ConfigError):
        TargetSpec.nstep(0)


@pytest.mark.parametrize("spec,fp,bp", [
    (TargetSpec.one_step(), 1, 1),
    (TargetSpec.nstep(5), 1, 1),
    (TargetSpec.twin_min(), 2, 2),
    (TargetSpec.mix_avg(8), 8, 1),
    (TargetSpec.mix_min(3), 3, 1),
    (TargetSpec.mix_avg_minus1(8), 7, 1),
])
def test_declared_propagation_counts(spec, fp, bp):
    assert (spec.forward_passes, spec.backward_passes) == (fp, bp)


# --- prefix estimates ------------------------------------------------------------------


def test_discounted_prefix_returns():
    out = discounted_prefix_returns(np.array([[1.0, 2.0, 3.0]]), 0.5)
    assert out.tolist() == [[1.0, 2.0, 2.75]]


def test_prefix_targets_hand_example():
    b = one_window([1.0, 2.0, 3.0], 3)
    cols = prefix_targets(b, 0.5, (1, 2, 3), const_value(10.0))
    assert cols.tolist() == [[6.0, 4.5, 4.0]]


def test_prefix_targets_terminal_drops_only_last_bootstrap():
    b = one_window([1.0, 2.0, 3.0], 3, valid=False)
    cols = prefix_targets(b, 0.5, (1, 2, 3), const_value(10.0))
    assert cols.tolist() == [[6.0, 4.5, 2.75]]


def test_short_window_prefixes_collapse_to_longest():
    b = one_window([1.0, 2.0], 4, valid=True)
    cols = prefix_targets(b, 0.5, (1, 2, 3, 4), const_value(10.0))
    assert cols.tolist() == [[6.0, 4.5, 4.5, 4.5]]
    b = one_window([1.0, 2.0], 4, valid=False)
    cols = prefix_targets(b, 0.5, (1, 2, 3, 4), const_value(10.0))
    assert cols.tolist() == [[6.0, 2.0, 2.0, 2.0]]


def test_bootstrap_uses_state_after_prefix():
    b = one_window([0.0, 0.0, 0.0], 3)
    cols = prefix_targets(b, 1.0 - 1e-12, (1, 2, 3), lambda obs: obs[:, 0] * 100.0)
    np.testing.assert_allclose(cols[0], [100.0, 200.0, 300.0], rtol=1e-9)


def test_bootstrap_called_once_on_stacked_prefixes():
    calls = []

    def v(obs):
        calls.append(obs.shape[0])
        return np.zeros(obs.shape[0])

    prefix_targets(one_window([1.0] * 4, 4), 0.9, (1, 2, 3, 4), v)
    assert calls == [4]


@pytest.mark.parametrize("i", range(2, 9))
def test_constant_mdp_gap_closed_form(i):
    gamma, c, q = 0.9, -1.5, 4.0
    b = one_window([c] * 8, 8)
    cols = prefix_targets(b, gamma, (1, i), const_value(q))
    expected = (gamma - gamma**i) * q - c * sum(gamma**j for j in range(1, i))
    assert cols[0, 0] - cols[0, 1] == pytest.approx(expected, abs=1e-12)


def test_prefix_contract_errors():
    b = one_window([1.0], 2)
    with pytest.raises(ContractError):
        prefix_targets(b, 0.9, (3,), const_value(0))
    with pytest.raises(ContractError):
        prefix_targets(b, 0.9, (), const_value(0))
    bad = one_window([1.0], 2, k=0)
    with pytest.raises(ContractError):
        prefix_targets(bad, 0.9, (1,), const_value(0))


def test_combine_rules():
    cols = np.array([[1.0, 4.0, -2.0]])
    assert combine(TargetSpec.mix_avg(3), cols)[0] == 1.0
    assert combine(TargetSpec.mix_min(3), cols)[0] == -2.0
    assert combine(TargetSpec.nstep(3), cols[:, 2:])[0] == -2.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 8), gamma=st.floats(0.01, 0.999))
def test_mixture_identities_random_batches(seed, n, gamma):
    rng = np.random.default_rng(seed)
    batch = random_buffer(rng, steps=80).sample_batch(16, n, rng)
    w = rng.normal(size=2)
    v = lambda obs: np.tanh(obs @ w) * 5.0  # noqa: E731
    cols = prefix_targets(batch, gamma, tuple(range(1, n + 1)), v)
    one = prefix_targets(batch, gamma, (1,), v)[:, 0]
    assert np.array_equal(one, cols[:, 0])
    mn = combine(TargetSpec.mix_min(n), cols)
    assert np.all(mn[:, None] <= cols)
    avg = combine(TargetSpec.mix_avg(n), cols)
    am1 = combine(TargetSpec.mix_avg_minus1(n), cols[:, 1:])
    np.testing.assert_allclose(am1, (n * avg - cols[:, 0]) / (n - 1), rtol=0, atol=1e-9)
    for i in range(1, n + 1):
        single = prefix_targets(batch, gamma, (i,), v)[:, 0]
        np.testing.assert_allclose(single, cols[:, i - 1], rtol=0, atol=1e-12)


def test_zero_reward_gap_is_discounted_value_difference(rng):
    gamma = 0.8
    batch = random_buffer(rng, steps=120, p_term=0.0, p_trunc=0.0).sample_batch(32, 5, rng)
    batch.rewards[:] = 0.0
    w = rng.normal(size=2)
    v = lambda obs: obs @ w  # noqa: E731
    cols = prefix_targets(batch, gamma, (1, 2, 3, 4, 5), v)
    for i in range(2, 6):
        m = np.minimum(i, batch.effective_k)
        direct = gamma * v(batch.next_obs[:, 0]) - gamma**m * v(batch.next_obs[np.arange(32), m - 1])
        np.testing.assert_allclose(cols[:, 0] - cols[:, i - 1], direct, rtol=0, atol=1e-12)
