import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hawkes_mitigation import (EventLog, FeasibleSet, MitigationEnv, NetworkModel, RewardKind,
                               StageState, conditional_intensity, expected_reward, features,
                               realized_reward, simulate_stage, step)
from hawkes_mitigation.mdp_env import (StageRecord, reward_from_counts, trajectory_from_jsonl,
                                       trajectory_to_jsonl)

from conftest import random_model


def make_env(model, C=1.0, alpha=0.5, mask=None, delta=1.0, L=2):
    n = model.n
    fs = FeasibleSet(np.ones(n), C, np.full(n, alpha), mask)
    return MitigationEnv(model, fs, delta, L)


# -- state and features -----------------------------------------------------------

def test_zero_state_features():
    x = StageState.zero(4, 2)
    psi = features(x)
    assert len(psi) == 2 * 4 * 2 + 1 and psi[-1] == 1 and not psi[:-1].any()


def test_feature_layout():
    z = np.zeros(6)
    z[0] = 1
    x = StageState(3, np.zeros(3), np.zeros(3), z, np.zeros(6))
    psi = features(x)
    assert psi[0] == 1 and psi[1:-1].sum() == 0 and x.L == 2


def test_state_validation():
    with pytest.raises(ValueError):
        StageState(0, np.zeros(2), np.zeros(2), [0.5, 0, 0, 0], np.zeros(4))
    with pytest.raises(ValueError):
        StageState(0, -np.ones(2), np.zeros(2), np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        StageState(0, np.zeros(2), np.zeros(3), np.zeros(4), np.zeros(4))


def test_reward_kind_parse():
    assert RewardKind.parse("Correlation") is RewardKind.CORRELATION
    assert RewardKind.parse("diff") is RewardKind.DIFFERENCE
    with pytest.raises(ValueError):
        RewardKind.parse("other")


# -- realized rewards ---------------------------------------------------------------

def test_realized_reward_trivial():
    B = np.eye(3)
    empty = EventLog.empty(0.0, 1.0)
    assert realized_reward("corr", empty, B) == 0 and realized_reward("diff", empty, B) == 0
    same = EventLog([0.1, 0.2, 0.5, 0.6], [0, 0, 2, 2], ["F", "M", "F", "M"], 0.0, 1.0)
    assert realized_reward("diff", same, B) == 0


def test_realized_reward_line_graph():
    # users 0 - 1 - 2 on a line; user 1 follows 0 and 2
    B = np.array([[1, 0, 0], [1, 1, 1], [0, 0, 1]], float)
    log = EventLog([0.1, 0.3], [0, 0], ["F", "M"], 0.0, 1.0)
    M = B @ np.array([1, 0, 0.0])
    F = B @ np.array([1, 0, 0.0])
    assert realized_reward("corr", log, B) == pytest.approx(M @ F / 3) == pytest.approx(2 / 3)
    log2 = EventLog([0.1, 0.3], [2, 0], ["F", "M"], 0.0, 1.0)
    # M exposures (1,1,0), F exposures (0,1,1)
    assert realized_reward("diff", log2, B) == pytest.approx(-2 / 3)
    assert realized_reward("corr", log2, B) == pytest.approx(1 / 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=4, max_size=4), st.lists(st.integers(0, 5), min_size=4, max_size=4),
       st.integers(0, 3))
def test_reward_properties(zm, zf, extra):
    B = np.maximum(np.eye(4), np.random.default_rng(sum(zm)).random((4, 4)) < 0.4)
    d = reward_from_counts("diff", zm, zf, B)
    assert d <= 0
    assert (d == 0) == np.array_equal(B @ np.array(zm, float), B @ np.array(zf, float))
    more = np.array(zm, float)
    more[extra] += 1
    assert np.all(B @ more >= B @ np.array(zm, float))


# -- expected rewards ---------------------------------------------------------------

def test_expected_correlation_zero_when_no_mitigation():
    model = random_model(4, 1, mu_M=np.zeros(4))
    env = make_env(model)
    assert expected_reward("corr", env.zero_state(), np.zeros(4), env) == 0.0


def test_expected_difference_poisson_scalar():
    mu_M, mu_F, u, delta = 0.3, 0.7, 0.25, 1.5
    model = NetworkModel(np.zeros((1, 1)), 1.0, [mu_F], [mu_M])
    env = make_env(model, C=1.0, alpha=0.5, delta=delta)
    m, f = (mu_M + u) * delta, mu_F * delta
    ref = -(m + m ** 2 + f + f ** 2 - 2 * m * f)
    assert expected_reward("diff", env.zero_state(), [u], env) == pytest.approx(ref, rel=1e-10)
    assert expected_reward("corr", env.zero_state(), [u], env) == pytest.approx(m * f, rel=1e-12)


def test_expected_reward_rejects_infeasible(model3):
    env = make_env(model3, C=0.1)
    with pytest.raises(ValueError):
        expected_reward("corr", env.zero_state(), [0.5, 0.5, 0.0], env)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_expected_reward_shape_in_u(seed):
    model = random_model(4, seed)
    env = make_env(model, C=10.0, alpha=1.0)
    rng = np.random.default_rng(seed)
    x = StageState(1, rng.uniform(0, 1, 4), rng.uniform(0, 1, 4), rng.integers(0, 4, 8), rng.integers(0, 4, 8))
    u0 = rng.uniform(0.2, 0.8, 4)
    h = 0.1
    for i in range(4):
        e = np.eye(4)[i] * h
        vals = [expected_reward("corr", x, u0 + k * e, env) for k in (-1, 0, 1)]
        assert abs(vals[0] - 2 * vals[1] + vals[2]) < 1e-9 * max(1, abs(vals[1]))
    d = rng.normal(size=4)
    d *= 0.15 / np.abs(d).max()
    vals = [expected_reward("diff", x, u0 + k * d, env) for k in (-1, 0, 1)]
    assert vals[0] - 2 * vals[1] + vals[2] <= 1e-9


@pytest.mark.parametrize("seed", [0, 1])
def test_expected_reward_monte_carlo(seed):
    model = random_model(5, 40 + seed, rho=0.5)
    env = make_env(model, C=1.0, alpha=0.4)
    rng = np.random.default_rng(seed)
    x = StageState(0, rng.uniform(0, 0.5, 5), rng.uniform(0, 0.5, 5), np.zeros(10), np.zeros(10))
    u = np.array([0.4, 0.0, 0.3, 0.2, 0.1])
    R = {"corr": [], "diff": []}
    for s in range(5000):
        _, rew, _ = env.step(x, u, s)
        for k in R:
            R[k].append(rew[k])
    for kind, vals in R.items():
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - expected_reward(kind, x, u, env)) < 3 * se, kind


# -- transitions --------------------------------------------------------------------

def test_step_no_activity():
    model = NetworkModel(0.3 * np.eye(2), 1.0, [0, 0], [0, 0])
    env = make_env(model, C=0.0)
    x = StageState(0, np.zeros(2), np.zeros(2), [1, 2, 3, 4], [0, 0, 0, 0])
    nxt, rew, logs = env.step(x, np.zeros(2), 0)
    assert np.all(nxt.y_M == 0) and np.array_equal(nxt.z_M, [0, 0, 1, 2])
    assert nxt.k == 1 and nxt.clock == 1.0 and rew == {"corr": 0.0, "diff": 0.0}


def test_step_bookkeeping(model3):
    env = make_env(model3)
    x = StageState(0, [0.2, 0, 0.1], [0, 0.3, 0], np.zeros(6), np.zeros(6), clock=2.0)
    u = np.array([0.3, 0.2, 0.0])
    nxt, rew, (log_M, log_F) = env.step(x, u, 11)
    assert np.array_equal(nxt.z_M[:3], log_M.counts(3)) and np.array_equal(nxt.z_F[:3], log_F.counts(3))
    assert np.array_equal(features(nxt)[:3], log_M.counts(3))
    lam = conditional_intensity(model3, log_M, "M", x.y_M, u, 3.0)
    assert np.allclose(lam - model3.mu_M - u, nxt.y_M, atol=1e-14)
    lamF = conditional_intensity(model3, log_F, "F", x.y_F, None, 3.0)
    assert np.allclose(lamF - model3.mu_F, nxt.y_F, atol=1e-14)
    assert rew["corr"] == pytest.approx(reward_from_counts("corr", nxt.z_M[:3], nxt.z_F[:3], model3.B))
    # module-level step and seed determinism
    again, _, _ = step(env, x, u, 11)
    assert np.array_equal(again.vector(), nxt.vector())


def test_step_rejects_infeasible(model3):
    env = make_env(model3, C=0.1)
    with pytest.raises(ValueError):
        env.step(env.zero_state(), [0.5, 0, 0], 0)


def test_two_stages_match_single_window(model3):
    env = make_env(model3)
    u = np.array([0.2, 0.1, 0.0])
    two, one = [], []
    rng = np.random.default_rng(5)
    for s in range(1500):
        x1, _, _ = env.step(env.zero_state(), u, (s, 0))
        x2, _, _ = env.step(x1, u, (s, 1))
        two.append(x2.z_M.sum())
        one.append(len(simulate_stage(model3, "M", None, u, (0.0, 2.0), rng)))
    assert stats.ks_2samp(two, one).pvalue > 0.01


def test_budget_schedule(model3):
    fs = FeasibleSet(np.ones(3), 1.0, np.ones(3))
    env = MitigationEnv(model3, fs, budgets=[0.5, 2.0])
    assert env.feasible(0).C == 0.5 and env.feasible(1).C == 2.0 and env.feasible(2).C == 0.5


def test_trajectory_jsonl_roundtrip():
    recs = [StageRecord(0, np.array([0.1, 0.0]), 0.5, -1.0, np.array([1.0, 0.0]), np.array([0.0, 2.0]))]
    text = trajectory_to_jsonl(recs)
    assert set(json.loads(text.splitlines()[0])) == {"k", "u", "R_corr", "R_diff", "z_M", "z_F"}
    back = trajectory_from_jsonl(text)
    assert back[0].k == 0 and np.array_equal(back[0].u, recs[0].u) and back[0].R_diff == -1.0
