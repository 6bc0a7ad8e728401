import numpy as np
import pytest

from hawkes_mitigation import (CentralityCache, FeasibleSet, MitigationEnv, NetworkModel, Policy,
                               StageState, cec_policy, cls_policy, exp_policy, opl_policy,
                               policy_improvement, rnd_policy)
from hawkes_mitigation.baselines import fake_exposures, plan_open_loop, plan_value, water_fill

from conftest import random_model


def make_env(model, C=1.0, alpha=0.5, mask=None, delta=1.0, L=2):
    fs = FeasibleSet(np.ones(model.n), C, np.full(model.n, alpha), mask)
    return MitigationEnv(model, fs, delta, L)


def random_B(n, seed, p=0.3):
    rng = np.random.default_rng(seed)
    return np.maximum(np.eye(n), rng.random((n, n)) < p).astype(float)


# -- centrality ---------------------------------------------------------------------

def test_distances_follow_influence():
    # 1 follows 0, 2 follows 1: influence flows 0 -> 1 -> 2
    B = np.eye(3)
    B[1, 0] = B[2, 1] = 1
    cache = CentralityCache(B)
    assert cache.dis[0, 1] == 1 and cache.dis[0, 2] == 2
    assert cache.dis[2, 0] == 3  # unreachable sentinel n
    assert np.all(np.diag(cache.dis) == 0)
    assert cache.closeness[0] == pytest.approx(1 / 3) and cache.closeness[0] > cache.closeness[2]


def test_proportional_allocation():
    fs = FeasibleSet([1.0, 1.0], 3.0, [10.0, 10.0])
    assert np.allclose(water_fill([2.0, 1.0], fs), [2.0, 1.0], atol=1e-9)


def test_water_fill_saturates_caps():
    fs = FeasibleSet(np.ones(3), 2.0, [0.5, 5.0, 5.0])
    u = water_fill([10.0, 1.0, 1.0], fs)
    assert u[0] == pytest.approx(0.5) and u[1] == pytest.approx(u[2]) and u.sum() == pytest.approx(2.0)


def test_complete_graph_uniform():
    cache = CentralityCache(np.ones((6, 6)))
    u = cls_policy(cache, FeasibleSet(np.ones(6), 1.2, np.ones(6)))
    assert np.allclose(u, 0.2, atol=1e-9)


def test_zero_centrality():
    cache = CentralityCache(np.eye(3))  # no edges: every distance is the sentinel
    assert np.all(cache.closeness > 0)
    assert not cls_policy(cache, FeasibleSet(np.ones(3), 0.0, np.ones(3))).any()
    assert not water_fill(np.zeros(3), FeasibleSet(np.ones(3), 1.0, np.ones(3))).any()


@pytest.mark.parametrize("seed", range(10))
def test_budget_spent(seed):
    rng = np.random.default_rng(seed)
    n = 12
    cache = CentralityCache(random_B(n, seed))
    mask = rng.random(n) < 0.6
    mask[0] = True
    fs = FeasibleSet(rng.uniform(0.5, 2, n), rng.uniform(0, 4), rng.uniform(0, 0.5, n), mask)
    u = cls_policy(cache, fs)
    assert fs.is_feasible(u, tol=1e-9)
    assert fs.c @ u == pytest.approx(min(fs.C, fs.c @ fs.cap), abs=1e-9)


# -- exposure rule ------------------------------------------------------------------

def test_exp_falls_back_without_fake_activity():
    B = random_B(8, 1)
    cache = CentralityCache(B)
    fs = FeasibleSet(np.ones(8), 1.0, np.full(8, 0.5))
    x = StageState.zero(8)
    assert np.array_equal(exp_policy(cache, x, B, fs), cls_policy(cache, fs))


def test_exp_single_exposure_ordering():
    # path 0 -> 1 -> 2 -> 3; only node 3 is exposed
    B = np.eye(4)
    for i in range(3):
        B[i + 1, i] = 1
    cache = CentralityCache(B)
    x = StageState(1, np.zeros(4), np.zeros(4), np.zeros(8), [0, 0, 0, 2, 0, 0, 0, 0])
    assert np.allclose(fake_exposures(x, B), [0, 0, 0, 2])
    fs = FeasibleSet(np.ones(4), 1.0, np.full(4, 10.0), [True, True, True, False])
    u = exp_policy(cache, x, B, fs)
    # scores 2/3, 2/2, 2/1 for nodes 0, 1, 2
    assert np.allclose(u[:3] / u[:3].sum(), np.array([1 / 3, 1 / 2, 1]) / (11 / 6), atol=1e-9)
    assert u[3] == 0


@pytest.mark.parametrize("seed", range(5))
def test_exp_feasible(seed):
    rng = np.random.default_rng(seed)
    n = 10
    B = random_B(n, seed + 100)
    cache = CentralityCache(B)
    fs = FeasibleSet(np.ones(n), rng.uniform(0, 3), rng.uniform(0, 0.5, n), rng.random(n) < 0.7)
    x = StageState(2, np.zeros(n), np.zeros(n), rng.integers(0, 3, 2 * n), rng.integers(0, 3, 2 * n))
    assert fs.is_feasible(exp_policy(cache, x, B, fs), tol=1e-9)


# -- random rule --------------------------------------------------------------------

def test_rnd_policy():
    fs = FeasibleSet(np.ones(4), 10.0, [0.5, 0.2, 0.4, 0.3])
    assert np.array_equal(rnd_policy(fs, 3), rnd_policy(fs, 3))
    assert not rnd_policy(fs.with_budget(0.0), 1).any()
    gen = np.random.default_rng(0)
    draws = np.array([rnd_policy(fs, gen) for _ in range(10_000)])
    assert all(fs.is_feasible(u) for u in draws[:200])
    mean = draws.mean(axis=0)
    assert np.all(mean > 0.4 * fs.cap) and np.all(mean < 0.6 * fs.cap)
    tight = fs.with_budget(0.5)
    assert all(tight.is_feasible(rnd_policy(tight, gen)) for _ in range(200))


# -- certainty-equivalent planning --------------------------------------------------

@pytest.mark.parametrize("kind", ["corr", "diff"])
def test_opl_single_stage_is_myopic_improvement(model5, kind):
    env = make_env(model5)
    U = opl_policy(env, kind, 1, 0.7)
    pol = Policy(np.zeros(env.D), 0.7, kind, env)
    assert np.allclose(U[0], policy_improvement(pol, env.zero_state()), atol=1e-6)


@pytest.mark.parametrize("kind", ["corr", "diff"])
def test_cec_horizon_one_is_myopic(model5, kind):
    env = make_env(model5)
    rng = np.random.default_rng(3)
    x = StageState(1, rng.uniform(0, 1, 5), rng.uniform(0, 1, 5), rng.integers(0, 3, 10), rng.integers(0, 3, 10))
    pol = Policy(np.zeros(env.D), 0.7, kind, env)
    assert np.allclose(cec_policy(env, kind, x, 0.7, horizon=1), policy_improvement(pol, x), atol=1e-6)
    with pytest.raises(ValueError):
        cec_policy(env, kind, x, 0.7, horizon=0)


def test_gamma_zero_leaves_later_stages_empty(model3):
    env = make_env(model3)
    U = opl_policy(env, "corr", 4, 0.0)
    assert U[0].any() and not U[1:].any()


@pytest.mark.parametrize("kind", ["corr", "diff"])
def test_cec_equals_open_loop_without_excitation(kind):
    model = NetworkModel(np.zeros((4, 4)), 1.0, [0.3, 0.1, 0.5, 0.2], [0.1, 0.2, 0.0, 0.3],
                         np.maximum(np.eye(4), np.random.default_rng(0).random((4, 4)) < 0.5))
    env = make_env(model)
    U = opl_policy(env, kind, 5, 0.7)
    assert np.allclose(cec_policy(env, kind, env.zero_state(), 0.7), U[0], atol=1e-6)


def two_stage_grid(env, kind, state, gamma, step=0.05):
    cap = env.feasible(0).cap
    axis = np.arange(0.0, cap[0] + 1e-12, step)
    best, best_U = -np.inf, None
    for a in axis:
        for b in axis:
            u0 = np.array([a, b])
            if not env.feasible(0).is_feasible(u0):
                continue
            for c in axis:
                for d in axis:
                    U = np.array([u0, [c, d]])
                    if not env.feasible(1).is_feasible(U[1]):
                        continue
                    v = plan_value(env, kind, state, U, gamma)
                    if v > best:
                        best, best_U = v, U
    return best, best_U


@pytest.mark.parametrize("kind", ["corr", "diff"])
def test_two_stage_plan_matches_grid(kind):
    model = random_model(2, 21, rho=0.7, density=1.0, mu=(0.2, 0.6))
    env = make_env(model, C=0.6, alpha=0.4)
    plan = plan_open_loop(env, kind, env.zero_state(), 2, 0.7)
    best, _ = two_stage_grid(env, kind, env.zero_state(), 0.7)
    assert plan.converged and plan.value >= best - 1e-3
    assert plan.value == pytest.approx(plan_value(env, kind, env.zero_state(), plan.U, 0.7))
    x = StageState(3, [0.2, 0.1], [0.3, 0.0], [1, 0, 0, 2], [2, 1, 0, 0])
    u = cec_policy(env, kind, x, 0.7)
    best, best_U = two_stage_grid(env, kind, x, 0.7)
    # first-stage action of the best plan: compare the value of completing it optimally
    tail = lambda u0: max(plan_value(env, kind, x, np.array([u0, v]), 0.7)
                          for v in [np.array([c, d]) for c in np.arange(0, 0.41, 0.05)
                                    for d in np.arange(0, 0.41, 0.05) if c + d <= 0.6 + 1e-12])
    assert tail(u) >= best - 1e-3


@pytest.mark.parametrize("kind", ["corr", "diff"])
def test_planner_outputs_feasible(model5, kind):
    env = make_env(model5, C=0.7, alpha=0.3)
    U = opl_policy(env, kind, 10, 0.7)
    assert U.shape == (10, 5) and all(env.feasible(k).is_feasible(U[k]) for k in range(10))
