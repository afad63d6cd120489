import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proplab.advice import constant_advice, exact_advice, ltv_exact_advice, shifted_advice
from proplab.baseline import MpcBaseline, TabularBaseline
from proplab.envs import build_tracking_benchmark, random_deterministic_mdp, random_finite_mdp, random_ltv_system
from proplab.oracle import backward_induction, offline_optimal_ltv
from proplab.prop import (
    PropConfig,
    PropRunState,
    approx_td_error,
    blackbox_budget,
    greybox_budget,
    project_to_ball,
    run_episode,
    run_finite_batch,
    trust_coefficient,
)

vectors = st.lists(st.floats(-50, 50), min_size=3, max_size=3).map(np.array)


# --- projection and budgets -------------------------------------------------------------


def test_inside_ball_is_unchanged():
    u = np.array([1.0, 2.0])
    np.testing.assert_array_equal(project_to_ball(u, np.array([1.5, 2.0]), 1.0), u)


def test_zero_budget_returns_baseline():
    ub = np.array([0.3, -0.2])
    np.testing.assert_array_equal(project_to_ball(np.array([5.0, 5.0]), ub, 0.0), ub)


def test_line_projection():
    assert project_to_ball(np.array([3.0]), np.array([0.0]), 1.0)[0] == 1.0


def test_simplex_projection_stays_distribution():
    u = project_to_ball(np.array([1.0, 0.0, 0.0]), np.full(3, 1 / 3), 0.5, norm="l1")
    assert u.min() >= 0.0 and u.sum() == pytest.approx(1.0)
    assert np.abs(u - 1 / 3).sum() == pytest.approx(0.5)


def test_negative_budget_rejected():
    with pytest.raises(ValueError):
        project_to_ball(np.zeros(1), np.zeros(1), -1.0)


@settings(max_examples=200, deadline=None)
@given(ut=vectors, ub=vectors, budget=st.floats(0.0, 100.0))
def test_projection_within_budget_and_on_segment(ut, ub, budget):
    u = project_to_ball(ut, ub, budget)
    assert np.linalg.norm(u - ub) <= budget + 1e-12 * (1 + np.linalg.norm(ut - ub))
    d = ut - ub
    if np.linalg.norm(d) > 0.0:
        # collinearity: u - ub is a nonnegative multiple of d not exceeding it
        s = float((u - ub) @ d / (d @ d))
        assert -1e-12 <= s <= 1 + 1e-12
        assert np.linalg.norm(u - ub - s * d) <= 1e-12 * (1 + np.linalg.norm(d))


def test_blackbox_examples():
    ut, ub = np.array([2.0, 0.0]), np.zeros(2)
    assert blackbox_budget(ut, ub, 0.0) == 0.0
    assert blackbox_budget(ut, ub, 1.0) == 2.0
    assert blackbox_budget(ut, ub, 0.5) == 1.0
    with pytest.raises(ValueError):
        blackbox_budget(ut, ub, 1.5)


def test_greybox_examples():
    assert greybox_budget(1.0, -3.0, 1.0, 1.0) == 1.0
    assert greybox_budget(1.0, 1.0, 0.5, 1.0) == 0.5
    assert greybox_budget(1.0, 4.0, 0.5, 1.0) == 0.0
    assert greybox_budget(1.0, -3.0, 1.0, 1.0, cap=0.25) == 0.25
    with pytest.raises(ValueError):
        greybox_budget(1.0, 0.0, 1.0, 0.0)


def test_trust_coefficient():
    assert trust_coefficient(1.0, 0.0) == 1.0
    assert trust_coefficient(1.0, 4.0) == 0.25
    assert trust_coefficient(5.0, 4.0) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        PropConfig(mode="other")
    with pytest.raises(ValueError):
        PropConfig(lam=-0.1)
    with pytest.raises(ValueError):
        PropConfig(beta=-1.0)
    with pytest.raises(ValueError):
        PropConfig(budget_cap=0.0)


# --- TD errors -------------------------------------------------------------------------


def test_exact_advice_td_zero_on_deterministic_mdp():
    mdp = random_deterministic_mdp((4, 3, 8), rng=2)
    adv = exact_advice(backward_induction(mdp))
    base = TabularBaseline.uniform(mdp)
    log = run_episode(mdp, base, adv, PropConfig(mode="black", lam=0.3), rng=0)
    assert math.isnan(log.td[0])
    assert np.all(log.td[1:] == 0.0)


def test_td_telescopes_single_step_shift():
    mdp = random_deterministic_mdp((3, 2, 6), rng=5)
    tables = backward_induction(mdp)
    c = 0.4
    adv = shifted_advice(tables, c, step=2)
    log = run_episode(mdp, TabularBaseline.uniform(mdp), adv, PropConfig(mode="advice-only"), rng=0)
    # raising step 2 by c makes delta_2 = c (inf term) and delta_3 = -c (value term)
    assert log.td[2] == pytest.approx(c, abs=1e-12)
    assert log.td[3] == pytest.approx(-c, abs=1e-12)
    assert np.all(np.abs(np.delete(log.td[1:], [1, 2])) <= 1e-12)


def test_td_requires_previous_step():
    adv = exact_advice(backward_induction(random_deterministic_mdp((2, 2, 3), rng=0)))
    with pytest.raises(ValueError):
        approx_td_error(adv, 0, 0, (0, 0, 1.0))


def test_run_state_sum_matches_emitted():
    mdp = random_finite_mdp((3, 2, 6), 0.1, rng=1)
    adv = exact_advice(backward_induction(mdp))
    log = run_episode(mdp, TabularBaseline.uniform(mdp), adv, PropConfig(), rng=3)
    run = PropRunState()
    emitted = []
    for t in range(log.horizon):
        emitted.append(run.update_td(adv, t, int(log.states[t])))
        run.prev = (int(log.states[t]), int(log.sampled_actions[t]), log.cost[t])
    assert math.isnan(emitted[0])
    np.testing.assert_array_equal(emitted[1:], log.td[1:])
    assert run.td_sum == sum(emitted[1:])


def test_stochastic_td_mean_near_zero():
    mdp = random_finite_mdp((3, 2, 5), 0.1, rng=4)
    adv = exact_advice(backward_induction(mdp))
    base = TabularBaseline.uniform(mdp)
    rng = np.random.default_rng(0)
    td = np.array([run_episode(mdp, base, adv, PropConfig(mode="advice-only"), rng=rng).td[1:] for _ in range(2000)])
    mean, sem = td.mean(axis=0), td.std(axis=0, ddof=1) / math.sqrt(len(td))
    assert np.all(np.abs(mean) <= 4 * sem + 1e-12)


# --- episodes ------------------------------------------------------------------------


def test_log_shapes_and_totals():
    sys = random_ltv_system(15, 3, 2, rng=0)
    log = run_episode(sys, MpcBaseline(sys, 4), ltv_exact_advice(sys), PropConfig(mode="black", lam=0.5))
    assert log.horizon == 15 and log.states.shape == (15, 3) and log.actions.shape == (15, 2)
    assert abs(log.total_cost - sum(log.cost)) <= 1e-9


def test_baseline_only_matches_baseline_rollout():
    sys = random_ltv_system(20, 3, 2, rng=1)
    mpc = MpcBaseline(sys, 3)
    log = run_episode(sys, mpc, constant_advice(sys, [1.0, 1.0]), PropConfig(mode="baseline-only"))
    x = sys.x0
    for t in range(sys.horizon):
        u = mpc(t, x)
        assert np.array_equal(log.actions[t], u)
        x = sys.A[t] @ x + sys.B[t] @ u + sys.w[t]
    assert np.all(log.trust == 0.0)


def test_grey_exact_advice_on_deterministic_mdp_is_optimal():
    for seed in range(5):
        mdp = random_deterministic_mdp((4, 3, 7), rng=seed)
        tables = backward_induction(mdp)
        log = run_episode(mdp, TabularBaseline.uniform(mdp), exact_advice(tables), PropConfig(mode="grey"), rng=seed)
        np.testing.assert_array_equal(log.actions, log.advice_actions)
        np.testing.assert_array_equal(log.budget, log.eta)
        assert log.total_cost == pytest.approx(tables.v[0, mdp.initial_state], abs=1e-12)


def test_grey_exact_advice_on_deterministic_ltv_is_optimal():
    sys = random_ltv_system(25, 3, 2, rng=3)
    log = run_episode(sys, MpcBaseline(sys, 3), ltv_exact_advice(sys), PropConfig(mode="grey", beta=5.0))
    assert np.all(np.abs(log.td[1:]) <= 1e-8 * (1 + np.abs(log.cost[:-1])))
    assert log.total_cost == pytest.approx(offline_optimal_ltv(sys).cost, rel=1e-8)


def test_black_full_trust_follows_advice():
    sys = random_ltv_system(10, 2, 2, rng=2)
    log = run_episode(sys, MpcBaseline(sys, 3), constant_advice(sys, [0.5, -0.5]), PropConfig(mode="black", lam=1.0))
    np.testing.assert_array_equal(log.actions, log.advice_actions)


def test_advice_only_equals_grey_with_zero_beta():
    mdp = random_finite_mdp((4, 3, 6), 0.05, rng=9)
    tables = backward_induction(mdp)
    adv = shifted_advice(tables, 0.3, step=1)
    base = TabularBaseline.uniform(mdp)
    a = run_episode(mdp, base, adv, PropConfig(mode="advice-only"), rng=11)
    b = run_episode(mdp, base, adv, PropConfig(mode="grey", beta=0.0), rng=11)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.sampled_actions, b.sampled_actions)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), lams=st.lists(st.floats(0, 1), min_size=2, max_size=5))
def test_blackbox_budget_monotone_in_lambda_on_replayed_trajectory(seed, lams):
    sys = random_ltv_system(10, 2, 2, rng=seed % 20)
    ref = run_episode(sys, MpcBaseline(sys, 3), constant_advice(sys, [1.0, -1.0]), PropConfig(mode="black", lam=0.5))
    lams = sorted(lams)
    budgets = [[blackbox_budget(ref.advice_actions[t], ref.baseline_actions[t], lam) for t in range(10)] for lam in lams]
    for lo, hi in zip(budgets, budgets[1:]):
        assert all(a <= b for a, b in zip(lo, hi))


def test_same_seed_reproduces_episode():
    mdp = random_finite_mdp((4, 2, 6), 0.05, rng=0)
    adv = exact_advice(backward_induction(mdp))
    base = TabularBaseline.uniform(mdp)
    a = run_episode(mdp, base, adv, PropConfig(), rng=42)
    b = run_episode(mdp, base, adv, PropConfig(), rng=42)
    assert a.to_csv() == b.to_csv()
    assert a.seed == 42


def test_log_exports():
    sys = build_tracking_benchmark(8)
    log = run_episode(sys, MpcBaseline(sys, 3), constant_advice(sys, [1.0, 1.0]), PropConfig())
    header = log.to_csv().splitlines()[0].split(",")
    assert header[:6] == ["t", "cost", "eta", "budget", "td", "trust"]
    assert "x_3" in header and "u_1" in header
    doc = json.loads(log.to_json())
    assert doc["td"][0] is None
    assert doc["total_cost"] == log.total_cost


def test_batch_runner_agrees_with_single_episode_mean():
    mdp = random_finite_mdp((3, 2, 5), 0.1, rng=2)
    tables = backward_induction(mdp)
    adv = shifted_advice(tables, 0.2, step=1)
    base = TabularBaseline.uniform(mdp)
    cfg = PropConfig(mode="black", lam=0.4)
    costs, trust = run_finite_batch(mdp, base, adv, cfg, 20_000, rng=0)
    rng = np.random.default_rng(1)
    single = np.array([run_episode(mdp, base, adv, cfg, rng=rng).total_cost for _ in range(4000)])
    se = math.sqrt(costs.var() / len(costs) + single.var() / len(single))
    assert abs(costs.mean() - single.mean()) <= 4 * se
    assert trust.shape == (20_000, 5)
