import itertools
import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings, strategies as st

from proplab.envs import (
    FiniteMdp,
    LtvSystem,
    build_tracking_benchmark,
    random_deterministic_mdp,
    random_finite_mdp,
    random_ltv_system,
    step_ltv,
)
from proplab.errors import BoxActive
from proplab.numerics import solve_dare
from proplab.oracle import (
    QStarTables,
    backward_induction,
    offline_optimal_ltv,
    opt_lower_bound,
    policy_value,
    riccati_feedback,
)


def scalar_lqr(T, w, P_term, a=1.0, b=1.0, q=1.0, r=1.0, box=100.0):
    return LtvSystem(
        A=np.full((T, 1, 1), a), B=np.full((T, 1, 1), b), w=np.asarray(w, dtype=float).reshape(T, 1),
        Q=np.full((T, 1, 1), q), R=np.full((T, 1, 1), r), terminal=np.eye(1) * P_term,
        action_low=[-box], action_high=[box], x0=[0.0],
    )


def brute_force_value(mdp):
    """Best expected cost over every deterministic Markov policy."""
    T, S, A = mdp.costs.shape
    best = math.inf
    for flat in itertools.product(range(A), repeat=T * S):
        best = min(best, policy_value(mdp, np.array(flat).reshape(T, S)))
    return best


# --- backward induction -------------------------------------------------------


def test_single_step_q_is_cost():
    mdp = random_finite_mdp((3, 2, 1), 0.1, rng=0)
    tables = backward_induction(mdp)
    np.testing.assert_array_equal(tables.q[0], mdp.costs[0])
    assert np.all(tables.v[1] == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_two_state_value_matches_policy_enumeration(seed):
    mdp = random_finite_mdp((2, 2, 2), 0.05, rng=seed)
    tables = backward_induction(mdp)
    assert tables.v[0, mdp.initial_state] == pytest.approx(brute_force_value(mdp), abs=1e-12)


def test_constant_costs_give_linear_values():
    T, c = 6, 0.7
    mdp = random_finite_mdp((3, 2, T), 0.0, rng=1)
    mdp = FiniteMdp(mdp.transitions, np.full(mdp.costs.shape, c))
    tables = backward_induction(mdp)
    np.testing.assert_allclose(tables.v[0], T * c, rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(S=st.integers(1, 5), A=st.integers(1, 4), T=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_q_dominates_stage_cost_and_v_is_min(S, A, T, seed):
    mdp = random_finite_mdp((S, A, T), 0.0, rng=seed)
    tables = backward_induction(mdp)
    assert np.all(tables.q >= mdp.costs)
    np.testing.assert_array_equal(tables.v[:T], tables.q.min(axis=2))


@settings(max_examples=40, deadline=None)
@given(S=st.integers(1, 5), A=st.integers(1, 4), T=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_greedy_rollout_on_deterministic_mdp_achieves_value(S, A, T, seed):
    mdp = random_deterministic_mdp((S, A, T), rng=seed)
    tables = backward_induction(mdp)
    s, total = mdp.initial_state, 0.0
    for t in range(T):
        a = tables.greedy_action(t, s)
        total += mdp.costs[t, s, a]
        s = int(np.argmax(mdp.transitions[t, s, a]))
    assert total == pytest.approx(tables.v[0, mdp.initial_state], abs=1e-12)


def test_greedy_ties_go_to_lowest_index():
    P = np.full((1, 1, 3, 1), 1.0)
    mdp = FiniteMdp(P, np.array([[[0.5, 0.2, 0.2]]]))
    assert backward_induction(mdp).greedy_action(0, 0) == 1


def test_tables_json_round_trip():
    tables = backward_induction(random_finite_mdp((3, 2, 4), 0.1, rng=2))
    back = QStarTables.from_dict(__import__("json").loads(tables.to_json()))
    np.testing.assert_array_equal(back.q, tables.q)
    np.testing.assert_array_equal(back.v, tables.v)


# --- LTV offline optimum ------------------------------------------------------


def test_zero_disturbance_optimum_is_zero():
    sys = build_tracking_benchmark(20).with_disturbances(np.zeros((20, 4)))
    opt = offline_optimal_ltv(sys)
    assert opt.cost == 0.0
    assert np.all(opt.states == 0.0) and np.all(opt.actions == 0.0)


def test_scalar_two_step_matches_affine_riccati_oracle():
    P = (1 + math.sqrt(5)) / 2
    sys = scalar_lqr(2, [1.0, 0.0], P)
    # hand-derived: x0 = 0 so u0 only steers x1 = u0 + 1; the last stage has
    # terminal weight q and no further action, so minimize 0.5 u0^2 + 0.5 q (u0 + 1)^2
    u0 = -1.0 / 2.0
    J_oracle = 0.5 * u0**2 + 0.5 * (u0 + 1.0) ** 2
    opt = offline_optimal_ltv(sys)
    assert opt.cost == pytest.approx(J_oracle, abs=1e-12)
    assert opt.actions[0, 0] == pytest.approx(u0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_random_instance_matches_first_order_refinement(seed):
    sys = random_ltv_system(6, 2, 2, rng=seed)
    T, m = sys.horizon, sys.action_dim

    def cost(flat):
        u = flat.reshape(T - 1, m)
        x, total = sys.x0, 0.0
        for t in range(T - 1):
            total += sys.stage_cost(t, x, u[t])
            x = sys.A[t] @ x + sys.B[t] @ u[t] + sys.w[t]
        return total + 0.5 * x @ sys.Q[T - 1] @ x

    res = scipy.optimize.minimize(cost, np.zeros((T - 1) * m), method="BFGS", options={"gtol": 1e-11})
    opt = offline_optimal_ltv(sys)
    assert opt.cost == pytest.approx(res.fun, abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_offline_trajectory_is_feasible_and_locally_optimal(seed):
    sys = random_ltv_system(8, 2, 2, rng=seed)
    opt = offline_optimal_ltv(sys)
    assert opt.kkt_residual <= 1e-9
    for t in range(sys.horizon - 1):
        np.testing.assert_allclose(step_ltv(sys, t, opt.states[t], opt.actions[t]), opt.states[t + 1], atol=1e-10)
    total = sum(sys.stage_cost(t, opt.states[t], opt.actions[t]) for t in range(sys.horizon))
    assert total == pytest.approx(opt.cost, abs=1e-9)

    rng = np.random.default_rng(seed)

    def rollout_cost(actions):
        x, total = sys.x0, 0.0
        for t in range(sys.horizon):
            total += sys.stage_cost(t, x, actions[t])
            x = sys.A[t] @ x + sys.B[t] @ actions[t] + sys.w[t]
        return total

    for t in range(sys.horizon - 1):
        d = rng.standard_normal(2)
        d *= 1e-4 / np.linalg.norm(d)
        for sign in (1.0, -1.0):
            pert = opt.actions.copy()
            pert[t] += sign * d
            assert rollout_cost(pert) >= opt.cost - 1e-12


def test_box_active_is_reported():
    sys = scalar_lqr(3, [5.0, 5.0, 0.0], 1.0, box=1.0)
    with pytest.raises(BoxActive):
        offline_optimal_ltv(sys)


# --- lower bound ---------------------------------------------------------------


def test_lower_bound_zero_disturbance():
    sys = scalar_lqr(4, np.zeros(4), 1.0)
    assert opt_lower_bound(sys) == 0.0


def test_lower_bound_direct_formula():
    sys = scalar_lqr(2, [math.sqrt(12.0), 0.0], 1.0)
    assert opt_lower_bound(sys, mu=1.0, a=1.0, b=1.0) == pytest.approx(1.0, rel=1e-15)


def test_lower_bound_ignores_last_disturbance():
    sys = scalar_lqr(3, [0.0, 0.0, 7.0], 1.0)
    assert opt_lower_bound(sys) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(2, 12))
def test_lower_bound_below_optimum(seed, T):
    sys = random_ltv_system(T, 2, 2, rng=seed)
    assert opt_lower_bound(sys) <= offline_optimal_ltv(sys).cost


# --- Riccati feedback ------------------------------------------------------------


def test_scalar_feedback_gain():
    P = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])[0, 0]
    sys = scalar_lqr(5, np.zeros(5), P)
    K = riccati_feedback(sys)
    np.testing.assert_allclose(K[:, 0, 0], P / (1 + P), atol=1e-12)


def test_zero_input_matrix_gives_zero_gain():
    sys = scalar_lqr(4, np.zeros(4), 1.0, b=0.0)
    np.testing.assert_array_equal(riccati_feedback(sys), 0.0)


def test_tracking_closed_loop_is_stable():
    sys = build_tracking_benchmark(10)
    K = riccati_feedback(sys)[0]
    M = sys.A[0] - sys.B[0] @ K
    v = np.ones(4)
    for _ in range(2000):
        v = M @ v
        v /= np.linalg.norm(v)
    # power iteration growth factor estimates the spectral radius
    assert np.linalg.norm(M @ v) < 1.0
    assert max(abs(np.linalg.eigvals(M))) < 1.0


def test_time_varying_feedback_matches_backward_recursion():
    sys = random_ltv_system(5, 2, 1, rng=3)
    K = riccati_feedback(sys)
    P = sys.terminal
    for t in range(4, -1, -1):
        A, B, Q, R = sys.A[t], sys.B[t], sys.Q[t], sys.R[t]
        Kt = np.linalg.inv(R + B.T @ P @ B) @ B.T @ P @ A
        np.testing.assert_allclose(K[t], Kt, atol=1e-10)
        P = Q + A.T @ P @ A - A.T @ P @ B @ Kt
