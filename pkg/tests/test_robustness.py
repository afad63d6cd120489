import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proplab.baseline import MpcBaseline, TabularBaseline, check_assumptions, induced_chain
from proplab.envs import FiniteMdp, LtvSystem, build_tracking_benchmark, random_finite_mdp, random_ltv_system
from proplab.robustness import (
    certify_contraction,
    certify_wasserstein_robustness,
    estimate_mpc_contraction,
    pairwise_l1,
    pushforward_state_distribution,
    state_action_points,
    tv_distance,
    w1_discrete,
    w1_indicator,
)


def greedy_uniform_metric_w1(mu, nu):
    """Transport on a metric where all distinct points are 2 apart.

    Matching greedily point by point keeps ``min(mu_i, nu_i)`` in place; every
    unmatched unit travels distance 2.
    """
    moved = 0.0
    for a, b in zip(mu, nu):
        moved += a - min(a, b)
    return 2.0 * moved


def permutation_mdp(perm, T=4):
    S = len(perm)
    P = np.zeros((T, S, 1, S))
    for s in range(S):
        P[:, s, 0, perm[s]] = 1.0
    return FiniteMdp(P, np.ones((T, S, 1)))


simplex = st.integers(2, 8).flatmap(
    lambda n: st.tuples(*[st.integers(0, 10_000)] * 1).map(lambda seed: np.random.default_rng(seed[0]).dirichlet(np.ones(n), size=3))
)


# --- distances -----------------------------------------------------------------------


def test_tv_examples():
    assert tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert tv_distance([1, 0, 0], [0, 0, 1]) == 1.0
    assert tv_distance([0.7, 0.3], [0.4, 0.6]) == pytest.approx(0.3, abs=1e-15)


def test_w1_examples():
    assert w1_indicator([1, 0], [0, 1]) == 2.0
    assert w1_indicator([0.2, 0.8], [0.2, 0.8]) == 0.0


def test_w1_matches_transport_lp_and_greedy_oracle():
    rng = np.random.default_rng(0)
    cost = pairwise_l1(np.eye(5))
    for _ in range(20):
        mu, nu = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        assert w1_indicator(mu, nu) == pytest.approx(greedy_uniform_metric_w1(mu, nu), abs=1e-14)
        assert w1_indicator(mu, nu) == pytest.approx(w1_discrete(mu, nu, cost), abs=1e-9)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        tv_distance([1.0], [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(triple=simplex)
def test_tv_triangle_and_identity(triple):
    a, b, c = triple
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-15
    assert abs(w1_indicator(a, b) - np.abs(a - b).sum()) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 4), n=st.integers(2, 5))
def test_pushforward_expectation_within_mixture_w1(seed, k, n):
    rng = np.random.default_rng(seed)
    pts_a, pts_b = rng.dirichlet(np.ones(n), size=k), rng.dirichlet(np.ones(n), size=k)
    wa, wb = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    cost = np.abs(pts_a[:, None, :] - pts_b[None, :, :]).sum(axis=-1)
    lhs = np.abs(wa @ pts_a - wb @ pts_b).sum()
    assert lhs <= w1_discrete(wa, wb, cost) + 1e-9


# --- TV contraction certificate -------------------------------------------------------


def brute_force_worst_tv(chain, max_gap):
    T, S, _ = chain.shape
    worst = [0.0] * (max_gap + 1)
    for t in range(T):
        for gap in range(min(max_gap, T - 1 - t) + 1):
            M = np.eye(S)
            for tau in range(t, t + gap + 1):
                M = M @ chain[tau]
            for i in range(S):
                for j in range(S):
                    if i != j:
                        worst[gap] = max(worst[gap], tv_distance(M[i], M[j]))
    return worst


def test_uniform_chain_collapses():
    mdp = random_finite_mdp((4, 2, 5), 0.25 - 1e-15, rng=0)
    cert = certify_contraction(mdp, TabularBaseline.uniform(mdp))
    assert cert.lam == pytest.approx(0.0, abs=1e-12)
    assert cert.passed
    assert all(r["observed"] <= 1e-12 for r in cert.per_gap)


def test_identity_chain_fails():
    mdp = permutation_mdp([0, 1, 2])
    cert = certify_contraction(mdp, TabularBaseline.uniform(mdp))
    assert cert.eps_min == 0.0 and cert.lam == 1.0 and not cert.passed
    assert math.isinf(cert.c_s)
    assert "positivity" in cert.note


def test_random_positive_chain_matches_exhaustive_enumeration():
    mdp = random_finite_mdp((4, 3, 8), 0.1, rng=5)
    base = TabularBaseline.uniform(mdp)
    cert = certify_contraction(mdp, base, max_gap=7)
    oracle = brute_force_worst_tv(induced_chain(mdp, base), 7)
    assert cert.passed
    for row, val in zip(cert.per_gap, oracle):
        assert row["observed"] == pytest.approx(val, abs=1e-14)
        assert row["observed"] <= cert.lam ** row["gap"] + 1e-12


@settings(max_examples=30, deadline=None)
@given(S=st.integers(2, 6), T=st.integers(2, 10), seed=st.integers(0, 10_000), frac=st.floats(0.05, 0.99))
def test_observed_ratio_nonincreasing_in_gap(S, T, seed, frac):
    mdp = random_finite_mdp((S, 2, T), frac / S, rng=seed)
    cert = certify_contraction(mdp, TabularBaseline.uniform(mdp))
    obs = [r["observed"] for r in cert.per_gap]
    assert all(b <= a + 1e-12 for a, b in zip(obs, obs[1:]))
    assert cert.passed


def test_certificate_json_keys():
    mdp = random_finite_mdp((3, 2, 4), 0.1, rng=0)
    doc = json.loads(certify_contraction(mdp, TabularBaseline.uniform(mdp)).to_json())
    assert {"eps_min", "lambda", "c_s", "per_gap", "pass"} <= set(doc)
    assert set(doc["per_gap"][0]) == {"gap", "bound", "observed"}


def test_c_s_sums_s_function():
    mdp = random_finite_mdp((2, 2, 4), 0.25, rng=0)
    cert = certify_contraction(mdp, TabularBaseline.uniform(mdp))
    lam = cert.lam
    # s(0) = 1 plus sum_{t>=1} 2 lam^{t-1}
    assert cert.c_s == pytest.approx(1 + sum(2 * lam ** (t - 1) for t in range(1, 2000)), rel=1e-12)
    assert cert.s(3) == pytest.approx(2 * lam**2)


# --- Wasserstein robustness certificate ----------------------------------------------


def test_wasserstein_lambda_zero_chain_gives_zero_distance():
    mdp = random_finite_mdp((3, 2, 5), 1 / 3 - 1e-15, rng=1)
    cert = certify_wasserstein_robustness(mdp, TabularBaseline.uniform(mdp))
    assert cert.passed
    assert all(r["observed"] <= 1e-12 for r in cert.per_gap)


def test_wasserstein_permutation_fails():
    mdp = permutation_mdp([1, 2, 0])
    assert not certify_wasserstein_robustness(mdp, TabularBaseline.uniform(mdp)).passed


@pytest.mark.parametrize("seed", range(3))
def test_wasserstein_certificate_dominates_exact_transport(seed):
    mdp = random_finite_mdp((3, 2, 6), 0.1, rng=seed)
    base = TabularBaseline.uniform(mdp)
    cert = certify_wasserstein_robustness(mdp, base)
    assert cert.passed
    T, S, A = mdp.costs.shape
    observed = {r["gap"]: r["observed"] for r in cert.per_gap}
    for t1 in range(T - 1):
        for t2 in range(t1 + 1, T):
            g = t2 - t1
            pts = state_action_points(base.policy[t2])
            cost = pairwise_l1(pts)
            for s in range(S):
                for a in range(A):
                    for s2 in range(S):
                        for a2 in range(A):
                            start = 2.0 * (s != s2) + 2.0 * (a != a2)
                            if start == 0.0:
                                continue
                            mu = pushforward_state_distribution(mdp, base, t1, s, a, t2)
                            nu = pushforward_state_distribution(mdp, base, t1, s2, a2, t2)
                            exact = w1_discrete(mu, nu, cost) / start
                            assert exact <= observed[g] + 1e-9
                            assert exact <= 2.0 * cert.lam ** (g - 1) + 1e-9


# --- MPC contraction estimate ----------------------------------------------------------


def scalar_closed_loop(T=50):
    # with a = b = r = q = 1 and terminal 1.5 the one-step MPC gain is 0.6, so a - b k = 0.4
    return LtvSystem(
        A=np.ones((T, 1, 1)), B=np.ones((T, 1, 1)), w=np.zeros((T, 1)),
        Q=np.ones((T, 1, 1)), R=np.ones((T, 1, 1)), terminal=np.eye(1) * 1.5,
        action_low=[-1e6], action_high=[1e6], x0=[0.0],
    )


def test_scalar_closed_loop_ratio_decays_at_rate():
    sys = scalar_closed_loop()
    ratios = estimate_mpc_contraction(sys, MpcBaseline(sys, 1), probes=50, rng=0, max_gap=10)
    for g in range(2, 11):
        assert ratios[g] / ratios[1] == pytest.approx(0.4 ** (g - 1), rel=1e-9)


def test_equal_starts_give_no_ratio():
    sys = scalar_closed_loop()
    ratios = estimate_mpc_contraction(sys, MpcBaseline(sys, 1), probes=5, rng=0, max_gap=5, scale=0.0)
    assert np.all(ratios == 0.0)


def test_tracking_estimate_within_theorem_bound():
    sys = build_tracking_benchmark(60)
    rep = check_assumptions(sys)
    ratios = estimate_mpc_contraction(sys, MpcBaseline(sys, 10), probes=20, rng=1, max_gap=12)
    for g in range(1, 13):
        assert ratios[g] <= rep.C * (1 + rep.C) * (rep.a + rep.b) * rep.lambda_bar ** (g - 1)


def test_assumption_passing_estimate_within_theorem_bound():
    sys = random_ltv_system(40, 2, 2, rng=0)
    rep = check_assumptions(sys)
    assert rep.passed
    ratios = estimate_mpc_contraction(sys, MpcBaseline(sys, rep.required_k), probes=20, rng=1, max_gap=12)
    for g in range(1, 13):
        assert ratios[g] <= rep.C * (1 + rep.C) * (rep.a + rep.b) * rep.lambda_bar ** (g - 1)
