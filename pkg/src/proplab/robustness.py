"""Distances between discrete distributions and robustness certificates.

Finite-MDP baselines are certified exhaustively over point-mass pairs: for
the linear maps involved (products of stochastic matrices) the worst ratio of
total-variation distances over the simplex is attained at vertices, so
sampling the interior adds nothing.

For MPC baselines :func:`estimate_mpc_contraction` is a falsifier: it samples
random state-action perturbations and reports the largest observed growth,
which can refute but never prove the theoretical decay.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .baseline import induced_chain

_CERT_TOL = 1e-12


def tv_distance(mu, nu):
    """Total variation ``0.5 ||mu - nu||_1``."""
    mu, nu = np.asarray(mu, dtype=float), np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValueError("distributions must share a support")
    return 0.5 * float(np.abs(mu - nu).sum())


def w1_indicator(mu, nu):
    """Wasserstein-1 distance between distributions on indicator vectors under l1.

    Distinct indicators are at distance 2, so an optimal plan keeps the
    overlap ``min(mu, nu)`` in place and pays 2 for every unit of the rest.
    """
    mu, nu = np.asarray(mu, dtype=float), np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValueError("distributions must share a support")
    return 2.0 * float((mu - np.minimum(mu, nu)).sum())


def w1_discrete(mu, nu, cost):
    """Optimal transport cost between two discrete distributions.

    Parameters
    ----------
    mu : (p,) array
    nu : (q,) array
    cost : (p, q) array
        Ground distances between the support points.
    """
    mu, nu, cost = (np.asarray(v, dtype=float) for v in (mu, nu, cost))
    p, q = cost.shape
    A_eq = np.zeros((p + q, p * q))
    for i in range(p):
        A_eq[i, i * q : (i + 1) * q] = 1.0
    for j in range(q):
        A_eq[p + j, j::q] = 1.0
    b_eq = np.concatenate([mu, nu * (mu.sum() / nu.sum())])
    res = scipy.optimize.linprog(
        cost.ravel(), A_eq=A_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs"
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def pairwise_l1(points):
    points = np.asarray(points, dtype=float)
    return np.abs(points[:, None, :] - points[None, :, :]).sum(axis=-1)


@dataclass
class ContractionCertificate:
    """Outcome of a contraction or robustness check.

    ``per_gap`` holds one ``{"gap", "bound", "observed"}`` entry per horizon gap.
    """

    kind: str
    eps_min: float
    lam: float
    c_s: float
    per_gap: list = field(default_factory=list)
    passed: bool = False
    note: str = ""

    def s(self, t):
        """``s(t) = 2 lam^{t-1}`` for ``t >= 1``."""
        return 2.0 * self.lam ** (t - 1)

    def to_dict(self):
        def enc(v):
            return str(v) if isinstance(v, float) and not math.isfinite(v) else v

        return {
            "kind": self.kind,
            "eps_min": self.eps_min,
            "lambda": self.lam,
            "c_s": enc(self.c_s),
            "per_gap": [{k: enc(v) for k, v in row.items()} for row in self.per_gap],
            "pass": self.passed,
            "note": self.note,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _chain_constants(mdp, baseline):
    chain = induced_chain(mdp, baseline)
    S = chain.shape[1]
    eps_min = float(chain.min())
    lam = min(max(1.0 - S * eps_min, 0.0), 1.0)
    if lam < 1.0:
        c_s = 1.0 + 2.0 / (1.0 - lam)
    else:
        c_s = math.inf
    note = ""
    if eps_min <= 0.0:
        note = ("induced chain has zero entries; positivity of multi-step products "
                "is not certified by this check")
    return chain, eps_min, lam, c_s, note


def _default_gap(T, max_gap):
    return min(T - 1, 16) if max_gap is None else min(int(max_gap), T - 1)


def _worst_row_tv(M):
    """Largest TV distance between two rows of a stochastic matrix."""
    return 0.5 * float(np.abs(M[:, None, :] - M[None, :, :]).sum(axis=-1).max())


def certify_contraction(mdp, baseline, max_gap=None):
    """Check ``TV(mu P_{t:t'}, nu P_{t:t'}) <= lam^{t'-t} TV(mu, nu)`` on point masses.

    ``P_{t:t'}`` is the product of the induced chains from ``t`` to ``t'``
    inclusive and ``lam = 1 - |S| eps_min``.  Every pair of distinct point
    masses has ``TV(mu, nu) = 1``, so the observed ratio is the largest TV
    distance between two rows of the product.
    """
    chain, eps_min, lam, c_s, note = _chain_constants(mdp, baseline)
    T = chain.shape[0]
    max_gap = _default_gap(T, max_gap)
    worst = np.zeros(max_gap + 1)
    for t in range(T):
        prod = np.eye(chain.shape[1])
        for gap in range(0, min(max_gap, T - 1 - t) + 1):
            prod = prod @ chain[t + gap]
            worst[gap] = max(worst[gap], _worst_row_tv(prod))
    per_gap = [
        {"gap": g, "bound": lam**g, "observed": float(worst[g])} for g in range(max_gap + 1)
    ]
    passed = eps_min > 0.0 and all(r["observed"] <= r["bound"] + _CERT_TOL for r in per_gap)
    return ContractionCertificate("tv", eps_min, lam, c_s, per_gap, passed, note)


def state_action_points(policy_t):
    """Embed ``s -> (e_s, pi_t(s))`` in l1; returns the (S, S + A) point array."""
    S = policy_t.shape[0]
    return np.hstack([np.eye(S), policy_t])


def pushforward_state_distribution(mdp, baseline, t1, s, a, t2):
    """State distribution at ``t2 > t1`` after playing ``a`` in ``s`` at ``t1`` and the baseline afterwards."""
    dist = mdp.transitions[t1, s, a].copy()
    chain = induced_chain(mdp, baseline)
    for tau in range(t1 + 1, t2):
        dist = dist @ chain[tau]
    return dist


def certify_wasserstein_robustness(mdp, baseline, max_gap=None):
    """Check the state-action robustness bound ``W1 <= 2 lam^{g-1} W1(rho, rho')`` for gaps ``g >= 1``.

    Starting points are point masses on state-action pairs ``(e_s, e_a)``
    at step ``t1``.  At ``t2 = t1 + g`` the baseline plays ``pi_{t2}(x)``, so the
    state-action law is the push-forward of the state law through
    ``s -> (e_s, pi_{t2}(s))``.  The reported W1 is the upper bound
    ``D_{t2} TV`` where ``D_{t2}`` is the largest distance between two embedded
    points: any coupling that keeps the common mass in place moves only ``TV``
    units of mass.
    """
    chain, eps_min, lam, c_s, note = _chain_constants(mdp, baseline)
    T, S, A = mdp.costs.shape
    max_gap = _default_gap(T, max_gap)
    if max_gap < 1:
        return ContractionCertificate("wasserstein", eps_min, lam, c_s, [], eps_min > 0.0, note)
    pi = baseline.policy
    diam = np.array([pairwise_l1(state_action_points(pi[t])).max() for t in range(T)])
    ratio = np.zeros(max_gap + 1)
    s_idx, a_idx = np.divmod(np.arange(S * A), A)
    w_start = 2.0 * (s_idx[:, None] != s_idx[None, :]) + 2.0 * (a_idx[:, None] != a_idx[None, :])
    distinct = w_start > 0.0
    for t1 in range(T - 1):
        dists = mdp.transitions[t1].reshape(S * A, S)
        for gap in range(1, min(max_gap, T - 1 - t1) + 1):
            t2 = t1 + gap
            if gap > 1:
                dists = dists @ chain[t2 - 1]
            tv = 0.5 * np.abs(dists[:, None, :] - dists[None, :, :]).sum(axis=-1)
            ratio[gap] = max(ratio[gap], float((diam[t2] * tv[distinct] / w_start[distinct]).max()))
    per_gap = [
        {"gap": g, "bound": 2.0 * lam ** (g - 1), "observed": float(ratio[g])}
        for g in range(1, max_gap + 1)
    ]
    passed = eps_min > 0.0 and all(r["observed"] <= r["bound"] + _CERT_TOL for r in per_gap)
    return ContractionCertificate("wasserstein", eps_min, lam, c_s, per_gap, passed, note)


def estimate_mpc_contraction(sys, baseline, probes=100, rng=None, max_gap=None, t_start=0, scale=1.0):
    """Largest observed ratio ``||(x, u)_{t+g} - (x', u')_{t+g}|| / ||z - z'||`` per gap ``g >= 1``.

    Random state-action pairs ``z = (x, u)``, ``z' = (x', u')`` are applied at
    ``t_start`` and both trajectories then follow the baseline under the same
    disturbances.  This samples the robustness property and is a falsifier,
    not a certificate.

    Returns
    -------
    (max_gap + 1,) ndarray
        Entry ``g`` is the worst ratio at gap ``g``; entry 0 is 1 by definition.
    """
    rng = np.random.default_rng(rng)
    T, n, m = sys.horizon, sys.state_dim, sys.action_dim
    max_gap = min(T - 1 - t_start, 16 if max_gap is None else max_gap)
    worst = np.zeros(max_gap + 1)
    for _ in range(probes):
        x, xp = scale * rng.standard_normal(n), scale * rng.standard_normal(n)
        u = np.clip(scale * rng.standard_normal(m), sys.action_low, sys.action_high)
        up = np.clip(scale * rng.standard_normal(m), sys.action_low, sys.action_high)
        start = math.sqrt(float(np.sum((x - xp) ** 2) + np.sum((u - up) ** 2)))
        if start == 0.0:
            continue
        worst[0] = 1.0
        for gap in range(1, max_gap + 1):
            t = t_start + gap
            x = sys.A[t - 1] @ x + sys.B[t - 1] @ u + sys.w[t - 1]
            xp = sys.A[t - 1] @ xp + sys.B[t - 1] @ up + sys.w[t - 1]
            u, up = baseline.action(t, x), baseline.action(t, xp)
            dist = math.sqrt(float(np.sum((x - xp) ** 2) + np.sum((u - up) ** 2)))
            worst[gap] = max(worst[gap], dist / start)
    return worst
