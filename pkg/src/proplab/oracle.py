"""Exact oracles: optimal Q/V tables, the LTV offline optimum and its lower bound."""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import BoxActive, NoConvergence
from .ftocp import FtocpWindow
from .numerics import riccati_step, solve_dare, spectral_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QStarTables:
    """Optimal action values ``q[t, s, a]`` and state values ``v[t, s]``.

    ``v`` has ``T + 1`` rows; the last one is the zero terminal boundary.
    """

    q: np.ndarray
    v: np.ndarray

    @property
    def horizon(self):
        return self.q.shape[0]

    @property
    def num_states(self):
        return self.q.shape[1]

    @property
    def num_actions(self):
        return self.q.shape[2]

    def greedy_action(self, t, s):
        # np.argmin returns the first minimizer, i.e. ties go to the lowest index
        return int(np.argmin(self.q[t, s]))

    def greedy_policy(self):
        """(T, S) array of optimal action indices."""
        return np.argmin(self.q, axis=2)

    def to_dict(self):
        T, S, A = self.q.shape
        return {
            "type": "qstar",
            "horizon": T,
            "num_states": S,
            "num_actions": A,
            "q": self.q.ravel().tolist(),
            "v": self.v.ravel().tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        T, S, A = doc["horizon"], doc["num_states"], doc["num_actions"]
        q = np.asarray(doc["q"], dtype=float).reshape(T, S, A)
        v = np.asarray(doc["v"], dtype=float).reshape(T + 1, S)
        return cls(q=q, v=v)


def backward_induction(mdp):
    """Solve the Bellman optimality equations backward from ``V_T = 0``."""
    T, S, A = mdp.costs.shape
    q = np.empty((T, S, A))
    v = np.zeros((T + 1, S))
    for t in range(T - 1, -1, -1):
        q[t] = mdp.costs[t] + mdp.transitions[t] @ v[t + 1]
        v[t] = q[t].min(axis=1)
    return QStarTables(q=q, v=v)


def policy_value(mdp, policy):
    """Expected cost of a Markov policy from the initial state.

    ``policy`` is either a (T, S) array of action indices or a (T, S, A)
    array of action distributions.
    """
    T, S, A = mdp.costs.shape
    policy = np.asarray(policy)
    if policy.ndim == 2:
        dist = np.zeros((T, S, A))
        np.put_along_axis(dist, policy[..., None].astype(int), 1.0, axis=2)
    else:
        dist = policy.astype(float)
    v = np.zeros(S)
    for t in range(T - 1, -1, -1):
        q = mdp.costs[t] + mdp.transitions[t] @ v
        v = (dist[t] * q).sum(axis=1)
    return float(v[mdp.initial_state])


@dataclass(frozen=True)
class OfflineOptimum:
    """Offline optimal trajectory of an LTV system with ``J = sum_t c_t``."""

    cost: float
    states: np.ndarray
    actions: np.ndarray
    kkt_residual: float


def offline_optimal_ltv(sys, box_tol=1e-9):
    """Full-horizon optimum with the true disturbances and terminal weight ``Q_{T-1}``.

    Since there is no stage cost at ``T``, the last action ``u_{T-1}`` only
    influences ``x_T`` and is set to zero.  The action box is ignored while
    solving and checked afterwards.

    Raises
    ------
    BoxActive
        If some optimal action reaches the boundary of the action box.
    """
    T = sys.horizon
    window = FtocpWindow(sys, 0, T - 1, sys.Q[T - 1])
    sol = window.solve(sys.x0, sys.w[: T - 1])
    actions = np.vstack([sol.actions, np.zeros((1, sys.action_dim))])
    slack = box_tol * (1.0 + np.maximum(np.abs(sys.action_low), np.abs(sys.action_high)))
    if np.any(actions >= sys.action_high - slack) or np.any(actions <= sys.action_low + slack):
        raise BoxActive("the unconstrained offline optimum reaches the action box")
    cost = sum(sys.stage_cost(t, sol.states[t], actions[t]) for t in range(T))
    return OfflineOptimum(
        cost=float(cost), states=sol.states, actions=actions, kkt_residual=sol.kkt_residual
    )


def system_constants(sys):
    """Empirical ``(a, b, mu, ell, d)`` of an LTV system.

    ``mu`` and ``ell`` bound the spectra of every ``Q_t``, ``R_t`` and the
    terminal matrix.
    """
    a = max(spectral_norm(M) for M in sys.A)
    b = max(spectral_norm(M) for M in sys.B)
    eig = np.concatenate(
        [np.linalg.eigvalsh(sys.Q).ravel(), np.linalg.eigvalsh(sys.R).ravel(),
         np.linalg.eigvalsh(sys.terminal)]
    )
    d = float(np.max(np.linalg.norm(sys.w, axis=1)))
    return a, b, float(eig.min()), float(eig.max()), d


def opt_lower_bound(sys, mu=None, a=None, b=None):
    """Disturbance-energy lower bound ``mu / (4 (1 + a^2 + b^2)) * sum_{t<T-1} ||w_t||^2``.

    Constants not supplied are measured from the system.  A nonpositive
    ``mu`` gives the trivial bound 0.
    """
    a0, b0, mu0, _, _ = system_constants(sys)
    a = a0 if a is None else a
    b = b0 if b is None else b
    mu = mu0 if mu is None else mu
    if mu <= 0.0:
        return 0.0
    energy = float(np.sum(sys.w[: sys.horizon - 1] ** 2))
    return mu / (4.0 * (1.0 + a * a + b * b)) * energy


def riccati_feedback(sys):
    """Per-step LQR gains ``K_t`` (the control law is ``u = -K_t x``).

    Stationary systems use the DARE solution at every step.  Otherwise (or
    when the DARE iteration does not converge) the finite-horizon recursion
    runs backward from ``P_T = sys.terminal``.

    Returns
    -------
    (T, m, n) ndarray
    """
    T = sys.horizon
    if sys.is_stationary():
        try:
            P = solve_dare(sys.A[0], sys.B[0], sys.Q[0], sys.R[0])
        except NoConvergence:
            # unstabilizable data: fall through to the finite-horizon recursion
            log.info("DARE did not converge; using the finite-horizon recursion")
        else:
            _, K = riccati_step(sys.A[0], sys.B[0], sys.Q[0], sys.R[0], P)
            return np.repeat(K[None], T, axis=0)
    gains = np.empty((T, sys.action_dim, sys.state_dim))
    P = sys.terminal
    for t in range(T - 1, -1, -1):
        P, gains[t] = riccati_step(sys.A[t], sys.B[t], sys.Q[t], sys.R[t], P)
    return gains
