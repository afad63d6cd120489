"""Projection pursuit policy (PROP).

At every step the policy computes the advice action ``u_tilde`` (the minimizer
of the advice Q-values), the robust baseline action ``u_bar`` and their
distance ``eta``.  A robustness budget ``R`` is chosen and the played action is
the projection of ``u_tilde`` onto the ball of radius ``R`` around ``u_bar``,
which is the point ``trust * u_tilde + (1 - trust) * u_bar`` with
``trust = min(1, R / eta)``.

Budgets come from one of four modes:

``black``
    ``R = lam * eta`` for a fixed ``lam`` in ``[0, 1]``.
``grey``
    ``R = [eta - (beta / L_Q) * sum_{s<=t} delta_s]^+``, capped by ``eta`` and a
    global cap, where ``delta_s`` are temporal-difference errors of the
    advice measured along the trajectory.
``baseline-only`` / ``advice-only``
    ``R = 0`` and ``R = eta``.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .envs import FiniteMdp, NORMS, step_finite_detailed, step_ltv

MODES = ("black", "grey", "baseline-only", "advice-only")


@dataclass(frozen=True)
class PropConfig:
    mode: str = "grey"
    lam: float = 0.5
    beta: float = 1.0
    budget_cap: float | None = None
    lipschitz: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.budget_cap is not None and self.budget_cap <= 0.0:
            raise ValueError("budget_cap must be positive")
        if self.lipschitz is not None and self.lipschitz <= 0.0:
            raise ValueError("lipschitz must be positive")


def _norm_fn(norm):
    return NORMS[norm] if isinstance(norm, str) else norm


def trust_coefficient(budget, eta):
    """``min(1, R / eta)``, equal to 1 when the two actions coincide."""
    if eta <= 0.0:
        return 1.0
    return min(1.0, budget / eta)


def project_to_ball(u_tilde, u_bar, budget, norm="l2"):
    """Project ``u_tilde`` onto the ball of radius ``budget`` centred at ``u_bar``.

    The point returned lies on the segment between the two actions, so for
    the simplex (l1) and for boxes (l2) it stays admissible.
    """
    if budget < 0.0:
        raise ValueError("budget must be nonnegative")
    u_tilde = np.asarray(u_tilde, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    eta = _norm_fn(norm)(u_tilde - u_bar)
    if eta <= budget:
        return u_tilde.copy()
    if budget == 0.0:
        return u_bar.copy()
    trust = budget / eta
    return trust * u_tilde + (1.0 - trust) * u_bar


def blackbox_budget(u_tilde, u_bar, lam, norm="l2"):
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    return lam * _norm_fn(norm)(np.asarray(u_tilde, dtype=float) - np.asarray(u_bar, dtype=float))


def greybox_budget(eta, td_sum, beta, lipschitz, cap=None):
    """``min([eta - (beta / L_Q) td_sum]^+, eta, cap)``."""
    if lipschitz <= 0.0:
        raise ValueError("Lipschitz constant must be positive")
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    budget = min(max(eta - (beta / lipschitz) * td_sum, 0.0), eta)
    if cap is not None:
        budget = min(budget, cap)
    return budget


def approx_td_error(advice, t, x_t, prev):
    """One-step Bellman residual ``c_{t-1} + inf_v Q_t(x_t, v) - Q_{t-1}(x_{t-1}, u_{t-1})``.

    ``prev`` is ``(x_{t-1}, u_{t-1}, c_{t-1})``.  For tabular advice ``u_{t-1}``
    may be the sampled action index or a distribution.
    """
    if t < 1:
        raise ValueError("the TD error is defined from t = 1 on")
    x_prev, u_prev, c_prev = prev
    return (c_prev + advice.inf_value(t, x_t)) - advice.value(t - 1, x_prev, u_prev)


@dataclass
class TrajectoryLog:
    """Per-step record of one PROP episode.

    ``td[0]`` is NaN because the TD error starts at step 1.
    """

    states: np.ndarray
    advice_actions: np.ndarray
    baseline_actions: np.ndarray
    actions: np.ndarray
    eta: np.ndarray
    budget: np.ndarray
    td: np.ndarray
    trust: np.ndarray
    cost: np.ndarray
    mode: str
    seed: object = None
    sampled_actions: np.ndarray | None = None

    @property
    def horizon(self):
        return len(self.cost)

    @property
    def total_cost(self):
        return float(self.cost.sum())

    def to_rows(self):
        def flat(name, arr):
            arr = np.asarray(arr)
            arr = arr.reshape(len(arr), -1)
            return [f"{name}_{i}" for i in range(arr.shape[1])], arr

        header = ["t", "cost", "eta", "budget", "td", "trust"]
        blocks = [flat(n, a) for n, a in (
            ("x", self.states), ("u_tilde", self.advice_actions),
            ("u_bar", self.baseline_actions), ("u", self.actions))]
        for names, _ in blocks:
            header += names
        rows = []
        for t in range(self.horizon):
            row = [t, self.cost[t], self.eta[t], self.budget[t], self.td[t], self.trust[t]]
            for _, arr in blocks:
                row += list(arr[t])
            rows.append(row)
        return header, rows

    def to_csv(self, path=None):
        header, rows = self.to_rows()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([r if isinstance(r, (int, np.integer)) else repr(float(r)) for r in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        def enc(a):
            return [None if isinstance(v, float) and np.isnan(v) else v for v in np.asarray(a, dtype=float).ravel().tolist()]

        return {
            "mode": self.mode,
            "seed": self.seed,
            "total_cost": self.total_cost,
            "horizon": self.horizon,
            "states": np.asarray(self.states, dtype=float).tolist(),
            "advice_actions": self.advice_actions.tolist(),
            "baseline_actions": self.baseline_actions.tolist(),
            "actions": self.actions.tolist(),
            "eta": self.eta.tolist(),
            "budget": self.budget.tolist(),
            "td": enc(self.td),
            "trust": self.trust.tolist(),
            "cost": self.cost.tolist(),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class PropRunState:
    """Running TD sum and the previous step's cached quantities."""

    def __init__(self):
        self.td_sum = 0.0
        self.prev = None

    def update_td(self, advice, t, x):
        if self.prev is None:
            return float("nan")
        delta = approx_td_error(advice, t, x, self.prev)
        self.td_sum += delta
        return delta


def _budget(config, eta, td_sum, lipschitz, cap):
    if config.mode == "baseline-only":
        return 0.0
    if config.mode == "advice-only":
        return eta
    if config.mode == "black":
        return config.lam * eta
    return greybox_budget(eta, td_sum, config.beta, lipschitz, cap)


def run_episode(env, baseline, advice, config, rng=None):
    """Run PROP for one episode of ``env``.

    Parameters
    ----------
    env : FiniteMdp or LtvSystem
    baseline : callable ``(t, state) -> action``
        :class:`TabularBaseline` or :class:`MpcBaseline`.
    advice : TabularAdvice or QuadraticAdvice
    config : PropConfig
    rng : int, Generator or None
        Only finite MDPs draw random numbers.

    Returns
    -------
    TrajectoryLog
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    finite = isinstance(env, FiniteMdp)
    norm = NORMS[env.action_norm]
    T = env.horizon
    lipschitz = config.lipschitz if config.lipschitz is not None else advice.lipschitz
    cap = config.budget_cap if config.budget_cap is not None else env.action_diameter

    state = env.reset()
    run = PropRunState()
    states, ut_l, ub_l, u_l, sampled = [], [], [], [], []
    eta_l, budget_l, td_l, trust_l, cost_l = (np.empty(T) for _ in range(5))
    for t in range(T):
        td_l[t] = run.update_td(advice, t, state)
        u_tilde = np.asarray(advice.suggest(t, state), dtype=float)
        u_bar = np.asarray(baseline(t, state), dtype=float)
        eta = norm(u_tilde - u_bar)
        budget = _budget(config, eta, run.td_sum, lipschitz, cap)
        u = project_to_ball(u_tilde, u_bar, budget, norm)
        if finite:
            s_next, cost, j = step_finite_detailed(env, t, state, u, rng)
            run.prev = (state, j, cost)
            sampled.append(j)
        else:
            cost = env.stage_cost(t, state, u)
            s_next = step_ltv(env, t, state, u)
            run.prev = (state, u, cost)
        states.append(state)
        ut_l.append(u_tilde)
        ub_l.append(u_bar)
        u_l.append(u)
        eta_l[t], budget_l[t], cost_l[t] = eta, budget, cost
        trust_l[t] = 0.0 if config.mode == "baseline-only" else trust_coefficient(budget, eta)
        state = s_next
    return TrajectoryLog(
        states=np.asarray(states),
        advice_actions=np.asarray(ut_l),
        baseline_actions=np.asarray(ub_l),
        actions=np.asarray(u_l),
        eta=eta_l,
        budget=budget_l,
        td=td_l,
        trust=trust_l,
        cost=cost_l,
        mode=config.mode,
        seed=None if seed is None else int(seed),
        sampled_actions=np.asarray(sampled, dtype=int) if finite else None,
    )


def run_finite_batch(mdp, baseline, advice, config, episodes, rng=None):
    """Run ``episodes`` independent PROP episodes on a finite MDP at once.

    Follows the same per-step rules as :func:`run_episode`, vectorized over
    episodes (the random stream is consumed in a different order, so single
    episodes are not reproduced draw for draw).

    Returns
    -------
    costs : (episodes,) ndarray of total costs
    trust : (episodes, T) ndarray of trust coefficients
    """
    rng = np.random.default_rng(rng)
    T, S, A = mdp.costs.shape
    lipschitz = config.lipschitz if config.lipschitz is not None else advice.lipschitz
    cap = config.budget_cap if config.budget_cap is not None else mdp.action_diameter
    pi = baseline.policy
    q = advice.q
    s = np.full(episodes, mdp.initial_state)
    td_sum = np.zeros(episodes)
    totals = np.zeros(episodes)
    trust_log = np.empty((episodes, T))
    rows = np.arange(episodes)
    prev = None
    for t in range(T):
        if prev is not None:
            s_prev, j_prev, c_prev = prev
            td_sum += (c_prev + q[t, s].min(axis=1)) - q[t - 1, s_prev, j_prev]
        u_tilde = np.zeros((episodes, A))
        u_tilde[rows, np.argmin(q[t, s], axis=1)] = 1.0
        u_bar = pi[t, s]
        eta = np.abs(u_tilde - u_bar).sum(axis=1)
        if config.mode == "baseline-only":
            budget = np.zeros(episodes)
        elif config.mode == "advice-only":
            budget = eta
        elif config.mode == "black":
            budget = config.lam * eta
        else:
            budget = np.minimum(np.maximum(eta - (config.beta / lipschitz) * td_sum, 0.0), eta)
            budget = np.minimum(budget, cap)
        with np.errstate(divide="ignore", invalid="ignore"):
            trust = np.where(eta > 0.0, np.minimum(1.0, budget / eta), 1.0)
        if config.mode == "baseline-only":
            trust = np.zeros(episodes)
        u = trust[:, None] * u_tilde + (1.0 - trust[:, None]) * u_bar
        cdf = np.cumsum(u, axis=1)
        j = np.minimum((cdf < rng.random(episodes)[:, None] * cdf[:, -1:]).sum(axis=1), A - 1)
        cost = mdp.costs[t, s, j]
        pcdf = np.cumsum(mdp.transitions[t, s, j], axis=1)
        s_next = np.minimum((pcdf < rng.random(episodes)[:, None] * pcdf[:, -1:]).sum(axis=1), S - 1)
        totals += cost
        trust_log[:, t] = trust
        prev = (s, j, cost)
        s = s_next
    return totals, trust_log
