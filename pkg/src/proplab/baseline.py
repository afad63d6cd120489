"""Robust baseline policies.

* :class:`MpcBaseline` -- receding-horizon control with zero disturbance
  predictions for LTV systems, together with the assumption checks and
  constants that certify its robustness.
* :class:`TabularBaseline` -- stochastic Markov policies for finite MDPs and
  the state-to-state chains they induce.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LambdaBarTooSmall
from .ftocp import FtocpWindow, constraint_matrix, solve_ftocp  # noqa: F401
from .numerics import min_singular_value, spectral_norm

log = logging.getLogger(__name__)


class MpcBaseline:
    """Receding-horizon controller with prediction horizon ``k``.

    At step ``t`` the controller solves the window ``[t, t']`` with
    ``t' = min(t + k, T - 1)`` assuming zero future disturbances and commits
    to the first action.  The terminal weight is ``terminal`` unless the
    window reaches the last step, where ``Q_{T-1}`` is used instead.

    KKT factorizations are cached per step, so repeated calls at the same
    ``t`` (for example across episodes) only cost a triangular solve.
    """

    def __init__(self, sys, k, terminal=None):
        if not 1 <= k <= sys.horizon:
            raise ValueError(f"prediction horizon k={k} must lie in [1, {sys.horizon}]")
        self.sys = sys
        self.k = int(k)
        P = sys.terminal if terminal is None else np.asarray(terminal, dtype=float)
        if P.shape != (sys.state_dim, sys.state_dim) or not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("terminal matrix must be symmetric with the state dimension")
        self.terminal = P
        self._windows = {}
        self.clamp_events = 0

    def window_end(self, t):
        return min(t + self.k, self.sys.horizon - 1)

    def window(self, t):
        win = self._windows.get(t)
        if win is None:
            T = self.sys.horizon
            t_end = self.window_end(t)
            P = self.sys.Q[T - 1] if t_end == T - 1 else self.terminal
            win = FtocpWindow(self.sys, t, t_end, P)
            self._windows[t] = win
        return win

    def unconstrained_action(self, t, x):
        """First planned action before clamping (zero at the last step)."""
        if not 0 <= t < self.sys.horizon:
            raise ValueError(f"step {t} outside [0, {self.sys.horizon})")
        win = self.window(t)
        if win.t_end == t:
            return np.zeros(self.sys.action_dim)
        sol = win.solve_raw(win.rhs(np.asarray(x, dtype=float), np.zeros((win.t_end - t, self.sys.state_dim))))
        n, m = self.sys.state_dim, self.sys.action_dim
        return sol[n : n + m]

    def action(self, t, x):
        u = self.unconstrained_action(t, x)
        if not self.sys.in_box(u, tol=0.0):
            self.clamp_events += 1
            # warn once per baseline; later clamps are counted and logged at debug level
            level = logging.WARNING if self.clamp_events == 1 else logging.DEBUG
            log.log(level, "MPC action clamped to the action box at t=%d", t)
            u = self.sys.clamp(u)
        return u

    def __call__(self, t, x):
        return self.action(t, x)


def mpc_action(baseline, t, x):
    """First action of the zero-prediction FTOCP, clamped to the box."""
    return baseline.action(t, x)


def extract_feedback_gain(baseline, t):
    """Gain ``K`` with ``u_t = K x_t`` for the unclamped MPC law at step ``t``.

    Columns are obtained by solving the KKT system from the unit states.
    """
    sys = baseline.sys
    n, m = sys.state_dim, sys.action_dim
    win = baseline.window(t)
    if win.t_end == t:
        return np.zeros((m, n))
    k = win.t_end - t
    rhs = np.column_stack([win.rhs(e, np.zeros((k, n))) for e in np.eye(n)])
    sol = win.solve_raw(rhs)
    return sol[n : n + m, :]


def closed_loop_matrix(sys, gains, t, t_end):
    """``Phi_{t,t_end} = (A_{t_end-1} + B K_{t_end-1}) ... (A_t + B_t K_t)``."""
    Phi = np.eye(sys.state_dim)
    for tau in range(t, t_end):
        Phi = (sys.A[tau] + sys.B[tau] @ gains[tau]) @ Phi
    return Phi


def uniform_stability_sigma(sys):
    """Smallest singular value of the constraint matrices ``Xi_{t,t'}``.

    Adding a block row (and its new columns) to ``Xi`` adds rows to the Gram
    matrix ``Xi Xi^T`` that contains the old Gram matrix as a principal
    block, so by interlacing the smallest singular value can only shrink as
    ``t'`` grows.  It is therefore enough to scan ``t' = T - 1``, and for
    stationary data only ``t = 0``.
    """
    T = sys.horizon
    starts = [0] if sys.is_stationary() else range(T)
    return min(min_singular_value(constraint_matrix(sys.A, sys.B, t, T - 1)) for t in starts)


def _finite_or_str(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


@dataclass
class AssumptionReport:
    """Constants of the MPC robustness theorem for one LTV system."""

    a: float
    b: float
    d: float
    mu: float
    ell: float
    sigma: float
    sigma_lower: float
    sigma_upper: float
    lam: float
    C: float
    lambda_bar: float
    required_k: int
    budget_cap: float
    R_x: float
    R_u: float
    rob_bound: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def s(self, t):
        """Robustness decay ``s(t) = C (1 + C)(a + b) lambda_bar^{t-1}``."""
        return self.C * (1.0 + self.C) * (self.a + self.b) * self.lambda_bar ** (t - 1)

    def gain_gap_bound(self, k):
        """Bound ``C^2 a lambda^{2k}`` on ``||K_t^k - K_t^T||``."""
        return self.C**2 * self.a * self.lam ** (2 * k)

    def to_dict(self):
        return {key: _finite_or_str(v) for key, v in asdict(self).items()}


def _theorem_constants(a, b, mu, ell, sigma):
    if mu > 0.0 and sigma > 0.0:
        sigma_lower = min(mu, 1.0) * (a + b + 1.0) * math.sqrt(ell / (2.0 * mu * ell + mu * sigma**2))
    else:
        sigma_lower = 0.0
    sigma_upper = math.sqrt(2.0) * (ell + a + b + 1.0)
    if sigma_lower >= sigma_upper:
        lam = 0.0
    else:
        lam = math.sqrt((sigma_upper - sigma_lower) / (sigma_upper + sigma_lower))
    if sigma_lower > 0.0 and lam > 0.0:
        C = 4.0 * (ell + 1.0 + a + b) / (sigma_lower**2 * lam)
    else:
        C = math.inf
    return sigma_lower, sigma_upper, lam, C


def required_horizon(C, a, b, lam, lambda_bar, T):
    """Smallest integer ``k >= 1`` with ``k >= min(T, 0.5 log(C^3 b a lam / (lambda_bar - lam)) / log(1/lam))``."""
    if not 0.0 < lam < 1.0 or not math.isfinite(C):
        return int(T)
    arg = C**3 * b * a * lam / (lambda_bar - lam)
    if arg <= 0.0:
        return 1
    value = 0.5 * math.log(arg) / math.log(1.0 / lam)
    return max(1, int(math.ceil(min(T, value))))


def check_assumptions(sys, lambda_bar=None, budget_cap=None, terminal=None, sigma=None):
    """Measure the system constants and evaluate the theorem's formulas verbatim.

    Parameters
    ----------
    lambda_bar : float, optional
        Target decay rate in ``(lam, 1)``; defaults to ``(1 + lam) / 2``.
    budget_cap : float, optional
        Uniform bound on PROP's budgets; defaults to the action-box diameter.
    terminal : ndarray, optional
        Terminal matrix of the baseline; defaults to ``sys.terminal``.
    sigma : float, optional
        Uniform-stability constant; measured when omitted.

    Failed bounds are collected in ``violations`` rather than raised.

    Raises
    ------
    LambdaBarTooSmall
        If every assumption holds but ``lambda_bar <= lam``.
    """
    P = sys.terminal if terminal is None else np.asarray(terminal, dtype=float)
    a = max(spectral_norm(M) for M in sys.A)
    b = max(spectral_norm(M) for M in sys.B)
    d = float(np.max(np.linalg.norm(sys.w, axis=1)))
    eig_q = np.linalg.eigvalsh(sys.Q)
    eig_r = np.linalg.eigvalsh(sys.R)
    eig_p = np.linalg.eigvalsh(P)
    mu = float(min(eig_q.min(), eig_r.min(), eig_p.min()))
    ell = float(max(eig_q.max(), eig_r.max(), eig_p.max()))
    if sigma is None:
        sigma = uniform_stability_sigma(sys)

    violations = []
    if eig_q.min() <= 0.0:
        violations.append(f"Q_t not positive definite (min eigenvalue {eig_q.min():.3g})")
    if eig_r.min() <= 0.0:
        violations.append(f"R_t not positive definite (min eigenvalue {eig_r.min():.3g})")
    if eig_p.min() <= 0.0:
        violations.append(f"terminal matrix not positive definite (min eigenvalue {eig_p.min():.3g})")
    if sigma <= 0.0:
        violations.append("uniform stability fails (sigma = 0)")
    if np.any(sys.x0 != 0.0):
        violations.append("initial state is not zero")

    sigma_lower, sigma_upper, lam, C = _theorem_constants(a, b, mu, ell, sigma)
    if lam >= 1.0 or not math.isfinite(C):
        violations.append("contraction constants degenerate (lambda = 1 or C infinite)")

    if lambda_bar is None:
        lambda_bar = 0.5 * (1.0 + lam)
    if lambda_bar <= lam or lambda_bar >= 1.0:
        if not violations:
            raise LambdaBarTooSmall(f"lambda_bar={lambda_bar} must lie in ({lam}, 1)")
        violations.append(f"lambda_bar={lambda_bar} outside ({lam}, 1)")

    required_k = required_horizon(C, a, b, lam, lambda_bar, sys.horizon)
    if budget_cap is None:
        budget_cap = sys.action_diameter
    with np.errstate(all="ignore"):
        gap = 1.0 - lambda_bar
        if gap > 0.0 and math.isfinite(C):
            R_x = C * (d + b * budget_cap) / gap
            R_u = C * R_x + budget_cap
            rob = 2.0 * ell * C**2 * (1.0 + C**2) * (1.0 + a * a + b * b) / (mu * gap**2)
        else:
            R_x = R_u = rob = math.inf
    return AssumptionReport(
        a=a, b=b, d=d, mu=mu, ell=ell, sigma=float(sigma),
        sigma_lower=sigma_lower, sigma_upper=sigma_upper, lam=lam, C=C,
        lambda_bar=float(lambda_bar), required_k=required_k, budget_cap=float(budget_cap),
        R_x=R_x, R_u=R_u, rob_bound=rob, violations=violations,
    )


# --- tabular baselines -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TabularBaseline:
    """Markov policy ``policy[t, s, a]`` over a finite MDP."""

    policy: np.ndarray

    def __post_init__(self):
        pi = np.array(self.policy, dtype=float)
        if pi.ndim != 3:
            raise ValueError("policy must have shape (T, S, A)")
        if np.any(pi < 0.0) or np.max(np.abs(pi.sum(axis=-1) - 1.0)) > 1e-12:
            raise ValueError("policy rows must be probability distributions")
        pi.setflags(write=False)
        object.__setattr__(self, "policy", pi)

    @classmethod
    def uniform(cls, mdp):
        T, S, A = mdp.costs.shape
        return cls(np.full((T, S, A), 1.0 / A))

    @classmethod
    def from_actions(cls, actions, num_actions):
        """Deterministic policy from a (T, S) array of action indices."""
        actions = np.asarray(actions, dtype=int)
        pi = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(pi, actions[..., None], 1.0, axis=-1)
        return cls(pi)

    def action(self, t, s):
        return self.policy[t, s].copy()

    def __call__(self, t, s):
        return self.action(t, s)

    def to_dict(self):
        T, S, A = self.policy.shape
        return {"type": "tabular_policy", "horizon": T, "num_states": S, "num_actions": A,
                "policy": self.policy.ravel().tolist()}

    @classmethod
    def from_dict(cls, doc):
        shape = (doc["horizon"], doc["num_states"], doc["num_actions"])
        return cls(np.asarray(doc["policy"], dtype=float).reshape(shape))


def tabular_baseline_action(baseline, t, s):
    return baseline.action(t, s)


def induced_chain(mdp, baseline):
    """Per-step state chains ``Pbar_t(s, s') = sum_a pi_t(s, a) P_t(s, a, s')``.

    Returns
    -------
    (T, S, S) ndarray
    """
    if baseline.policy.shape != mdp.costs.shape:
        raise ValueError("policy and MDP shapes differ")
    return np.einsum("tsa,tsaz->tsz", baseline.policy, mdp.transitions)


def chain_product(chain, t, t_end):
    """``Pbar_{t:t_end} = Pbar_t Pbar_{t+1} ... Pbar_{t_end}`` (both ends included)."""
    out = np.eye(chain.shape[1])
    for tau in range(t, t_end + 1):
        out = out @ chain[tau]
    return out
