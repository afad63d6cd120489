"""Finite-time optimal control problems over LTV dynamics, solved through KKT systems.

For a window ``[t, t_end]`` the decision vector stacks
``z = (x_t, u_t, x_{t+1}, u_{t+1}, ..., u_{t_end-1}, x_{t_end})`` and the
problem reads::

    minimize    sum_{tau=t}^{t_end-1} 0.5 (x_tau' Q_tau x_tau + u_tau' R_tau u_tau)
                + 0.5 x_{t_end}' P x_{t_end}
    subject to  x_t = x,   x_{tau+1} = A_tau x_tau + B_tau u_tau + w_tau

With ``Gamma`` the block-diagonal cost Hessian and ``Xi`` the constraint
matrix (block rows ``[I]`` and ``[-A_tau, -B_tau, I]``) the optimality
conditions are the symmetric indefinite system::

    [[Gamma, Xi^T], [Xi, 0]] [z; eta] = [0; (x, w_t, ..., w_{t_end-1})]

The KKT matrix does not depend on ``x`` or the disturbances, so a single
factorization serves every initial state of a window.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .numerics import lu_factor, lu_solve


def constraint_matrix(A, B, t, t_end):
    """Stacked dynamics constraint matrix ``Xi_{t,t_end}``.

    ``A`` and ``B`` are the per-step arrays of an :class:`LtvSystem`.
    """
    n, m = A.shape[1], B.shape[2]
    k = t_end - t
    N = k * (n + m) + n
    Xi = np.zeros((n * (k + 1), N))
    Xi[:n, :n] = np.eye(n)
    for i in range(k):
        tau = t + i
        r = n * (i + 1)
        c = i * (n + m)
        Xi[r : r + n, c : c + n] = -A[tau]
        Xi[r : r + n, c + n : c + n + m] = -B[tau]
        Xi[r : r + n, c + n + m : c + 2 * n + m] = np.eye(n)
    return Xi


def cost_hessian(Q, R, t, t_end, terminal):
    blocks = []
    for tau in range(t, t_end):
        blocks += [Q[tau], R[tau]]
    blocks.append(terminal)
    return scipy.linalg.block_diag(*blocks)


def kkt_matrix(sys, t, t_end, terminal):
    Gamma = cost_hessian(sys.Q, sys.R, t, t_end, terminal)
    Xi = constraint_matrix(sys.A, sys.B, t, t_end)
    p = Xi.shape[0]
    return np.block([[Gamma, Xi.T], [Xi, np.zeros((p, p))]])


@dataclass(frozen=True)
class FtocpSolution:
    """Predictive trajectory of one FTOCP.

    ``states`` has ``t_end - t + 1`` rows and ``actions`` has ``t_end - t``.
    """

    t: int
    t_end: int
    states: np.ndarray
    actions: np.ndarray
    multipliers: np.ndarray
    cost: float
    kkt_residual: float


class FtocpWindow:
    """Factored KKT system for one window ``[t, t_end]`` with a fixed terminal matrix."""

    def __init__(self, sys, t, t_end, terminal):
        if not 0 <= t <= t_end < sys.horizon + 1:
            raise ValueError(f"invalid window [{t}, {t_end}] for horizon {sys.horizon}")
        if t_end > t and t_end - 1 >= sys.horizon:
            raise ValueError("window extends past the horizon")
        self.sys = sys
        self.t = t
        self.t_end = t_end
        self.terminal = np.asarray(terminal, dtype=float)
        self.matrix = kkt_matrix(sys, t, t_end, self.terminal)
        self.factor = lu_factor(self.matrix)
        n, m = sys.state_dim, sys.action_dim
        self.num_primal = (t_end - t) * (n + m) + n

    def rhs(self, x, predicted_w):
        n = self.sys.state_dim
        k = self.t_end - self.t
        predicted_w = np.asarray(predicted_w, dtype=float).reshape(k, n)
        b = np.zeros(self.matrix.shape[0])
        b[self.num_primal : self.num_primal + n] = x
        b[self.num_primal + n :] = predicted_w.ravel()
        return b

    def solve_raw(self, rhs):
        """Solve against one or several right-hand sides (columns)."""
        return lu_solve(self.factor, rhs)

    def solve(self, x, predicted_w=None):
        n, m = self.sys.state_dim, self.sys.action_dim
        k = self.t_end - self.t
        x = np.asarray(x, dtype=float)
        if predicted_w is None:
            predicted_w = np.zeros((k, n))
        b = self.rhs(x, predicted_w)
        sol = self.solve_raw(b)
        residual = float(np.max(np.abs(self.matrix @ sol - b), initial=0.0))
        z = sol[: self.num_primal]
        states = np.empty((k + 1, n))
        actions = np.empty((k, m))
        for i in range(k):
            c = i * (n + m)
            states[i] = z[c : c + n]
            actions[i] = z[c + n : c + n + m]
        states[k] = z[k * (n + m) :]
        cost = trajectory_cost(self.sys, self.t, states, actions, self.terminal)
        return FtocpSolution(
            t=self.t,
            t_end=self.t_end,
            states=states,
            actions=actions,
            multipliers=sol[self.num_primal :],
            cost=cost,
            kkt_residual=residual,
        )


def trajectory_cost(sys, t, states, actions, terminal):
    """Stage costs over the window plus the terminal quadratic."""
    total = 0.0
    for i, u in enumerate(actions):
        total += sys.stage_cost(t + i, states[i], u)
    x_end = states[len(actions)]
    return total + 0.5 * float(x_end @ terminal @ x_end)


def solve_ftocp(sys, t, t_end, x, predicted_w=None, terminal=None):
    """Minimize the window cost from state ``x`` under predicted disturbances.

    Parameters
    ----------
    sys : LtvSystem
    t, t_end : int
        Window bounds with ``t <= t_end``; the actions are ``u_t, ..., u_{t_end-1}``.
    x : (n,) array_like
    predicted_w : (t_end - t, n) array_like, optional
        Defaults to zeros.
    terminal : (n, n) array_like, optional
        Defaults to ``sys.terminal``.

    Raises
    ------
    SingularMatrix
        If the KKT matrix is singular.
    """
    if terminal is None:
        terminal = sys.terminal
    return FtocpWindow(sys, t, t_end, terminal).solve(x, predicted_w)
