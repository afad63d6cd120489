"""Untrusted Q-value advice.

Two families are provided:

* :class:`TabularAdvice` for finite MDPs.  Actions are distributions over the
  action set, the advice value of a distribution is its expected table
  entry, and the suggested action is the point mass on the table argmin.
* :class:`QuadraticAdvice` for LTV systems.  Each step carries a quadratic
  ``0.5 z^T H z + g^T z + c0`` in ``z = (x, u)``; the suggested action is the
  minimizer over the action box.

Both expose ``value``, ``suggest`` and ``inf_value`` together with a declared
Lipschitz constant in the action.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import LipschitzViolation, NonPositiveCurvature
from .numerics import spectral_norm
from .oracle import QStarTables

PERTURBATION_MODES = ("uniform-shift", "per-entry-noise", "adversarial-argmin-flip")

# ratio between the realized and the requested error used by perturbed_advice,
# so rounding never pushes the realized error past the target
_SAFETY = 1.0 - 1e-9


class TabularAdvice:
    """Q-value tables ``q[t, s, a]`` used as advice on a finite MDP."""

    kind = "tabular"

    def __init__(self, q, lipschitz=None):
        q = np.array(q, dtype=float)
        if q.ndim != 3 or not np.all(np.isfinite(q)):
            raise ValueError("advice tables must be a finite (T, S, A) array")
        q.setflags(write=False)
        self.q = q
        measured = tabular_lipschitz(q)
        self.lipschitz = measured if lipschitz is None else float(lipschitz)
        if self.lipschitz < measured * (1.0 - 1e-12):
            raise LipschitzViolation(
                f"declared constant {self.lipschitz} below the table spread bound {measured}"
            )

    @property
    def horizon(self):
        return self.q.shape[0]

    def value(self, t, s, u):
        """Advice value of an action distribution (or action index)."""
        if np.isscalar(u) or np.ndim(u) == 0:
            return float(self.q[t, s, int(u)])
        return float(np.dot(u, self.q[t, s]))

    def suggest_index(self, t, s):
        return int(np.argmin(self.q[t, s]))

    def suggest(self, t, s):
        e = np.zeros(self.q.shape[2])
        e[self.suggest_index(t, s)] = 1.0
        return e

    def inf_value(self, t, s):
        return float(self.q[t, s].min())

    def to_dict(self):
        T, S, A = self.q.shape
        return {"type": "tabular_advice", "horizon": T, "num_states": S, "num_actions": A,
                "q": self.q.ravel().tolist(), "lipschitz": self.lipschitz}


def tabular_lipschitz(q):
    """Lipschitz constant of ``u -> u . q[t, s]`` on the simplex under l1.

    For distributions ``u, v`` the difference ``(u - v) . q`` is at most half
    the spread of ``q`` times ``||u - v||_1``.
    """
    spread = 0.5 * (q.max(axis=2) - q.min(axis=2)).max()
    return float(max(spread, 1e-12))


def exact_advice(tables):
    """Advice equal to the optimal tables."""
    return TabularAdvice(tables.q)


def shifted_advice(tables, shift, step=None):
    """Add ``shift`` to every entry (or only to the entries of one step)."""
    q = np.array(tables.q, dtype=float)
    if step is None:
        q += shift
    else:
        q[step] += shift
    return TabularAdvice(q)


@dataclass(frozen=True)
class AdviceErrorSpec:
    """Requested advice error ``eps`` (summed over steps) and how to realize it."""

    eps: float
    mode: str = "uniform-shift"
    p: float = np.inf

    def __post_init__(self):
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")
        if self.mode not in PERTURBATION_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {PERTURBATION_MODES}")
        if self.p < 1.0:
            raise ValueError("p must be at least 1")


def perturbed_advice(tables, spec, rng=None):
    """Perturb optimal tables so the sup-norm advice error stays within ``spec.eps``.

    Every entry moves by at most ``eta = eps / (2T)``, so each of the two terms
    of the per-step error is at most ``eta`` and the sum over ``T`` steps is at
    most ``eps``.

    * ``uniform-shift`` adds ``eta`` everywhere (suggestions are unchanged).
    * ``per-entry-noise`` adds independent uniform noise in ``[-eta, eta]``.
    * ``adversarial-argmin-flip`` raises the optimal entry by ``eta`` and lowers
      the runner-up by ``eta``, flipping the suggestion wherever the gap is
      below ``2 eta``.
    """
    if spec.eps == 0.0:
        return exact_advice(tables)
    T, S, A = tables.q.shape
    eta = spec.eps / (2.0 * T) * _SAFETY
    q = np.array(tables.q, dtype=float)
    if spec.mode == "uniform-shift":
        q += eta
    elif spec.mode == "per-entry-noise":
        rng = np.random.default_rng(rng)
        q += rng.uniform(-eta, eta, size=q.shape)
    else:
        if A < 2:
            raise ValueError("argmin flip needs at least two actions")
        order = np.argsort(q, axis=2, kind="stable")
        best = order[..., :1]
        second = order[..., 1:2]
        np.put_along_axis(q, best, np.take_along_axis(q, best, axis=2) + eta, axis=2)
        np.put_along_axis(q, second, np.take_along_axis(q, second, axis=2) - eta, axis=2)
    # rounding q + eta can overshoot eta by an ulp; step such entries back toward q
    over = np.abs(q - tables.q) > eta
    q[over] = np.nextafter(q[over], tables.q[over])
    return TabularAdvice(q)


def advice_from_json(text, spec=None, rng=None):
    """Tabular advice from an exported optimal-table document.

    An optional perturbation block ``{"eps": ..., "mode": ...}`` may be given
    inline under the key ``"perturbation"`` or through ``spec``.
    """
    doc = json.loads(text) if isinstance(text, str) else text
    tables = QStarTables.from_dict(doc)
    block = doc.get("perturbation")
    if spec is None and block is not None:
        spec = AdviceErrorSpec(eps=float(block["eps"]), mode=block.get("mode", "uniform-shift"))
    return exact_advice(tables) if spec is None else perturbed_advice(tables, spec, rng)


# --- quadratic advice for LTV systems ---------------------------------------


class QuadraticAdvice:
    """Per-step quadratic Q-value advice ``0.5 z^T H_t z + g_t^T z + c0_t`` with ``z = (x, u)``.

    Parameters
    ----------
    H : (T, n+m, n+m) array
    g : (T, n+m) array
    c0 : (T,) array
    action_low, action_high : (m,) arrays
        The action box over which suggestions are minimized.
    state_radius : float
        Radius of the state region used for the Lipschitz bound and probes.
    lipschitz : float, optional
        Declared constant; defaults to :meth:`lipschitz_bound`.
    """

    kind = "quadratic"

    def __init__(self, H, g, c0, state_dim, action_low, action_high, state_radius, lipschitz=None):
        H = np.array(H, dtype=float)
        self.H = 0.5 * (H + np.swapaxes(H, 1, 2))
        self.g = np.array(g, dtype=float)
        self.c0 = np.array(c0, dtype=float)
        self.n = int(state_dim)
        self.low = np.array(action_low, dtype=float)
        self.high = np.array(action_high, dtype=float)
        self.m = len(self.low)
        if self.H.shape[1:] != (self.n + self.m,) * 2 or self.g.shape != self.H.shape[:2]:
            raise ValueError("inconsistent quadratic advice shapes")
        for arr in (self.H, self.g, self.c0, self.low, self.high):
            arr.setflags(write=False)
        self.state_radius = float(state_radius)
        bound = self.lipschitz_bound()
        self.lipschitz = bound if lipschitz is None else float(lipschitz)

    @property
    def horizon(self):
        return self.H.shape[0]

    def blocks(self, t):
        n = self.n
        H = self.H[t]
        return H[:n, :n], H[:n, n:], H[n:, n:], self.g[t][:n], self.g[t][n:]

    def value(self, t, x, u):
        z = np.concatenate([x, u])
        return float(0.5 * z @ self.H[t] @ z + self.g[t] @ z + self.c0[t])

    def grad_u(self, t, x, u):
        _, Hxu, Huu, _, gu = self.blocks(t)
        return Huu @ u + Hxu.T @ x + gu

    def lipschitz_bound(self):
        """``max_t ||H_uu|| r_u + ||H_ux|| r_x + ||g_u||`` bounding the action gradient."""
        r_u = float(np.linalg.norm(np.maximum(np.abs(self.low), np.abs(self.high))))
        best = 0.0
        for t in range(self.horizon):
            _, Hxu, Huu, _, gu = self.blocks(t)
            val = spectral_norm(Huu) * r_u + spectral_norm(Hxu) * self.state_radius + np.linalg.norm(gu)
            best = max(best, float(val))
        return max(best, 1e-12)

    def suggest(self, t, x, tol=1e-8, max_iter=100_000):
        """Minimize the step-``t`` quadratic over the action box.

        The unconstrained minimizer is used when it lies in the box.  Otherwise
        clamping is exact for diagonal curvature; in general the projected
        gradient method runs until the projected step is below ``tol``.

        Raises
        ------
        NonPositiveCurvature
            If the action block of ``H_t`` is not positive definite.
        """
        _, Hxu, Huu, _, gu = self.blocks(t)
        try:
            chol = np.linalg.cholesky(Huu)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveCurvature(f"action block of step {t} is not positive definite") from exc
        lin = Hxu.T @ x + gu
        u = -np.linalg.solve(chol.T, np.linalg.solve(chol, lin))
        if np.all(u >= self.low) and np.all(u <= self.high):
            return u
        u = np.clip(u, self.low, self.high)
        if np.count_nonzero(Huu - np.diag(np.diag(Huu))) == 0:
            return u
        step = 1.0 / np.linalg.eigvalsh(Huu)[-1]
        for _ in range(max_iter):
            u_new = np.clip(u - step * (Huu @ u + lin), self.low, self.high)
            if np.linalg.norm(u_new - u) <= tol * (1.0 + np.linalg.norm(u)):
                return u_new
            u = u_new
        return u

    def inf_value(self, t, x):
        return self.value(t, x, self.suggest(t, x))


def check_lipschitz(advice, rng=None, pairs=1000, rtol=1e-9):
    """Probe random action pairs and compare difference quotients with the declared constant.

    Returns the largest observed quotient.

    Raises
    ------
    LipschitzViolation
        If some quotient exceeds the declared constant.
    """
    rng = np.random.default_rng(rng)
    worst = 0.0
    if isinstance(advice, TabularAdvice):
        T, S, A = advice.q.shape
        for _ in range(pairs):
            t, s = rng.integers(T), rng.integers(S)
            u, v = rng.dirichlet(np.ones(A)), rng.dirichlet(np.ones(A))
            dist = np.abs(u - v).sum()
            if dist > 0.0:
                worst = max(worst, abs(advice.value(t, s, u) - advice.value(t, s, v)) / dist)
    else:
        lo_x = -advice.state_radius / np.sqrt(advice.n) * np.ones(advice.n)
        for _ in range(pairs):
            t = rng.integers(advice.horizon)
            x = rng.uniform(lo_x, -lo_x)
            u = rng.uniform(advice.low, advice.high)
            v = rng.uniform(advice.low, advice.high)
            dist = np.linalg.norm(u - v)
            if dist > 0.0:
                worst = max(worst, abs(advice.value(t, x, u) - advice.value(t, x, v)) / dist)
    if worst > advice.lipschitz * (1.0 + rtol):
        raise LipschitzViolation(f"observed quotient {worst:.6g} exceeds declared {advice.lipschitz:.6g}")
    return worst


def _default_state_radius(sys):
    # the [-100, 100]^n region of the benchmarks, measured in l2
    return 100.0 * np.sqrt(sys.state_dim)


def affine_riccati_tables(sys, w=None, value_perturbation=None):
    """Backward recursion for the exact action-value quadratics of an LTV system.

    The value function ``V_{t+1}(y) = 0.5 y^T P y + q^T y + r`` starts from
    ``V_T = 0``.  Each step forms
    ``Q_t(x, u) = c_t(x, u) + V_{t+1}(A_t x + B_t u + w_t)`` and minimizes over
    ``u`` without the action box.

    ``value_perturbation`` optionally supplies symmetric matrices ``E_t`` that
    replace ``P_{t+1}`` with ``P_{t+1} + E_t`` inside ``Q_t`` only (the clean
    recursion continues underneath).

    Returns ``(H, g, c0, P, qv, rv)`` where ``P, qv, rv`` describe ``V_0 .. V_T``.
    """
    T, n, m = sys.horizon, sys.state_dim, sys.action_dim
    w = sys.w if w is None else np.asarray(w, dtype=float)
    H = np.empty((T, n + m, n + m))
    g = np.empty((T, n + m))
    c0 = np.empty(T)
    P = np.zeros((T + 1, n, n))
    qv = np.zeros((T + 1, n))
    rv = np.zeros(T + 1)
    for t in range(T - 1, -1, -1):
        M = np.hstack([sys.A[t], sys.B[t]])
        base = np.zeros((n + m, n + m))
        base[:n, :n] = sys.Q[t]
        base[n:, n:] = sys.R[t]
        qn, rn = qv[t + 1], rv[t + 1]

        def stage(Pn):
            return (
                base + M.T @ Pn @ M,
                M.T @ (Pn @ w[t] + qn),
                0.5 * w[t] @ Pn @ w[t] + qn @ w[t] + rn,
            )

        Hc, gc, cc = stage(P[t + 1])
        if value_perturbation is None:
            H[t], g[t], c0[t] = Hc, gc, cc
        else:
            H[t], g[t], c0[t] = stage(P[t + 1] + value_perturbation[t])
        Hxx, Hxu, Huu = Hc[:n, :n], Hc[:n, n:], Hc[n:, n:]
        gx, gu = gc[:n], gc[n:]
        S = np.linalg.solve(Huu, np.column_stack([Hxu.T, gu]))
        Kx, kx = S[:, :n], S[:, n]
        P[t] = Hxx - Hxu @ Kx
        P[t] = 0.5 * (P[t] + P[t].T)
        qv[t] = gx - Hxu @ kx
        rv[t] = cc - 0.5 * gu @ kx
    return H, g, c0, P, qv, rv


def ltv_exact_advice(sys, w=None, state_radius=None, lipschitz=None):
    """Exact action values of ``sys`` (or of the same dynamics driven by ``w``).

    With the true disturbances this reproduces the offline optimal policy
    whenever the action box is inactive.  Passing other disturbances gives
    advice that is exact for a different world, e.g. stale or adversarial.
    """
    H, g, c0, *_ = affine_riccati_tables(sys, w)
    radius = _default_state_radius(sys) if state_radius is None else state_radius
    return QuadraticAdvice(H, g, c0, sys.state_dim, sys.action_low, sys.action_high, radius, lipschitz)


def perturbed_riccati_advice(sys, scale, rng=None, w=None, state_radius=None):
    """Exact advice with each continuation matrix replaced by ``P_{t+1} + E_t``, ``||E_t|| = scale``."""
    rng = np.random.default_rng(rng)
    n = sys.state_dim
    E = np.empty((sys.horizon, n, n))
    for t in range(sys.horizon):
        M = rng.standard_normal((n, n))
        M = 0.5 * (M + M.T)
        E[t] = scale * M / max(spectral_norm(M), 1e-300)
    H, g, c0, *_ = affine_riccati_tables(sys, w, value_perturbation=E)
    radius = _default_state_radius(sys) if state_radius is None else state_radius
    return QuadraticAdvice(H, g, c0, n, sys.action_low, sys.action_high, radius)


def constant_advice(sys, u_c, curvature=1e-3, state_radius=None):
    """State-independent advice ``0.5 s ||u - u_c||^2`` that always suggests ``u_c``."""
    T, n, m = sys.horizon, sys.state_dim, sys.action_dim
    u_c = np.asarray(u_c, dtype=float)
    H = np.zeros((T, n + m, n + m))
    H[:, n:, n:] = curvature * np.eye(m)
    g = np.zeros((T, n + m))
    g[:, n:] = -curvature * u_c
    c0 = np.full(T, 0.5 * curvature * float(u_c @ u_c))
    radius = _default_state_radius(sys) if state_radius is None else state_radius
    return QuadraticAdvice(H, g, c0, n, sys.action_low, sys.action_high, radius)


def argmin_advice(advice, t, x):
    """Suggested action of the advice at step ``t`` and state ``x``."""
    return advice.suggest(t, x)


# --- advice error -------------------------------------------------------------


def _weighted_norm(values, weights, p):
    weights = np.asarray(weights, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    if np.isinf(p):
        support = weights > 0.0
        return float(values[support].max(initial=0.0))
    return float((weights * values**p).sum() ** (1.0 / p))


def advice_error(advice, reference, p=np.inf, rho=None):
    """Advice error summed over steps.

    Per step it adds the ``(p, rho_t)`` norm of ``Q_adv - Q_ref`` and the
    ``(p, phi_t)`` norm of ``inf Q_adv - inf Q_ref``, where ``phi_t`` is the
    state marginal of ``rho_t``.  For ``p = inf`` the norms are suprema over
    the support of ``rho_t``.

    Parameters
    ----------
    advice : TabularAdvice or QuadraticAdvice
    reference : QStarTables, TabularAdvice or QuadraticAdvice
        The optimal values.
    rho : optional
        Tabular case: (T, S, A) weights, one distribution per step (default
        uniform).  Quadratic case: a length-T sequence of ``(states, actions)``
        sample arrays with equal weights; required.
    """
    if isinstance(reference, QStarTables):
        reference = TabularAdvice(reference.q)
    if isinstance(advice, TabularAdvice):
        T, S, A = advice.q.shape
        if rho is None:
            rho = np.full((T, S, A), 1.0 / (S * A))
        rho = np.asarray(rho, dtype=float)
        diff = advice.q - reference.q
        inf_diff = advice.q.min(axis=2) - reference.q.min(axis=2)
        phi = rho.sum(axis=2)
        total = 0.0
        for t in range(T):
            total += _weighted_norm(diff[t], rho[t], p) + _weighted_norm(inf_diff[t], phi[t], p)
        return total
    if rho is None:
        raise ValueError("quadratic advice error needs sampled (states, actions) per step")
    total = 0.0
    for t, (xs, us) in enumerate(rho):
        xs, us = np.atleast_2d(xs), np.atleast_2d(us)
        wts = np.full(len(xs), 1.0 / len(xs))
        d1 = [advice.value(t, x, u) - reference.value(t, x, u) for x, u in zip(xs, us)]
        d2 = [advice.inf_value(t, x) - reference.inf_value(t, x) for x in xs]
        total += _weighted_norm(d1, wts, p) + _weighted_norm(d2, wts, p)
    return total
