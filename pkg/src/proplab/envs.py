"""Environments: finite tabular MDPs and linear time-varying (LTV) systems.

Both environment types are immutable after construction.  Simulation state
(current state, random generator) lives with the caller.

Conventions
-----------
* Time steps run ``t = 0, ..., T-1``; there is no terminal stage cost.
* Finite MDPs act on action *distributions* (points of the simplex) measured
  in the l1 norm; states are embedded as indicator vectors, also under l1.
* LTV systems use the l2 norm on states and actions, with stage cost
  ``0.5 * (x^T Q_t x + u^T R_t u)`` and a compact box of admissible actions.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ActionOutOfBox, InfeasibleFloor
from .numerics import solve_dare

_ROW_TOL = 1e-12
_BOX_TOL = 1e-9


def _norm_l1(v):
    return float(np.abs(v).sum())


def _norm_l2(v):
    return float(np.linalg.norm(v))


NORMS = {"l1": _norm_l1, "l2": _norm_l2}


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Finite-horizon tabular MDP.

    Attributes
    ----------
    transitions : (T, S, A, S) ndarray
        ``transitions[t, s, a, s2]`` is the probability of moving to ``s2``.
    costs : (T, S, A) ndarray
        Strictly positive, finite stage costs.
    initial_state : int
    """

    transitions: np.ndarray
    costs: np.ndarray
    initial_state: int = 0
    state_norm: str = field(default="l1", init=False)
    action_norm: str = field(default="l1", init=False)

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        c = np.array(self.costs, dtype=float)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ValueError(f"transitions must have shape (T, S, A, S), got {P.shape}")
        if c.shape != P.shape[:3]:
            raise ValueError(f"costs must have shape {P.shape[:3]}, got {c.shape}")
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=-1) - 1.0)) > _ROW_TOL:
            raise ValueError("transition rows must sum to one")
        if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
            raise ValueError("stage costs must be strictly positive and finite")
        if not 0 <= self.initial_state < P.shape[1]:
            raise ValueError("initial_state out of range")
        P.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def horizon(self):
        return self.transitions.shape[0]

    @property
    def num_states(self):
        return self.transitions.shape[1]

    @property
    def num_actions(self):
        return self.transitions.shape[2]

    @property
    def action_diameter(self):
        # l1 diameter of the probability simplex
        return 2.0

    def is_deterministic(self):
        return bool(np.all((self.transitions == 0.0) | (self.transitions == 1.0)))

    def reset(self):
        return self.initial_state

    def to_dict(self):
        T, S, A, _ = self.transitions.shape
        return {
            "type": "finite",
            "horizon": T,
            "num_states": S,
            "num_actions": A,
            "initial_state": self.initial_state,
            "transitions": self.transitions.ravel().tolist(),
            "costs": self.costs.ravel().tolist(),
            "norms": {"state": self.state_norm, "action": self.action_norm},
        }

    @classmethod
    def from_dict(cls, doc):
        T, S, A = doc["horizon"], doc["num_states"], doc["num_actions"]
        return cls(
            transitions=np.asarray(doc["transitions"], dtype=float).reshape(T, S, A, S),
            costs=np.asarray(doc["costs"], dtype=float).reshape(T, S, A),
            initial_state=doc.get("initial_state", 0),
        )


@dataclass(frozen=True, eq=False)
class LtvSystem:
    """Linear time-varying system ``x_{t+1} = A_t x_t + B_t u_t + w_t``.

    All per-step arrays carry the time index first.  The disturbances ``w``
    are fixed in advance (oblivious) and are only read by the simulator and
    the offline oracle, never by policies.

    Attributes
    ----------
    A : (T, n, n) ndarray
    B : (T, n, m) ndarray
    w : (T, n) ndarray
    Q : (T, n, n) ndarray
        Symmetric positive semidefinite state cost matrices.
    R : (T, m, m) ndarray
        Symmetric positive definite action cost matrices.
    terminal : (n, n) ndarray
        Terminal cost matrix used by receding-horizon controllers.
    action_low, action_high : (m,) ndarray
        Bounds of the compact action box.
    x0 : (n,) ndarray
    """

    A: np.ndarray
    B: np.ndarray
    w: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    terminal: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray
    x0: np.ndarray
    state_norm: str = field(default="l2", init=False)
    action_norm: str = field(default="l2", init=False)

    def __post_init__(self):
        arrays = {}
        for name in ("A", "B", "w", "Q", "R", "terminal", "action_low", "action_high", "x0"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arrays[name] = arr
        A, B, w = arrays["A"], arrays["B"], arrays["w"]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError(f"A must have shape (T, n, n), got {A.shape}")
        T, n, _ = A.shape
        if B.ndim != 3 or B.shape[:2] != (T, n):
            raise ValueError(f"B must have shape ({T}, {n}, m), got {B.shape}")
        m = B.shape[2]
        expected = {
            "w": (T, n),
            "Q": (T, n, n),
            "R": (T, m, m),
            "terminal": (n, n),
            "action_low": (m,),
            "action_high": (m,),
            "x0": (n,),
        }
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arrays[name].shape}")
        for name in ("Q", "R"):
            M = arrays[name]
            if not np.allclose(M, np.swapaxes(M, 1, 2), atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        if not np.allclose(arrays["terminal"], arrays["terminal"].T, atol=1e-12):
            raise ValueError("terminal must be symmetric")
        if np.any(np.linalg.eigvalsh(arrays["R"]) <= 0.0):
            raise ValueError("R_t must be positive definite")
        if np.any(np.linalg.eigvalsh(arrays["Q"]) < -1e-12):
            raise ValueError("Q_t must be positive semidefinite")
        if np.any(arrays["action_low"] > arrays["action_high"]):
            raise ValueError("action box is empty")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self):
        return self.A.shape[0]

    @property
    def state_dim(self):
        return self.A.shape[1]

    @property
    def action_dim(self):
        return self.B.shape[2]

    @property
    def action_diameter(self):
        """Largest distance between two admissible actions."""
        return float(np.linalg.norm(self.action_high - self.action_low))

    @property
    def action_radius(self):
        """Largest norm of an admissible action."""
        return float(np.linalg.norm(np.maximum(np.abs(self.action_low), np.abs(self.action_high))))

    def is_stationary(self):
        return all(
            np.array_equal(M, M[:1].repeat(len(M), axis=0)) for M in (self.A, self.B, self.Q, self.R)
        )

    def stage_cost(self, t, x, u):
        return 0.5 * float(x @ self.Q[t] @ x + u @ self.R[t] @ u)

    def clamp(self, u):
        return np.clip(u, self.action_low, self.action_high)

    def in_box(self, u, tol=_BOX_TOL):
        slack = tol * (1.0 + np.maximum(np.abs(self.action_low), np.abs(self.action_high)))
        return bool(np.all(u >= self.action_low - slack) and np.all(u <= self.action_high + slack))

    def reset(self):
        return self.x0.copy()

    def with_disturbances(self, w):
        return LtvSystem(
            A=self.A, B=self.B, w=w, Q=self.Q, R=self.R, terminal=self.terminal,
            action_low=self.action_low, action_high=self.action_high, x0=self.x0,
        )

    def with_terminal(self, terminal):
        return LtvSystem(
            A=self.A, B=self.B, w=self.w, Q=self.Q, R=self.R, terminal=terminal,
            action_low=self.action_low, action_high=self.action_high, x0=self.x0,
        )

    def to_dict(self):
        return {
            "type": "ltv",
            "horizon": self.horizon,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "A": self.A.ravel().tolist(),
            "B": self.B.ravel().tolist(),
            "w": self.w.ravel().tolist(),
            "Q": self.Q.ravel().tolist(),
            "R": self.R.ravel().tolist(),
            "terminal": self.terminal.ravel().tolist(),
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "x0": self.x0.tolist(),
            "norms": {"state": self.state_norm, "action": self.action_norm},
        }

    @classmethod
    def from_dict(cls, doc):
        T, n, m = doc["horizon"], doc["state_dim"], doc["action_dim"]

        def arr(key, shape):
            return np.asarray(doc[key], dtype=float).reshape(shape)

        return cls(
            A=arr("A", (T, n, n)),
            B=arr("B", (T, n, m)),
            w=arr("w", (T, n)),
            Q=arr("Q", (T, n, n)),
            R=arr("R", (T, m, m)),
            terminal=arr("terminal", (n, n)),
            action_low=arr("action_low", (m,)),
            action_high=arr("action_high", (m,)),
            x0=arr("x0", (n,)),
        )


def env_to_json(env):
    return json.dumps(env.to_dict())


def env_from_dict(doc):
    kind = doc.get("type")
    if kind == "finite":
        return FiniteMdp.from_dict(doc)
    if kind == "ltv":
        return LtvSystem.from_dict(doc)
    raise ValueError(f"unknown environment type {kind!r}")


def env_from_json(text):
    return env_from_dict(json.loads(text))


def sample_index(probabilities, rng):
    """Draw an index from a probability vector with a single uniform variate."""
    cdf = np.cumsum(probabilities)
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(j, len(probabilities) - 1)


def step_finite_detailed(mdp, t, s, action, rng):
    """Like :func:`step_finite` but also returns the sampled action index."""
    j = sample_index(action, rng)
    s_next = sample_index(mdp.transitions[t, s, j], rng)
    return s_next, float(mdp.costs[t, s, j]), j


def step_finite(mdp, t, s, action, rng):
    """Sample ``j ~ action`` and ``s' ~ P_t(s, j, .)``; return ``(s', c_t(s, j))``."""
    s_next, cost, _ = step_finite_detailed(mdp, t, s, action, rng)
    return s_next, cost


def step_ltv(sys, t, x, u):
    """Return ``A_t x + B_t u + w_t``.

    Raises
    ------
    ActionOutOfBox
        If ``u`` lies outside the action box.
    """
    u = np.asarray(u, dtype=float)
    if not sys.in_box(u):
        raise ActionOutOfBox(f"action {u} outside box [{sys.action_low}, {sys.action_high}]")
    return sys.A[t] @ x + sys.B[t] @ u + sys.w[t]


def embed_state(s, n):
    """Indicator vector ``e_s`` in ``n`` dimensions."""
    if not 0 <= s < n:
        raise ValueError(f"state {s} out of range for {n} states")
    e = np.zeros(n)
    e[s] = 1.0
    return e


def point_mass(a, n):
    return embed_state(a, n)


# --- benchmark builders -----------------------------------------------------

TRACKING_A = np.array(
    [
        [1.0, 0.0, 0.2, 0.0],
        [0.0, 1.0, 0.0, 0.2],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)
TRACKING_B = np.array([[0.0, 0.0], [0.0, 0.0], [0.2, 0.0], [0.0, 0.2]])
TRACKING_Q = np.diag([1.0, 1.0, 0.0, 0.0])
TRACKING_R = 1e-2 * np.eye(2)
TRACKING_BOX = 100.0


def rose_curve(t):
    t = np.asarray(t, dtype=float)
    r = 2.0 * np.sin(t / 5.0)
    return np.stack([r * np.cos(t / 20.0), r * np.sin(t / 20.0)], axis=-1)


def circle_curve(t):
    t = np.asarray(t, dtype=float)
    return np.stack([2.0 * np.cos(t / 20.0), 2.0 * np.sin(t / 20.0)], axis=-1)


CURVES = {"rose": rose_curve, "circle": circle_curve}


def _tracking_system(w, terminal=None, box=TRACKING_BOX):
    T = len(w)
    if terminal is None:
        terminal = solve_dare(TRACKING_A, TRACKING_B, TRACKING_Q, TRACKING_R)
    return LtvSystem(
        A=np.repeat(TRACKING_A[None], T, axis=0),
        B=np.repeat(TRACKING_B[None], T, axis=0),
        w=w,
        Q=np.repeat(TRACKING_Q[None], T, axis=0),
        R=np.repeat(TRACKING_R[None], T, axis=0),
        terminal=terminal,
        action_low=-box * np.ones(2),
        action_high=box * np.ones(2),
        x0=np.zeros(4),
    )


def tracking_reference(T, trajectory="rose"):
    """Reference positions ``y_0, ..., y_T`` lifted to the 4-d state (zero velocity)."""
    pos = CURVES[trajectory](np.arange(T + 1))
    return np.hstack([pos, np.zeros_like(pos)])


def build_tracking_benchmark(T, trajectory="rose", terminal=None, box=TRACKING_BOX):
    """Two-dimensional robot tracking a fixed reference curve.

    The state is the tracking error ``x_t = l_t - y_t`` of a double integrator
    sampled at 0.2 s, so the disturbance is ``w_t = A y_t - y_{t+1}``.  The
    terminal matrix defaults to the DARE solution of the stationary data.
    """
    if T < 2:
        raise ValueError("horizon must be at least 2")
    if trajectory not in CURVES:
        raise ValueError(f"unknown trajectory {trajectory!r}; choose from {sorted(CURVES)}")
    y = tracking_reference(T, trajectory)
    w = y[:-1] @ TRACKING_A.T - y[1:]
    return _tracking_system(w, terminal=terminal, box=box)


def build_nonstationary_benchmark(
    T, shift_step, pre_mean=0.5, post_mean=-0.5, sigma=0.05, rng=None, terminal=None, box=TRACKING_BOX
):
    """Tracking dynamics driven by i.i.d. Gaussian disturbances with a mean shift.

    Entries of ``w_t`` are ``N(pre_mean, sigma)`` for ``t < shift_step`` and
    ``N(post_mean, sigma)`` afterwards.
    """
    if not 0 <= shift_step < T:
        raise ValueError("shift_step must lie in [0, T)")
    rng = np.random.default_rng(rng)
    means = np.where(np.arange(T) < shift_step, pre_mean, post_mean)[:, None]
    w = means + sigma * rng.standard_normal((T, 4))
    return _tracking_system(w, terminal=terminal, box=box)


def random_finite_mdp(sizes, min_entry=0.0, rng=None, cost_range=(0.0, 1.0)):
    """Random MDP whose transition entries are all at least ``min_entry``.

    Each row is ``min_entry + (1 - S * min_entry) * Dirichlet(1)``.  Costs are
    drawn uniformly from the half-open interval ``(lo, hi]``.

    Parameters
    ----------
    sizes : (S, A, T) tuple
    """
    S, A, T = sizes
    if min_entry < 0.0:
        raise ValueError("min_entry must be nonnegative")
    if min_entry * S >= 1.0:
        raise InfeasibleFloor(f"min_entry * |S| = {min_entry * S} >= 1")
    rng = np.random.default_rng(rng)
    free = rng.dirichlet(np.ones(S), size=(T, S, A))
    P = min_entry + (1.0 - S * min_entry) * free
    P /= P.sum(axis=-1, keepdims=True)
    lo, hi = cost_range
    costs = hi - (hi - lo) * rng.random((T, S, A))
    return FiniteMdp(transitions=P, costs=costs, initial_state=0)


def random_deterministic_mdp(sizes, rng=None, cost_range=(0.0, 1.0)):
    """Random MDP with one-hot transition rows."""
    S, A, T = sizes
    rng = np.random.default_rng(rng)
    nxt = rng.integers(0, S, size=(T, S, A))
    P = np.zeros((T, S, A, S))
    np.put_along_axis(P, nxt[..., None], 1.0, axis=-1)
    lo, hi = cost_range
    costs = hi - (hi - lo) * rng.random((T, S, A))
    return FiniteMdp(transitions=P, costs=costs, initial_state=int(rng.integers(0, S)))


def random_ltv_system(
    T, n, m, rng=None, a_max=1.1, mu=0.5, ell=2.0, d=1.0, box=1e3, time_varying=True
):
    """Random LTV instance satisfying the bounded-cost and bounded-dynamics assumptions.

    ``Q_t``, ``R_t`` and the terminal matrix have spectra inside ``[mu, ell]``;
    ``||A_t|| <= a_max``; ``B_t`` has full column rank (or full row rank when
    ``m > n``) with singular values in ``[0.5, 1]``; ``||w_t|| <= d``.
    """
    rng = np.random.default_rng(rng)
    steps = T if time_varying else 1

    def spd(k, size):
        out = np.empty((size, k, k))
        for i in range(size):
            U, _ = np.linalg.qr(rng.standard_normal((k, k)))
            out[i] = U @ np.diag(rng.uniform(mu, ell, k)) @ U.T
            out[i] = 0.5 * (out[i] + out[i].T)
        return out

    A = np.empty((steps, n, n))
    B = np.empty((steps, n, m))
    for i in range(steps):
        M = rng.standard_normal((n, n))
        A[i] = M * (rng.uniform(0.3, a_max) / np.linalg.norm(M, 2))
        U, _ = np.linalg.qr(rng.standard_normal((n, n)))
        V, _ = np.linalg.qr(rng.standard_normal((m, m)))
        k = min(n, m)
        S = np.zeros((n, m))
        S[:k, :k] = np.diag(rng.uniform(0.5, 1.0, k))
        B[i] = U @ S @ V.T
    Q, R = spd(n, steps), spd(m, steps)
    if not time_varying:
        A, B, Q, R = (np.repeat(M, T, axis=0) for M in (A, B, Q, R))
    w = rng.standard_normal((T, n))
    w *= (d * rng.uniform(0.2, 1.0, (T, 1))) / np.linalg.norm(w, axis=1, keepdims=True)
    return LtvSystem(
        A=A, B=B, w=w, Q=Q, R=R, terminal=spd(n, 1)[0],
        action_low=-box * np.ones(m), action_high=box * np.ones(m), x0=np.zeros(n),
    )
