"""Experiment orchestration: configs, metrics, sweeps and reports.

An experiment is described by a TOML document::

    id = "tracking-grey"
    seeds = [0, 1, 2]
    episodes = 1

    [env]
    builder = "tracking"        # tracking | nonstationary | random_finite |
    T = 200                     # random_deterministic | random_ltv | file

    [baseline]
    type = "mpc"                # mpc | tabular
    k = 10

    [advice]
    type = "constant"           # exact | perturbed | constant | stale |
    action = [5.0, 5.0]         # adversarial | riccati-noise

    [prop]
    mode = "grey"
    beta = 1.0

    [sweep]                     # optional
    param = "beta"
    grid = [0.1, 1.0, 10.0]

Random builders draw a fresh instance per seed, so seeds index instances as
well as episode randomness.
"""

import copy
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import envs
from .advice import (
    AdviceErrorSpec,
    advice_error,
    constant_advice,
    exact_advice,
    ltv_exact_advice,
    perturbed_advice,
    perturbed_riccati_advice,
)
from .baseline import MpcBaseline, TabularBaseline
from .errors import NonpositiveOptimum
from .oracle import backward_induction, offline_optimal_ltv
from .prop import PropConfig, run_episode

CSV_HEADER = [
    "config_id", "seed", "param", "param_value", "J_alg", "J_base", "J_star",
    "DR", "RoE", "eps", "mean_trust", "mean_abs_td",
]
SWEEP_PARAMS = ("lambda", "beta", "epsilon")


def dynamic_regret(J_alg, J_star):
    if not (math.isfinite(J_alg) and math.isfinite(J_star)):
        raise ValueError("costs must be finite")
    return J_alg - J_star


def ratio_of_expectations(J_alg, J_star):
    if J_star <= 0.0:
        raise NonpositiveOptimum(f"optimal cost {J_star} is not positive")
    return J_alg / J_star


@dataclass
class ExperimentConfig:
    id: str
    seeds: list
    env: dict
    baseline: dict
    advice: dict
    prop: dict
    episodes: int = 1
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.env.get("builder") not in BUILDERS:
            raise ValueError(f"unknown builder {self.env.get('builder')!r}; choose from {sorted(BUILDERS)}")
        if self.episodes < 1:
            raise ValueError("episodes must be positive")

    @classmethod
    def from_dict(cls, doc):
        return cls(
            id=str(doc.get("id", "experiment")),
            seeds=[int(s) for s in doc.get("seeds", [0])],
            env=dict(doc.get("env", {})),
            baseline=dict(doc.get("baseline", {})),
            advice=dict(doc.get("advice", {"type": "exact"})),
            prop=dict(doc.get("prop", {"mode": "grey"})),
            episodes=int(doc.get("episodes", 1)),
            sweep=dict(doc.get("sweep", {})),
            output=dict(doc.get("output", {})),
        )

    @classmethod
    def from_toml(cls, text):
        return cls.from_dict(tomllib.loads(text))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def with_seeds(self, seeds):
        out = copy.deepcopy(self)
        out.seeds = [int(s) for s in seeds]
        return out


@dataclass
class MetricsRow:
    config_id: str
    seed: int
    param: str
    param_value: float
    J_alg: float
    J_base: float
    J_star: float
    DR: float
    RoE: float
    eps: float
    mean_trust: float
    mean_abs_td: float

    def as_list(self):
        return [getattr(self, name) for name in CSV_HEADER]


# --- building blocks -----------------------------------------------------------


def _build_tracking(spec, seed):
    return envs.build_tracking_benchmark(int(spec.get("T", 200)), spec.get("trajectory", "rose"),
                                         box=float(spec.get("box", envs.TRACKING_BOX)))


def _build_nonstationary(spec, seed):
    T = int(spec.get("T", 400))
    return envs.build_nonstationary_benchmark(
        T, int(spec.get("shift_step", T // 2)),
        pre_mean=float(spec.get("pre_mean", 0.5)), post_mean=float(spec.get("post_mean", -0.5)),
        sigma=float(spec.get("sigma", 0.05)), rng=np.random.default_rng([seed, 1]),
        box=float(spec.get("box", envs.TRACKING_BOX)),
    )


def _build_random_finite(spec, seed):
    sizes = (int(spec.get("S", 4)), int(spec.get("A", 3)), int(spec.get("T", 8)))
    return envs.random_finite_mdp(sizes, float(spec.get("min_entry", 0.0)), rng=np.random.default_rng([seed, 1]))


def _build_random_deterministic(spec, seed):
    sizes = (int(spec.get("S", 4)), int(spec.get("A", 3)), int(spec.get("T", 8)))
    return envs.random_deterministic_mdp(sizes, rng=np.random.default_rng([seed, 1]))


def _build_random_ltv(spec, seed):
    return envs.random_ltv_system(
        int(spec.get("T", 30)), int(spec.get("n", 2)), int(spec.get("m", 2)),
        rng=np.random.default_rng([seed, 1]), d=float(spec.get("d", 1.0)),
        time_varying=bool(spec.get("time_varying", True)),
    )


def _build_file(spec, seed):
    with open(spec["path"]) as fh:
        return envs.env_from_json(fh.read())


BUILDERS = {
    "tracking": _build_tracking,
    "nonstationary": _build_nonstationary,
    "random_finite": _build_random_finite,
    "random_deterministic": _build_random_deterministic,
    "random_ltv": _build_random_ltv,
    "file": _build_file,
}


def build_env(spec, seed):
    return BUILDERS[spec["builder"]](spec, seed)


def build_baseline(spec, env):
    if isinstance(env, envs.FiniteMdp):
        return TabularBaseline.uniform(env)
    k = min(int(spec.get("k", 10)), env.horizon)
    terminal = spec.get("terminal", "default")
    if terminal == "identity":
        P = np.eye(env.state_dim)
    elif terminal == "default":
        P = None
    else:
        P = np.asarray(terminal, dtype=float)
    return MpcBaseline(env, k, P)


def build_advice(spec, env, reference, seed):
    kind = spec.get("type", "exact")
    rng = np.random.default_rng([seed, 2])
    if isinstance(env, envs.FiniteMdp):
        if kind == "exact":
            return exact_advice(reference)
        if kind == "perturbed":
            err = AdviceErrorSpec(eps=float(spec.get("eps", 0.0)), mode=spec.get("mode", "per-entry-noise"))
            return perturbed_advice(reference, err, rng)
        raise ValueError(f"advice type {kind!r} is not available for finite MDPs")
    if kind == "exact":
        return reference
    if kind == "constant":
        return constant_advice(env, spec.get("action", np.ones(env.action_dim)), float(spec.get("curvature", 1e-3)))
    if kind == "stale":
        w = np.full_like(env.w, float(spec.get("assumed_mean", 0.5)))
        return ltv_exact_advice(env, w)
    if kind == "adversarial":
        return ltv_exact_advice(env, -env.w)
    if kind in ("perturbed", "riccati-noise"):
        return perturbed_riccati_advice(env, float(spec.get("eps", 0.0)), rng)
    raise ValueError(f"unknown advice type {kind!r}")


def prop_config(spec):
    return PropConfig(
        mode=spec.get("mode", "grey"),
        lam=float(spec.get("lam", spec.get("lambda", 0.5))),
        beta=float(spec.get("beta", 1.0)),
        budget_cap=spec.get("budget_cap"),
        lipschitz=spec.get("lipschitz"),
    )


def _episode_rng(seed, episode):
    return np.random.default_rng([int(seed), int(episode), 3])


def _realized_error(env, advice, reference, logs):
    if isinstance(env, envs.FiniteMdp):
        return advice_error(advice, reference, np.inf)
    rho = [(np.array([log.states[t] for log in logs]), np.array([log.actions[t] for log in logs]))
           for t in range(env.horizon)]
    return advice_error(advice, reference, np.inf, rho)


def run_seed(config, seed, param="", param_value=float("nan")):
    """Metrics of one configuration on one seed."""
    env = build_env(config.env, seed)
    baseline = build_baseline(config.baseline, env)
    if isinstance(env, envs.FiniteMdp):
        reference = backward_induction(env)
        J_star = float(reference.v[0, env.initial_state])
    else:
        reference = ltv_exact_advice(env)
        J_star = offline_optimal_ltv(env).cost
    advice = build_advice(config.advice, env, reference, seed)
    cfg = prop_config(config.prop)
    base_cfg = PropConfig(mode="baseline-only")
    logs, base_costs = [], []
    for ep in range(config.episodes):
        logs.append(run_episode(env, baseline, advice, cfg, _episode_rng(seed, ep)))
        base_costs.append(run_episode(env, baseline, advice, base_cfg, _episode_rng(seed, ep)).total_cost)
    J_alg = float(np.mean([log.total_cost for log in logs]))
    J_base = float(np.mean(base_costs))
    trust = float(np.mean([log.trust.mean() for log in logs]))
    td = [np.abs(log.td[1:]) for log in logs if len(log.td) > 1]
    mean_abs_td = float(np.mean(np.concatenate(td))) if td else 0.0
    return MetricsRow(
        config_id=config.id, seed=int(seed), param=param, param_value=float(param_value),
        J_alg=J_alg, J_base=J_base, J_star=J_star,
        DR=dynamic_regret(J_alg, J_star), RoE=ratio_of_expectations(J_alg, J_star),
        eps=float(_realized_error(env, advice, reference, logs)),
        mean_trust=trust, mean_abs_td=mean_abs_td,
    )


def _sort_key(row):
    return (row.config_id, row.param, row.param_value, row.seed)


def run_experiment(config, workers=1, partial_path=None):
    """One row per seed, sorted deterministically.

    If a seed fails, the rows finished so far are written to ``partial_path``
    (when given) before the error propagates.
    """
    jobs = [(config, s) for s in config.seeds]
    return sorted(_map(_run_seed_job, jobs, workers, partial_path), key=_sort_key)


def _run_seed_job(job):
    config, seed, *tag = job
    return run_seed(config, seed, *tag)


def _map(fn, jobs, workers, partial_path=None):
    done = []
    try:
        if workers is None or workers <= 1 or len(jobs) <= 1:
            for job in jobs:
                done.append(fn(job))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for fut in as_completed([pool.submit(fn, job) for job in jobs]):
                    done.append(fut.result())
    except Exception:
        if partial_path is not None:
            metrics_to_csv(done, partial_path)
        raise
    return done


def apply_param(config, param, value):
    """Copy of ``config`` with one hyper-parameter replaced."""
    out = copy.deepcopy(config)
    if param == "lambda":
        out.prop["lam"] = float(value)
        out.prop.pop("lambda", None)
    elif param == "beta":
        out.prop["beta"] = float(value)
    elif param == "epsilon":
        out.advice["eps"] = float(value)
    else:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    return out


def sweep(config, param, grid, workers=1, partial_path=None):
    """Rows for every ``(grid value, seed)`` pair, tagged with the parameter value."""
    if not len(grid):
        raise ValueError("grid must be nonempty")
    jobs = [(apply_param(config, param, v), s, param, float(v)) for v in grid for s in config.seeds]
    return sorted(_map(_run_seed_job, jobs, workers, partial_path), key=_sort_key)


def format_float(v):
    """Shortest round-trip representation."""
    return repr(float(v))


def metrics_to_csv(rows, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in sorted(rows, key=_sort_key):
        writer.writerow([
            v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else format_float(v))
            for v in row.as_list()
        ])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def trust_trace(log):
    """Per-step trust coefficients and their mean."""
    trust = np.asarray(log.trust, dtype=float)
    return trust, float(trust.mean())


@dataclass
class ShiftReport:
    shift_step: int
    trust_pre: float
    trust_post: float
    abs_td_pre: float
    abs_td_post: float
    recovery_step: int | None

    def to_dict(self):
        return dict(self.__dict__)


def nonstationary_report(log, shift_step, baseline_log=None, window=10):
    """Compare trust and TD magnitude before and after a distribution shift.

    The recovery step is the first step whose trailing ``window``-step cost,
    over a window lying entirely after the shift, is within 10% of the
    baseline's over the same window.
    """
    T = log.horizon
    if not 0 < shift_step < T:
        raise ValueError("shift_step must lie strictly inside the horizon")
    td = np.abs(log.td)
    pre_td = td[1:shift_step]
    recovery = None
    if baseline_log is not None:
        c, cb = np.cumsum(log.cost), np.cumsum(baseline_log.cost)
        for t in range(shift_step + window - 1, T):
            lo = t - window
            if c[t] - c[lo] <= 1.1 * (cb[t] - cb[lo]):
                recovery = t
                break
    return ShiftReport(
        shift_step=int(shift_step),
        trust_pre=float(log.trust[:shift_step].mean()),
        trust_post=float(log.trust[shift_step:].mean()),
        abs_td_pre=float(pre_td.mean()) if len(pre_td) else 0.0,
        abs_td_post=float(td[shift_step:].mean()),
        recovery_step=recovery,
    )
