"""Command line entry point ``prop-lab``.

Subcommands::

    prop-lab run     --config exp.toml [--seed N] [--out results.csv]
    prop-lab sweep   --config exp.toml [--param beta --grid 0.1,1,10] [--out sweep.csv]
    prop-lab certify --env mdp.json [--baseline pol.json] [--out cert.json]
    prop-lab oracle  --env sys.json [--out qstar.json]
    prop-lab bench   [--T 200] [--k 10] [--seed 0] [--out bench.csv]

Exit status is 0 on success, 2 when a certificate fails and 1 on errors.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import envs
from .advice import constant_advice, ltv_exact_advice
from .baseline import MpcBaseline, TabularBaseline, check_assumptions
from .errors import PropLabError
from .harness import ExperimentConfig, metrics_to_csv, run_experiment, sweep
from .oracle import backward_induction, offline_optimal_ltv
from .prop import PropConfig, run_episode
from .robustness import certify_contraction, certify_wasserstein_robustness

EXIT_OK, EXIT_ERROR, EXIT_CERT_FAIL = 0, 1, 2


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_config(args):
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = config.with_seeds([args.seed])
    return config


def cmd_run(args):
    config = _load_config(args)
    out = args.out or config.output.get("csv")
    rows = run_experiment(config, workers=args.workers, partial_path=out)
    _emit(metrics_to_csv(rows), out)
    return EXIT_OK


def cmd_sweep(args):
    config = _load_config(args)
    param = args.param or config.sweep.get("param")
    if args.grid:
        grid = [float(v) for v in args.grid.split(",")]
    else:
        grid = [float(v) for v in config.sweep.get("grid", [])]
    if not param or not grid:
        raise ValueError("sweep needs a parameter and a grid (flags or [sweep] table)")
    out = args.out or config.output.get("csv")
    rows = sweep(config, param, grid, workers=args.workers, partial_path=out)
    _emit(metrics_to_csv(rows), out)
    return EXIT_OK


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def cmd_certify(args):
    env = envs.env_from_dict(_read_json(args.env))
    if isinstance(env, envs.FiniteMdp):
        if args.baseline:
            baseline = TabularBaseline.from_dict(_read_json(args.baseline))
        else:
            baseline = TabularBaseline.uniform(env)
        tv = certify_contraction(env, baseline, args.max_gap)
        w1 = certify_wasserstein_robustness(env, baseline, args.max_gap)
        doc = {"contraction": tv.to_dict(), "wasserstein": w1.to_dict(), "pass": tv.passed and w1.passed}
        passed = doc["pass"]
    else:
        report = check_assumptions(env, args.lambda_bar)
        doc = report.to_dict()
        doc["pass"] = passed = report.passed
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK if passed else EXIT_CERT_FAIL


def cmd_oracle(args):
    env = envs.env_from_dict(_read_json(args.env))
    if isinstance(env, envs.FiniteMdp):
        text = backward_induction(env).to_json()
    else:
        opt = offline_optimal_ltv(env)
        text = json.dumps({
            "type": "offline_optimum", "J_star": opt.cost,
            "states": opt.states.tolist(), "actions": opt.actions.tolist(),
            "kkt_residual": opt.kkt_residual,
        })
    _emit(text, args.out)
    return EXIT_OK


def cmd_bench(args):
    """Tracking benchmark: baseline, exact advice and constant advice under PROP."""
    sys_ = envs.build_tracking_benchmark(args.T, args.trajectory)
    J_star = offline_optimal_ltv(sys_).cost
    mpc = MpcBaseline(sys_, min(args.k, args.T))
    exact = ltv_exact_advice(sys_)
    bad = constant_advice(sys_, np.full(sys_.action_dim, 5.0))
    cases = [
        ("baseline-only", exact, PropConfig(mode="baseline-only")),
        ("exact/advice-only", exact, PropConfig(mode="advice-only")),
        ("exact/grey", exact, PropConfig(mode="grey", beta=args.beta)),
        ("constant/advice-only", bad, PropConfig(mode="advice-only")),
        ("constant/black-0.5", bad, PropConfig(mode="black", lam=0.5)),
        ("constant/grey", bad, PropConfig(mode="grey", beta=args.beta)),
    ]
    lines = ["case,J,RoE,mean_trust"]
    for name, advice, cfg in cases:
        log = run_episode(sys_, mpc, advice, cfg, args.seed)
        lines.append(f"{name},{log.total_cost!r},{log.total_cost / J_star!r},{log.trust.mean()!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="prop-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", cmd_run), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int, default=1)
        if name == "sweep":
            p.add_argument("--param", choices=("lambda", "beta", "epsilon"))
            p.add_argument("--grid", help="comma-separated values")
        p.set_defaults(func=fn)

    p = sub.add_parser("certify")
    p.add_argument("--env", required=True)
    p.add_argument("--baseline")
    p.add_argument("--max-gap", type=int)
    p.add_argument("--lambda-bar", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("oracle")
    p.add_argument("--env", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench")
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--trajectory", default="rose", choices=sorted(envs.CURVES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR)
    try:
        return args.func(args)
    except (PropLabError, ValueError, OSError, KeyError) as exc:
        print(f"prop-lab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
