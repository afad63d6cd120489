"""Trading consistency for robustness on the tracking benchmark.

A 2-D double integrator follows a rose curve.  The robust baseline is MPC with
a 10-step lookahead and no knowledge of future disturbances.  Two kinds of
advice are compared: exact action values (computed with the true future
reference) and a constant advisor that always pushes the actuators to (5, 5).

The black-box sweep shows the tradeoff knob lam: with good advice more trust
helps, with bad advice it hurts.  The grey-box runs show that measured TD
errors let PROP keep good advice and discard bad advice without choosing lam.

Run with ``python demos/tracking_tradeoff.py``.
"""

import numpy as np

from proplab import (
    MpcBaseline,
    PropConfig,
    build_tracking_benchmark,
    constant_advice,
    ltv_exact_advice,
    offline_optimal_ltv,
    run_episode,
)


def main(T=200, k=10):
    sys = build_tracking_benchmark(T)
    J_star = offline_optimal_ltv(sys).cost
    mpc = MpcBaseline(sys, k)
    advisors = {
        "exact advice": ltv_exact_advice(sys),
        "constant advice": constant_advice(sys, np.array([5.0, 5.0])),
    }
    print(f"tracking benchmark, T = {T}, offline optimum J* = {J_star:.3f}")
    J_base = run_episode(sys, mpc, advisors["exact advice"], PropConfig(mode="baseline-only")).total_cost
    print(f"MPC_{k} alone: RoE = {J_base / J_star:.2f}\n")

    print("black-box PROP, ratio of expectations per lam")
    print("lam    " + "  ".join(f"{name:>16}" for name in advisors))
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        cells = []
        for adv in advisors.values():
            log = run_episode(sys, mpc, adv, PropConfig(mode="black", lam=lam))
            cells.append(f"{log.total_cost / J_star:16.2f}")
        print(f"{lam:<5}  " + "  ".join(cells))

    print("\ngrey-box PROP, RoE and mean trust in the last quarter")
    for beta in (0.1, 1.0, 10.0):
        cells = []
        for adv in advisors.values():
            log = run_episode(sys, mpc, adv, PropConfig(mode="grey", beta=beta))
            cells.append(f"{log.total_cost / J_star:8.2f} / {log.trust[3 * T // 4:].mean():.2f}")
        print(f"beta = {beta:<5} " + "  ".join(f"{c:>16}" for c in cells))


if __name__ == "__main__":
    main()
