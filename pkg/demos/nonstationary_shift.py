"""Watching trust collapse after a distribution shift.

The tracking disturbances are Gaussian with mean 0.5 until step 200 and mean
-0.5 afterwards.  The advice is exact for a world where the mean stays 0.5,
so it is excellent before the shift and stale after it.  Grey-box PROP
notices the change through its TD errors and falls back on MPC.

Run with ``python demos/nonstationary_shift.py``.
"""

import numpy as np

from proplab import (
    MpcBaseline,
    PropConfig,
    build_nonstationary_benchmark,
    ltv_exact_advice,
    nonstationary_report,
    run_episode,
)


def main(T=400, shift=200, seed=0):
    sys = build_nonstationary_benchmark(T, shift, rng=seed)
    mpc = MpcBaseline(sys, 10)
    stale = ltv_exact_advice(sys, np.full_like(sys.w, 0.5))
    log = run_episode(sys, mpc, stale, PropConfig(mode="grey", beta=1.0))
    base = run_episode(sys, mpc, stale, PropConfig(mode="baseline-only"))
    rep = nonstationary_report(log, shift, base)

    print(f"shift at step {shift} of {T}")
    print(f"mean trust      before {rep.trust_pre:.3f}   after {rep.trust_post:.3f}")
    print(f"mean |TD error| before {rep.abs_td_pre:.3f}   after {rep.abs_td_post:.3f}")
    print(f"recovery step (windowed cost within 10% of MPC): {rep.recovery_step}")
    print("\ntrust averaged over blocks of 25 steps")
    for start in range(0, T, 25):
        bar = "#" * int(round(40 * log.trust[start:start + 25].mean()))
        print(f"{start:4d}  {bar}")


if __name__ == "__main__":
    main()
