"""Throughput comparison of the compiled and pure-numpy kernel paths.

Run as ``python -m vbam.benchmark [--steps N]``.  Each row times the same
chain on both backends (identical seeds, identical trajectories up to float
rounding) and reports steps per second.  Compile time is excluded by a
short warm-up run.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._accel import HAVE_NUMBA
from .mcmc import AdaptationConfig, run_chain
from .targets import banana_target, gaussian_mmt_target, strip_target


def _time_run(scheme, target, steps, cfg, backend, seed) -> float:
    run_chain(np.random.default_rng(seed), scheme, target, 64, cfg, backend=backend)
    started = time.perf_counter()
    run_chain(np.random.default_rng(seed), scheme, target, steps, cfg, backend=backend)
    return time.perf_counter() - started


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--steps", type=int, default=20_000, help="steps per timed numpy run"
    )
    parser.add_argument(
        "--numba-steps",
        type=int,
        default=0,
        help="steps per timed numba run (default: 10x --steps)",
    )
    args = parser.parse_args(argv)
    np_steps = args.steps
    nb_steps = args.numba_steps or 10 * np_steps

    cases = [
        ("vbam", strip_target(), AdaptationConfig(scheme="vbam")),
        ("am_haario", strip_target(), AdaptationConfig(scheme="am_haario")),
        (
            "vbam",
            banana_target(20, 0.1),
            AdaptationConfig(scheme="vbam", rm_enabled=True),
        ),
        (
            "am_rr",
            gaussian_mmt_target(np.random.default_rng(0), 25),
            AdaptationConfig(scheme="am_rr"),
        ),
    ]

    print(f"{'scheme':<10} {'target':<14} {'numpy steps/s':>14} {'numba steps/s':>14} {'speedup':>8}")
    for scheme, target, cfg in cases:
        dt_np = _time_run(scheme, target, np_steps, cfg, "numpy", seed=1)
        rate_np = np_steps / dt_np
        if HAVE_NUMBA:
            dt_nb = _time_run(scheme, target, nb_steps, cfg, "numba", seed=1)
            rate_nb = nb_steps / dt_nb
            print(
                f"{scheme:<10} {target.name:<14} {rate_np:>14.0f} {rate_nb:>14.0f}"
                f" {rate_nb / rate_np:>7.1f}x"
            )
        else:
            print(f"{scheme:<10} {target.name:<14} {rate_np:>14.0f} {'n/a':>14} {'':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
