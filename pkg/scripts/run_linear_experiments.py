#!/usr/bin/env python3
"""Reproduce the headline linear-OFDM comparisons at desk scale.

Runs one SNR sweep per channel predictor (shared controller) and one per
controller (shared noise axis), writing each summary CSV under --out.
Plot with scripts/plot_results.py.
"""

import argparse
import os
import time

from pilotfree import (care_value_iteration, default_linear_ofdm_config,
                       default_sigma_bar, emit_results)
from pilotfree.harness import _prepare_runtime, measure_signal_power, snr_sweep

PREDICTORS = ("kf", "ls", "blind-svd", "interpolated-ls", "pilot-ls")
CONTROLLERS = ("care", "pid", "lqr")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/linear")
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=20260808)
    args = parser.parse_args()

    base = default_linear_ofdm_config(trials=args.trials, seed=args.seed)
    print("solving the offline kernel table ...")
    t0 = time.time()
    sigma_bar = default_sigma_bar(base.channel_process(), base.n_sub)
    table, iters = care_value_iteration(base.plant_model(), base.quant_grid(),
                                        base.alpha, sigma_bar)
    print(f"  {iters} iterations, {time.time() - t0:.1f}s")

    power = measure_signal_power(base, _prepare_runtime(base, table))
    print(f"calibrated received signal power: {power:.4f}")

    for kind in PREDICTORS:
        cfg = default_linear_ofdm_config(predictor=kind, trials=args.trials,
                                         seed=args.seed)
        t0 = time.time()
        result = snr_sweep(cfg, table=table, signal_power=power)
        paths = emit_results(result, os.path.join(args.out, f"predictor_{kind}"))
        print(f"predictor {kind:16s} ({time.time() - t0:5.1f}s) -> "
              f"{paths['summary']}")

    for kind in CONTROLLERS:
        cfg = default_linear_ofdm_config(controller=kind, trials=args.trials,
                                         seed=args.seed)
        t0 = time.time()
        result = snr_sweep(cfg, table=table, signal_power=power)
        paths = emit_results(result, os.path.join(args.out, f"controller_{kind}"))
        print(f"controller {kind:15s} ({time.time() - t0:5.1f}s) -> "
              f"{paths['summary']}")


if __name__ == "__main__":
    main()
