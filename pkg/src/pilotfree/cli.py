"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (ExperimentConfig, emit_results, parse_config, pilot_overhead,
                      snr_sweep)
from .riccati import (care_value_iteration, default_sigma_bar, load_kernel_table,
                      save_kernel_table, stabilizing_check)


def _load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg = parse_config(text)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.pipeline is not None:
        overrides["pipeline"] = args.pipeline
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    result = snr_sweep(cfg, workers=args.workers)
    paths = emit_results(result, args.out)
    for row in result.summary:
        print(f"snr {row.snr_db:+6.1f} dB  nmse {row.nmse_mean:.4e}  "
              f"energy {row.energy_mean:.4e}  diverged {row.diverged_rate:.2f}")
    print(f"wrote {paths['slots']}, {paths['summary']}, {paths['manifest']}")
    return 0


def _cmd_solve_care(args) -> int:
    cfg = _load_config(args)
    model = cfg.plant_model()
    sigma_bar = cfg.sigma_bar_scale * default_sigma_bar(cfg.channel_process(),
                                                        cfg.n_sub)
    table, iters = care_value_iteration(model, cfg.quant_grid(), cfg.alpha,
                                        sigma_bar)
    try:
        save_kernel_table(table, args.table)
    except OSError as exc:
        print(f"error: cannot write {args.table}: {exc}", file=sys.stderr)
        return 3
    print(f"solved {table.grid.n_bins} kernels in {iters} iterations -> {args.table}")
    return 0


def _cmd_check_stability(args) -> int:
    cfg = _load_config(args)
    try:
        table = load_kernel_table(args.table, cfg.quant_grid())
    except OSError as exc:
        print(f"error: cannot read {args.table}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    radii, flagged = stabilizing_check(table, cfg.plant_model())
    print(f"bins {table.grid.n_bins}  max spectral radius {radii.max():.6f}  "
          f"flagged {len(flagged)}")
    if len(flagged):
        worst = flagged[np.argsort(radii[flagged])[::-1]][:10]
        for idx in worst:
            print(f"  bin {idx}: radius {radii[idx]:.6f}")
        return 2
    return 0


def _cmd_pilot_overhead(args) -> int:
    cfg = _load_config(args)
    rows = pilot_overhead(cfg)
    try:
        import os
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "pilot_overhead.csv")
        with open(path, "w", newline="") as fh:
            fh.write("slot,scheme,cum_power,cum_db\n")
            for slot, scheme, power, db in rows:
                fh.write(f"{slot},{scheme},{power:.17g},{db:.17g}\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    last_pilot = rows[-2]
    print(f"pilot-aided cumulative power at slot {last_pilot[0]}: "
          f"{last_pilot[3]:.2f} dB; pilot-free: 0")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilotfree",
                                     description="pilot-free control simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="config file (key = value)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--pipeline", choices=("full", "effective"), default=None)
        if needs_out:
            p.add_argument("--out", default="results", help="output directory")

    p = sub.add_parser("simulate", help="run one configuration, full outputs")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="run the SNR grid")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("solve-care", help="solve the offline kernel table")
    common(p, needs_out=False)
    p.add_argument("--table", required=True, help="output .npz path")
    p.set_defaults(func=_cmd_solve_care)

    p = sub.add_parser("check-stability", help="audit a kernel table")
    common(p, needs_out=False)
    p.add_argument("--table", required=True, help=".npz table to audit")
    p.set_defaults(func=_cmd_check_stability)

    p = sub.add_parser("pilot-overhead", help="cumulative pilot power series")
    common(p)
    p.set_defaults(func=_cmd_pilot_overhead)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
