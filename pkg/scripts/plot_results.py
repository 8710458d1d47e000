#!/usr/bin/env python3
"""Plot summary CSVs produced by the sweep commands.

Usage: plot_results.py summary1.csv [summary2.csv ...] [-o out.png]

Each file contributes one curve per metric, labelled predictor/controller.
CSV is the contract; this script is a convenience viewer.
"""

import argparse
import csv
import sys


def load(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    label = f"{rows[0]['predictor']}/{rows[0]['controller']}" if rows else path
    snr = [float(r["snr_db"]) for r in rows]
    nmse = [float(r["nmse_mean"]) for r in rows]
    energy = [float(r["energy_mean"]) for r in rows]
    return label, snr, nmse, energy


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("summaries", nargs="+")
    parser.add_argument("-o", "--out", default="sweep.png")
    args = parser.parse_args(argv)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_nmse, ax_energy) = plt.subplots(1, 2, figsize=(11, 4))
    for path in args.summaries:
        label, snr, nmse, energy = load(path)
        ax_nmse.semilogy(snr, nmse, marker="o", label=label)
        ax_energy.semilogy(snr, energy, marker="s", label=label)
    ax_nmse.set_xlabel("received SNR [dB]")
    ax_nmse.set_ylabel("channel prediction NMSE")
    ax_energy.set_xlabel("received SNR [dB]")
    ax_energy.set_ylabel("average state energy")
    for ax in (ax_nmse, ax_energy):
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
