#!/usr/bin/env python3
"""Plot ensemble CSV output: mean observable trace over the per-time histogram.

Usage: plot_ensemble.py ensemble.csv [out.png]
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    path = sys.argv[1]
    out = sys.argv[2] if len(sys.argv) > 2 else "ensemble.png"

    with open(path) as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    t = data[:, 0]
    mean0 = data[:, header.index("mean_obs0")]
    hist_cols = [i for i, h in enumerate(header) if h.startswith("hist_")]

    fig, ax = plt.subplots(figsize=(8, 4))
    if hist_cols:
        hist = data[:, hist_cols].T  # bins x time, includes overflow rows
        hist = hist[1:-1]
        ax.imshow(
            hist,
            origin="lower",
            aspect="auto",
            extent=[t[0], t[-1], -2, 2],
            cmap="Greys",
            norm=matplotlib.colors.PowerNorm(0.4),
        )
    ax.plot(t, mean0, "r-", lw=1.5, label="mean")
    ax.set_xlabel("t")
    ax.set_ylabel("observable")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
