"""Plot mean OSPA-T curves written by ``lmbfuse simulate``.

Developer tooling, not part of the package; needs matplotlib.

    python scripts/plot_ospat.py out/s1_0.5 out/s1_1.0 out/s1_1.5 -o ospat.png
"""
import argparse
import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load(run_dir: Path):
    with open(run_dir / "ospat_curve.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    cfg = json.loads((run_dir / "config.json").read_text())
    return [int(r["k"]) for r in rows], [float(r["mean_ospat"]) for r in rows], cfg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+", type=Path, help="output directories of lmbfuse simulate")
    ap.add_argument("-o", "--output", default="ospat.png")
    ap.add_argument("--ymax", type=float, default=100.0)
    args = ap.parse_args()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for run in args.runs:
        k, curve, cfg = load(run)
        ax.plot(k, curve, label=f"scenario {cfg['scenario']}, sigma = {cfg['sigma']}")
    ax.set_xlabel("time step k")
    ax.set_ylabel("mean OSPA-T")
    ax.set_ylim(0, args.ymax)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
