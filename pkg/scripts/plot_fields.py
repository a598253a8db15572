"""Quick-look plots from the CSV output of ``pdcrack run``.

    python scripts/plot_fields.py out/run            # last snapshot
    python scripts/plot_fields.py out/run --snap 3

Writes ``fields.png`` (displacement magnitude and u2 on the particles) and
``history.png`` (energies and crack tip over time) into the run directory.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_csv(path):
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--snap", type=int, help="snapshot index (default: last)")
    args = ap.parse_args()
    run = args.run_dir

    snaps = sorted((run / "snapshots").glob("snap_*.csv"))
    if not snaps:
        raise SystemExit(f"no snapshots under {run}; rerun with write_snapshots = true")
    snap = read_csv(snaps[-1] if args.snap is None else run / "snapshots" / f"snap_{args.snap:04d}.csv")

    fig, axes = plt.subplots(1, 2, figsize=(12, 3.6), constrained_layout=True)
    mag = np.hypot(snap["u1"], snap["u2"])
    for ax, val, title in ((axes[0], mag, "|u|"), (axes[1], snap["u2"], "u2")):
        sc = ax.scatter(snap["x1"], snap["x2"], c=val, s=2, cmap="viridis", marker="s", linewidths=0)
        ax.set_aspect("equal")
        ax.set_title(title)
        fig.colorbar(sc, ax=ax, shrink=0.8)
    fig.savefig(run / "fields.png", dpi=150)

    en = read_csv(run / "energies.csv")
    tip = read_csv(run / "crack_tip.csv")
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(11, 3.6), constrained_layout=True)
    for key in ("KE", "PD", "work"):
        a0.plot(en["t"], en[key], label=key)
    a0.plot(en["t"], en["KE"] + en["PD"] - en["work"], "k--", label="KE + PD - work")
    a0.set_xlabel("t")
    a0.legend()
    a1.plot(tip["t"], tip["tip"], "o-")
    a1.set_xlabel("t")
    a1.set_ylabel("crack tip x1")
    fig.savefig(run / "history.png", dpi=150)
    print(f"wrote {run / 'fields.png'} and {run / 'history.png'}")


if __name__ == "__main__":
    main()
