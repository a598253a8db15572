"""Run both committed sweeps and write their reports plus per-level CSV output.

    python scripts/run_sweep.py            # pre-fracture (with local reference) and fracture
    python scripts/run_sweep.py --only fracture
"""

import argparse
import csv
import json
import logging
from pathlib import Path

from pdcrack.config import load_config
from pdcrack.harness import DIAG_FIELDS, sweep

ROOT = Path(__file__).resolve().parents[1]
SWEEPS = {
    "prefracture": (ROOT / "configs" / "prefracture.toml", True),
    "fracture": (ROOT / "configs" / "fracture.toml", False),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--only", choices=sorted(SWEEPS))
    ap.add_argument("--out", type=Path, default=ROOT / "out")
    ap.add_argument("-j", "--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    for name, (path, with_local) in SWEEPS.items():
        if args.only and name != args.only:
            continue
        cfg = load_config(path).replace(run={"threads": args.threads})
        out = args.out / name
        report, results = sweep(cfg, out_dir=out, with_local=with_local)
        for r in results:
            level = out / f"eps_{r.horizon:g}"
            level.mkdir(parents=True, exist_ok=True)
            r.tracker.write(level)
            with (level / "diagnostics.csv").open("w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=DIAG_FIELDS)
                w.writeheader()
                w.writerows({k: repr(float(v)) for k, v in d.items()} for d in r.diagnostics)
        print(f"== {name}")
        print(json.dumps({k: report[k] for k in ("horizons", "max_u_l2", "max_u_l2_spread", "process_zone")}, indent=2))
        for row in report["cauchy"]["table"]:
            print(f"d({row['eps_coarse']:g}, {row['eps_fine']:g}) = {row['sup_diff']:.4e}")
        if "local" in report:
            print("local errors:", ", ".join(f"{e:.2%}" for e in report["local"]["errors"]))


if __name__ == "__main__":
    main()
