"""Command line entry point: ``pdcrack {run,local,sweep,compare,calibrate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .dynamics import UnstableError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    upd_run = {"threads": args.threads}
    if args.out:
        upd_run["output_dir"] = str(args.out)
    cfg = cfg.replace(run=upd_run)
    if args.snapshot_every is not None:
        cfg = cfg.replace(time={"snapshot_every": args.snapshot_every})
    return cfg


def cmd_calibrate(cfg: RunConfig, args) -> dict:
    m = cfg.material.build(cfg.discretization.horizon)
    rep = m.calibration.as_dict()
    rep.update({"profile": m.profile.kind, "params": list(m.profile.params), "r_c": m.r_c, "r_plus": m.r_plus})
    print(f"lambda = {rep['lambda']:.12g}")
    print(f"mu     = {rep['mu']:.12g}")
    print(f"G_c    = {rep['G_c']:.12g}")
    print(f"M      = {rep['M']:.12g}")
    return rep


def cmd_run(cfg: RunConfig, args) -> dict:
    from .harness import run

    res = run(cfg, out_dir=cfg.run.output_dir, keep_fields=False)
    print(f"horizon {res.horizon:g}: {res.grid.n} particles, dt {res.dt:.4g}, "
          f"{len(res.times)} snapshots, final tip {res.tips[-1]:.4f}")
    return res.metadata


def cmd_local(cfg: RunConfig, args) -> dict:
    from .harness import local_problem, reference_tensor, write_snapshot_csv
    from .local import run_local

    prob = local_problem(cfg, reference_tensor(cfg))
    times, us, vs = run_local(prob, cfg.time.T, cfg.time.snapshot_every, cfg.local.dt_safety)
    out = Path(cfg.run.output_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    centers = prob.cell_centers()
    for k, (u, v) in enumerate(zip(us, vs)):
        write_snapshot_csv(out / "snapshots" / f"snap_{k:04d}.csv", centers, prob.evaluate(u, centers),
                           prob.evaluate(v, centers))
    meta = {"spacing": prob.spacing, "n_nodes": prob.n_nodes, "cfl_dt": prob.cfl_dt, "times": list(times)}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    print(f"local reference: {prob.n_nodes} nodes, {len(times)} snapshots")
    return meta


def cmd_sweep(cfg: RunConfig, args) -> dict:
    from .harness import sweep

    report, _ = sweep(cfg, out_dir=cfg.run.output_dir, with_local=args.with_local)
    for row in report["cauchy"]["table"]:
        print(f"d({row['eps_coarse']:g}, {row['eps_fine']:g}) = {row['sup_diff']:.4e}")
    print(f"max ||u|| spread across levels: {report['max_u_l2_spread']:.3%}")
    return report


def cmd_compare(cfg: RunConfig, args) -> dict:
    from .harness import local_comparison, run

    results = [run(cfg, e, keep_fields=True) for e in cfg.discretization.horizons]
    rep = local_comparison(cfg, results)
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison_report.json").write_text(json.dumps(rep, indent=2))
    for e, err in zip(cfg.discretization.horizons, rep["errors"]):
        print(f"eps {e:g}: sup relative L2 error {err:.4%}")
    return rep


COMMANDS = {
    "run": cmd_run,
    "local": cmd_local,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdcrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("-c", "--config", type=Path, help="TOML run configuration")
        sp.add_argument("-o", "--out", type=Path, help="output directory")
        sp.add_argument("-j", "--threads", type=int, default=1, help="worker processes for sweep levels")
        sp.add_argument("--snapshot-every", type=float, help="snapshot interval override")
        if name == "sweep":
            sp.add_argument("--with-local", action="store_true", help="also compare every level to the local reference")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        COMMANDS[args.command](cfg, args)
    except ValueError as exc:  # ConfigError, GeometryError, ProfileError, CFLError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except UnstableError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
