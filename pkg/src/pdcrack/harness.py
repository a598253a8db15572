"""Runs, diagnostics and horizon-convergence sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.spatial import cKDTree

from .config import ConfigError, RunConfig
from .dynamics import Integrator, UnstableError, kinetic_energy, l2_norm, lattice_tensor, stable_dt
from .fracture import CrackTracker
from .geometry import BondTable, ParticleGrid, build_bonds, build_grid, rigid_modes
from .local import LocalProblem, compare_fields, run_local
from .material import MaterialModel

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def peridynamic_energy(S_lattice: np.ndarray, bonds: BondTable, m: MaterialModel, only_below=None) -> float:
    """Discrete double integral of ``|y-x| W(S)`` over every ordered pair.

    ``only_below`` restricts the sum to bonds with ``|S|`` below the given
    per-offset strain (the bulk elastic part when passed ``S_c``).
    """
    V = bonds.grid.volume
    hval = m.profile.h(bonds.length * S_lattice * S_lattice)
    keep = bonds.mask
    if only_below is not None:
        keep = keep & (np.abs(S_lattice) < only_below)
    per_offset = np.where(keep, hval, 0.0).sum(axis=(0, 1))
    w = bonds.influence * bonds.pv * V * V / m.eps3_omega
    return float(per_offset @ w)


def symmetry_defect(u: np.ndarray, grid: ParticleGrid) -> float:
    """Relative L2 distance of ``u`` from (u1 even, u2 odd) about ``x2 = 0``."""
    mir = grid.mirror
    d = np.stack([u[:, 0] - u[mir, 0], u[:, 1] + u[mir, 1]], axis=1)
    nrm = float(np.sqrt(np.sum(u * u)))
    if nrm == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(d * d))) / nrm


def traction_pairing(grid: ParticleGrid, load, eps: float, w, t: float) -> float:
    """Discrete pairing ``sum_x b(x, t) . w(x) V`` of the layer force with a test field."""
    from .dynamics import body_force

    b = body_force(t, grid, load, eps)
    return float(np.sum(b * w(grid.positions))) * grid.volume


def boundary_pairing(geom, load, w, t: float) -> float:
    """``int g . w`` over the loaded edges, where the traction is ``+-g e2`` on ``x2 = +-b/2``."""
    hb, th = geom.b / 2, geom.corner_radius

    def integrand(x1):
        top = w(np.array([[x1, hb]]))[0, 1]
        bot = w(np.array([[x1, -hb]]))[0, 1]
        return float(load.g(x1, t, geom.a, th)) * (top - bot)

    val, _ = quad(integrand, th, geom.a - th, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def traction_convergence(cfg: RunConfig, fields, horizons, t: float | None = None) -> dict:
    """Relative gap between layer and boundary pairings for each test field and horizon."""
    t = cfg.load.ramp_time if t is None else t
    rows = []
    for eps in horizons:
        grid = build_grid(cfg.geometry, cfg.discretization.spacing(eps), eps, cfg.material.density)
        rows.append([traction_pairing(grid, cfg.load, eps, w, t) for w in fields])
    exact = [boundary_pairing(cfg.geometry, cfg.load, w, t) for w in fields]
    err = np.abs(np.array(rows) - exact) / np.abs(exact)
    return {
        "horizons": list(horizons),
        "exact": exact,
        "relative_error": err.T.tolist(),  # one row per field
        "decreasing": bool(np.all(np.diff(err, axis=0) < 0)),
    }


DIAG_FIELDS = ["t", "KE", "PD", "work", "griffith", "elastic_proxy", "symmetry_defect", "u_l2", "tip"]


@dataclass
class RunResult:
    horizon: float
    grid: ParticleGrid
    bonds: BondTable
    material: MaterialModel
    dt: float
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    tracker: CrackTracker | None = None
    status: str = "ok"
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([d[name] for d in self.diagnostics])

    @property
    def tips(self) -> np.ndarray:
        return np.array([l for _, l in self.tracker.state.tip_history])

    def max_norm(self) -> float:
        return max(d["u_l2"] for d in self.diagnostics)


def steps_per_snapshot(snapshot_every: float, dt_max: float) -> tuple[int, float]:
    sub = max(1, math.ceil(snapshot_every / dt_max * (1 - 1e-12)))
    return sub, snapshot_every / sub


class _Writer:
    def __init__(self, out_dir: Path | None, write_snapshots: bool):
        self.out = out_dir
        self.snap = write_snapshots
        if out_dir is None:
            return
        out_dir.mkdir(parents=True, exist_ok=True)
        if write_snapshots:
            (out_dir / "snapshots").mkdir(exist_ok=True)
            (out_dir / "opening").mkdir(exist_ok=True)
        self._energy = (out_dir / "energies.csv").open("w", newline="")
        self._diag = (out_dir / "diagnostics.csv").open("w", newline="")
        self._ew = csv.writer(self._energy)
        self._dw = csv.writer(self._diag)
        self._ew.writerow(["t", "KE", "PD", "work"])
        self._dw.writerow(DIAG_FIELDS)

    def snapshot(self, idx: int, grid: ParticleGrid, u, v, diag: dict, opening) -> None:
        if self.out is None:
            return
        self._ew.writerow([_fmt(diag[k]) for k in ("t", "KE", "PD", "work")])
        self._dw.writerow([_fmt(diag[k]) for k in DIAG_FIELDS])
        self._energy.flush()
        self._diag.flush()
        if not self.snap:
            return
        write_snapshot_csv(self.out / "snapshots" / f"snap_{idx:04d}.csv", grid.positions, u, v)
        with (self.out / "opening" / f"opening_{idx:04d}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "jump"])
            for x, j in zip(*opening):
                w.writerow([_fmt(x), _fmt(j)])

    def close(self):
        if self.out is not None:
            self._energy.close()
            self._diag.close()


def _fmt(x) -> str:
    return repr(float(x))


def write_snapshot_csv(path, positions, u, v=None) -> None:
    v = np.zeros_like(u) if v is None else v
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "u1", "u2", "v1", "v2"])
        for row in np.hstack([positions, u, v]):
            w.writerow([repr(float(c)) for c in row])


def setup(cfg: RunConfig, horizon: float):
    h = cfg.discretization.spacing(horizon)
    grid = build_grid(cfg.geometry, h, horizon, density=cfg.material.density)
    m = cfg.material.build(horizon)
    bonds = build_bonds(grid, horizon, m.influence)
    return grid, bonds, m


def run(cfg: RunConfig, horizon: float | None = None, out_dir=None, keep_fields: bool = True,
        u0=None, v0=None) -> RunResult:
    """Integrate the nonlocal model to ``cfg.time.T`` with snapshot diagnostics."""
    eps = cfg.discretization.horizon if horizon is None else horizon
    grid, bonds, m = setup(cfg, eps)
    tc = cfg.time
    sub, dt = steps_per_snapshot(tc.snapshot_every, stable_dt(grid, bonds, m, tc.dt_safety))
    n_snap = int(round(tc.T / tc.snapshot_every))
    if tc.T < 0 or abs(n_snap * tc.snapshot_every - tc.T) > 1e-9 * max(tc.T, 1.0):
        raise ConfigError("time.T must be a non-negative multiple of time.snapshot_every")

    modes = rigid_modes(grid)
    if u0 is not None or v0 is not None:
        from .dynamics import project_out_rigid

        u0 = None if u0 is None else project_out_rigid(np.asarray(u0, float), modes)
        v0 = None if v0 is None else project_out_rigid(np.asarray(v0, float), modes)
    integ = Integrator(grid, bonds, m, cfg.load, dt, irreversible=cfg.run.irreversible)
    tracker = CrackTracker(bonds, m)
    res = RunResult(horizon=eps, grid=grid, bonds=bonds, material=m, dt=dt, tracker=tracker)
    out = Path(out_dir) if out_dir is not None else None
    writer = _Writer(out, cfg.run.write_snapshots)
    l0 = cfg.geometry.notch_length
    S_c = m.r_c / np.sqrt(bonds.length)

    def record(st, idx):
        S = integ.force.lattice_strains(st.u)
        z = tracker.update(st.t, S, st.u, broken=~integ.force.alive if integ.irreversible else None)
        if integ.irreversible and tracker.state.tip_decreases:
            raise RuntimeError(f"crack tip receded at t={st.t:.6g} although bonds are irreversible")
        diag = {
            "t": st.t,
            "KE": kinetic_energy(st.v, grid, m.density),
            "PD": peridynamic_energy(S, bonds, m),
            "work": st.work,
            "griffith": m.G_c * (z.tip - l0),
            "elastic_proxy": peridynamic_energy(S, bonds, m, only_below=S_c),
            "symmetry_defect": symmetry_defect(st.u, grid),
            "u_l2": l2_norm(st.u, grid.volume),
            "tip": z.tip,
        }
        res.times.append(st.t)
        res.diagnostics.append(diag)
        if keep_fields:
            res.u.append(st.u.copy())
            res.v.append(st.v.copy())
        writer.snapshot(idx, grid, st.u, st.v, diag, tracker.state.opening_profile)

    try:
        st = integ.initialize(u0, v0)
        record(st, 0)
        for s in range(n_snap):
            for _ in range(sub):
                st = integ.step(st)
            st.t = (s + 1) * tc.snapshot_every  # remove round-off drift in the clock
            record(st, s + 1)
    except UnstableError:
        res.status = "unstable"
        raise
    finally:
        margin_ok = (not tracker.state.tip_history) or tracker.state.tip_history[-1][1] < cfg.geometry.a - cfg.run.tip_margin
        if not margin_ok:
            res.status = "crack reached far edge"
            log.warning("crack tip passed a - tip_margin; run outside validity range")
        res.metadata = run_metadata(cfg, res, sub)
        writer.close()
        if out is not None:
            tracker.write(out)
            (out / "metadata.json").write_text(json.dumps(res.metadata, indent=2))
    return res


def run_metadata(cfg: RunConfig, res: RunResult, sub: int) -> dict:
    m = res.material
    C = lattice_tensor(res.bonds, m)
    return {
        "config": _jsonable(cfg.to_dict()),
        "horizon": res.horizon,
        "spacing": res.grid.spacing,
        "n_particles": res.grid.n,
        "n_bonds": int(res.bonds.mask.sum()),
        "dt": res.dt,
        "steps_per_snapshot": sub,
        "calibration": m.calibration.as_dict(),
        "profile": {"kind": m.profile.kind, "params": list(m.profile.params)},
        "r_c": m.r_c,
        "r_plus": m.r_plus,
        "lattice_tensor": {"C1111": C[0, 0, 0, 0], "C2222": C[1, 1, 1, 1], "C1122": C[0, 0, 1, 1], "C1212": C[0, 1, 0, 1]},
        "status": res.status,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# Local reference
# ---------------------------------------------------------------------------


def local_problem(cfg: RunConfig, C: np.ndarray, spacing: float | None = None) -> LocalProblem:
    h = spacing or cfg.local.spacing or cfg.discretization.spacing(min(cfg.discretization.horizons))
    return LocalProblem(cfg.geometry, C, cfg.material.density, cfg.load, h, damping=cfg.local.damping)


def reference_tensor(cfg: RunConfig) -> np.ndarray:
    """Elasticity tensor of the fixed-ratio lattice (same for every horizon)."""
    eps = max(cfg.discretization.horizons)
    grid, bonds, m = setup(cfg, eps)
    return lattice_tensor(bonds, m)


def comparison_mask(grid: ParticleGrid, eps: float, width: float = 1.0) -> np.ndarray:
    """Excludes an O(eps) strip around the notch and the loaded layers."""
    geom = grid.geom
    x = grid.positions
    dn = np.hypot(np.clip(x[:, 0], 0, geom.notch_core_end) - x[:, 0], x[:, 1]) - geom.notch_halfwidth
    return (dn > width * eps) & (np.abs(x[:, 1]) < geom.b / 2 - width * eps)


def compare_run(res: RunResult, problem: LocalProblem, times, u_loc, width: float = 1.0) -> dict:
    x = res.grid.positions
    sampled = [problem.evaluate(u, x) for u in u_loc]
    mask = comparison_mask(res.grid, res.horizon, width)
    rep = compare_fields(res.u, sampled, mask, res.grid.volume, res.times, list(times))
    rep["horizon"] = res.horizon
    return rep


# ---------------------------------------------------------------------------
# Sweep analysis
# ---------------------------------------------------------------------------


def transfer(src_positions, field_src, dst_positions) -> np.ndarray:
    """Nearest-cell injection of a particle field onto another lattice."""
    _, idx = cKDTree(src_positions).query(dst_positions)
    return field_src[idx]


def cauchy_convergence(levels) -> dict:
    """Successive-level differences ``sup_t ||u_k - u_{k+1}||`` on the finest lattice.

    ``levels``: sequence of ``(eps, positions, volume, times, [u per snapshot])``
    ordered by decreasing ``eps``.
    """
    if len(levels) < 3:
        raise ValueError("need at least three horizon levels")
    eps = [lv[0] for lv in levels]
    fine_pos, fine_vol = levels[-1][1], levels[-1][2]
    times = levels[0][3]
    for lv in levels:
        if len(lv[3]) != len(times) or not np.allclose(lv[3], times, atol=1e-9, rtol=0):
            raise ValueError("levels must share snapshot times")
    maps = [cKDTree(lv[1]).query(fine_pos)[1] for lv in levels]
    table = []
    for k in range(len(levels) - 1):
        a, b = levels[k][4], levels[k + 1][4]
        diffs = [l2_norm(ua[maps[k]] - ub[maps[k + 1]], fine_vol) for ua, ub in zip(a, b)]
        table.append({"eps_coarse": eps[k], "eps_fine": eps[k + 1], "sup_diff": max(diffs), "per_snapshot": diffs})
    rates = []
    for k in range(len(table) - 1):
        d0, d1 = table[k]["sup_diff"], table[k + 1]["sup_diff"]
        r = math.log(eps[k] / eps[k + 1])
        rates.append(math.log(d0 / d1) / r if d0 > 0 and d1 > 0 else float("nan"))
    sup = [row["sup_diff"] for row in table]
    return {
        "table": table,
        "rates": rates,
        "decreasing": all(b < a for a, b in zip(sup, sup[1:])),
    }


def crack_tip_limit(eps, tips) -> dict:
    """Pointwise-in-time linear extrapolation of tip histories to zero horizon.

    ``tips`` has shape (levels, snapshots).
    """
    eps = np.asarray(eps, dtype=float)
    tips = np.asarray(tips, dtype=float)
    if len(eps) < 2:
        raise ValueError("need at least two levels")
    A = np.stack([np.ones_like(eps), eps], axis=1)
    coef, *_ = np.linalg.lstsq(A, tips, rcond=None)
    limit = coef[0]
    return {
        "limit": limit.tolist(),
        "slope": coef[1].tolist(),
        "deviation": (tips - limit[None, :]).tolist(),
        "monotone": bool(np.all(np.diff(limit) >= -1e-12)),
    }


def fit_process_zone(eps, extents) -> dict:
    """Single constant ``C`` with ``extent ~ C eps`` (least squares through the origin)."""
    eps = np.asarray(eps, dtype=float)
    ext = np.asarray(extents, dtype=float)
    C = float(eps @ ext / (eps @ eps))
    return {"C": C, "ratios": (ext / eps).tolist()}


def _run_level(args):
    cfg, eps = args
    return run(cfg, eps, out_dir=None, keep_fields=True)


def sweep(cfg: RunConfig, out_dir=None, with_local: bool = False) -> dict:
    """Run every horizon level and assemble the convergence report."""
    hs = list(cfg.discretization.horizons)
    if len(hs) < 3:
        raise ConfigError("discretization.horizons needs at least three levels")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("discretization.horizons must be strictly decreasing")
    jobs = [(cfg, e) for e in hs]
    if cfg.run.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.threads) as ex:
            results = list(ex.map(_run_level, jobs))
    else:
        results = [_run_level(j) for j in jobs]
    report = sweep_report(results)
    if with_local:
        report["local"] = local_comparison(cfg, results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep_report.json").write_text(json.dumps(report, indent=2))
    return report, results


def sweep_report(results) -> dict:
    levels = [(r.horizon, r.grid.positions, r.grid.volume, r.times, r.u) for r in results]
    eps = [r.horizon for r in results]
    norms = [r.max_norm() for r in results]
    pz = [r.tracker.state.process_zone_max for r in results]
    return {
        "horizons": eps,
        "cauchy": cauchy_convergence(levels),
        "tip_limit": crack_tip_limit(eps, [r.tips for r in results]),
        "times": list(results[0].times),
        "max_u_l2": norms,
        "max_u_l2_spread": (max(norms) - min(norms)) / max(norms) if max(norms) > 0 else 0.0,
        "process_zone": fit_process_zone(eps, pz) if any(pz) else {"C": 0.0, "ratios": [0.0] * len(pz)},
        "levels": [r.metadata for r in results],
    }


def local_comparison(cfg: RunConfig, results) -> dict:
    C = lattice_tensor(results[0].bonds, results[0].material)
    prob = local_problem(cfg, C)
    times, u_loc, _ = run_local(prob, cfg.time.T, cfg.time.snapshot_every, cfg.local.dt_safety)
    reps = [compare_run(r, prob, times, u_loc, cfg.local.mask_width) for r in results]
    sups = [r["sup"] for r in reps]
    return {
        "spacing": prob.spacing,
        "errors": sups,
        "decreasing": all(b < a for a, b in zip(sups, sups[1:])),
        "per_level": reps,
    }
