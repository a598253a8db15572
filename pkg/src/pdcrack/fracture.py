"""Bond classification, failure/softening zones and crack-tip tracking."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .geometry import BondTable, ParticleGrid
from .material import MaterialModel, critical_strains


class BondClass(IntEnum):
    INTACT = 0
    SOFTENING = 1
    FAILED = 2


def thresholds(bonds: BondTable, m: MaterialModel):
    """Per-offset ``(S_c, S_plus)``."""
    return critical_strains(bonds.length, m)


def classify_strains(S: np.ndarray, S_c: np.ndarray, S_plus: np.ndarray) -> np.ndarray:
    """Classes for strains whose last axis (or whole array) matches the thresholds."""
    aS = np.abs(S)
    cls = np.zeros(aS.shape, dtype=np.int8)
    cls[aS >= S_c] = BondClass.SOFTENING
    cls[aS >= S_plus] = BondClass.FAILED
    return cls


def classify_bonds(S_lattice: np.ndarray, bonds: BondTable, m: MaterialModel) -> np.ndarray:
    """Lattice bond classes, shape (nx, ny, K); entries without a bond are INTACT."""
    S_c, S_plus = thresholds(bonds, m)
    cls = classify_strains(S_lattice, S_c, S_plus)
    cls[~bonds.mask] = BondClass.INTACT
    return cls


@dataclass(frozen=True)
class CrossingBonds:
    """Bonds crossing the ``x2 = 0`` axis, one entry per undirected bond (upper end first)."""

    ix: np.ndarray
    iy: np.ndarray
    k: np.ndarray
    xc: np.ndarray  # abscissa where the bond meets x2 = 0 (its midpoint for mirror pairs)

    @classmethod
    def build(cls, bonds: BondTable) -> "CrossingBonds":
        g = bonds.grid
        bx, by, k = np.nonzero(bonds.mask)
        x = g.positions[g.index_map[bx, by]]
        dy = bonds.offsets[k, 1] * g.spacing
        y2 = x[:, 1] + dy
        sel = (x[:, 1] > 0) & (y2 < 0)
        x, bx, by, k = x[sel], bx[sel], by[sel], k[sel]
        t = x[:, 1] / (x[:, 1] - y2[sel])
        xc = x[:, 0] + t * bonds.offsets[k, 0] * g.spacing
        order = np.argsort(xc, kind="stable")
        return cls(ix=bx[order], iy=by[order], k=k[order], xc=xc[order])

    def classes(self, cls_lattice: np.ndarray) -> np.ndarray:
        return cls_lattice[self.ix, self.iy, self.k]


def contiguous_extent(xc: np.ndarray, ok: np.ndarray, start: float) -> float:
    """Largest abscissa reached by a run of ``ok`` bonds beginning at ``start``."""
    ahead = xc >= start
    xs, oks = xc[ahead], ok[ahead]
    if len(xs) == 0 or not oks[0]:
        return start
    bad = np.nonzero(~oks)[0]
    last = (bad[0] - 1) if len(bad) else len(xs) - 1
    return float(xs[last])


def crack_tip(cls_lattice: np.ndarray, crossing: CrossingBonds, l0: float) -> float:
    """Furthest abscissa of the contiguous run of failed crossing bonds from the notch tip."""
    c = crossing.classes(cls_lattice)
    return contiguous_extent(crossing.xc, c == BondClass.FAILED, l0)


@dataclass(frozen=True)
class Zones:
    failure: np.ndarray  # indices into the crossing-bond list
    softening: np.ndarray
    tip: float
    softening_end: float

    @property
    def process_zone(self) -> float:
        return self.softening_end - self.tip


def zone_sets(cls_lattice: np.ndarray, crossing: CrossingBonds, l0: float) -> Zones:
    """Failure zone (failed bonds crossing ``[l0, tip]``) and softening zone.

    The softening centerline is not fixed by an overshoot constant; it is
    measured as the contiguous run of softening-or-failed crossing bonds.
    """
    c = crossing.classes(cls_lattice)
    xc = crossing.xc
    tip = contiguous_extent(xc, c == BondClass.FAILED, l0)
    s_end = contiguous_extent(xc, c >= BondClass.SOFTENING, l0)
    on_tip = (xc >= l0) & (xc <= tip) & (c == BondClass.FAILED) & (tip > l0)
    on_s = (xc >= l0) & (xc <= s_end) & (c >= BondClass.SOFTENING) & (s_end > l0)
    return Zones(failure=np.nonzero(on_tip)[0], softening=np.nonzero(on_s)[0], tip=tip, softening_end=s_end)


def failed_outside_strip(cls_lattice: np.ndarray, bonds: BondTable, width: float) -> int:
    """Failed bonds whose segment misses the strip ``|x2| < width``."""
    g = bonds.grid
    bx, by, k = np.nonzero(cls_lattice == BondClass.FAILED)
    if len(bx) == 0:
        return 0
    x2 = g.positions[g.index_map[bx, by], 1]
    y2 = x2 + bonds.offsets[k, 1] * g.spacing
    outside = (x2 * y2 > 0) & (np.minimum(np.abs(x2), np.abs(y2)) >= width)
    return int(np.count_nonzero(outside))


def opening_profile(u: np.ndarray, grid: ParticleGrid):
    """Vertical opening across the notch/crack line for each lattice column.

    Behind the notch tip the bands are ``d < x2 <= d + 2h`` and its mirror;
    ahead of it they are ``0 < x2 <= 2h`` and its mirror.
    """
    geom = grid.geom
    h = grid.spacing
    x1 = grid.positions[:, 0]
    x2 = grid.positions[:, 1]
    d = geom.notch_halfwidth
    behind = x1 <= geom.notch_length
    lo = np.where(behind, d, 0.0)
    top = (x2 > lo) & (x2 <= lo + 2 * h)
    bot = (x2 < -lo) & (x2 >= -lo - 2 * h)
    nx = grid.shape[0]
    cnt_t = np.bincount(grid.ix[top], minlength=nx)
    cnt_b = np.bincount(grid.ix[bot], minlength=nx)
    sum_t = np.bincount(grid.ix[top], weights=u[top, 1], minlength=nx)
    sum_b = np.bincount(grid.ix[bot], weights=u[bot, 1], minlength=nx)
    ok = (cnt_t > 0) & (cnt_b > 0)
    xs = (np.arange(nx) + 0.5) * h
    jump = sum_t[ok] / cnt_t[ok] - sum_b[ok] / cnt_b[ok]
    return xs[ok], jump


@dataclass
class CrackState:
    bond_class: np.ndarray
    tip_history: list = field(default_factory=list)
    opening_profile: tuple | None = None
    regressions: int = 0
    tip_decreases: int = 0
    zone_violations: int = 0
    process_zone_max: float = 0.0
    outside_strip_max: int = 0


class CrackTracker:
    """Maintains the crack state at every snapshot of a run."""

    def __init__(self, bonds: BondTable, m: MaterialModel, strip_width: float | None = None):
        self.bonds = bonds
        self.material = m
        self.grid = bonds.grid
        self.l0 = self.grid.geom.notch_length
        self.crossing = CrossingBonds.build(bonds)
        self.S_c, self.S_plus = thresholds(bonds, m)
        self.strip_width = m.horizon if strip_width is None else strip_width
        self.state = CrackState(bond_class=np.zeros(bonds.mask.shape, dtype=np.int8))
        self.zones: list[dict] = []

    def update(self, t: float, S_lattice: np.ndarray, u: np.ndarray, broken: np.ndarray | None = None) -> Zones:
        """Classify, record zones and invariants; ``broken`` marks permanently failed bonds."""
        cls = classify_strains(S_lattice, self.S_c, self.S_plus)
        if broken is not None:
            cls[broken] = BondClass.FAILED
        cls[~self.bonds.mask] = BondClass.INTACT
        st = self.state
        st.regressions += int(np.count_nonzero(cls < st.bond_class))
        z = zone_sets(cls, self.crossing, self.l0)
        fz, sz = set(z.failure.tolist()), set(z.softening.tolist())
        if not fz <= sz:
            st.zone_violations += 1
        if st.tip_history and z.tip < st.tip_history[-1][1]:
            st.tip_decreases += 1
        st.tip_history.append((t, z.tip))
        st.bond_class = cls
        st.opening_profile = opening_profile(u, self.grid)
        st.process_zone_max = max(st.process_zone_max, z.process_zone)
        out = failed_outside_strip(cls, self.bonds, self.strip_width)
        st.outside_strip_max = max(st.outside_strip_max, out)
        self.zones.append({
            "t": t,
            "tip": z.tip,
            "softening_end": z.softening_end,
            "process_zone": z.process_zone,
            "n_failure": len(fz),
            "n_softening": len(sz),
            "n_failed_total": int(np.count_nonzero(cls == BondClass.FAILED)) // 2,
            "failed_outside_strip": out,
        })
        return z

    def summary(self) -> dict:
        st = self.state
        return {
            "horizon": self.material.horizon,
            "final_tip": st.tip_history[-1][1] if st.tip_history else self.l0,
            "process_zone_max": st.process_zone_max,
            "class_regressions": st.regressions,
            "tip_decreases": st.tip_decreases,
            "zone_violations": st.zone_violations,
            "failed_outside_strip_max": st.outside_strip_max,
            "snapshots": self.zones,
        }

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        with (out_dir / "crack_tip.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "tip"])
            for t, l in self.state.tip_history:
                w.writerow([repr(t), repr(l)])
        (out_dir / "zones.json").write_text(json.dumps(self.summary(), indent=2))
