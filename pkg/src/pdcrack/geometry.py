"""Notched specimen discretization and horizon neighbor structure.

Particles sit at the centers of a uniform square lattice clipped to the
specimen.  Because the lattice is uniform, bonds are described by a fixed set
of lattice offsets; for each offset a boolean mask over the lattice records
which particles actually own that bond (both ends inside the specimen and the
segment not crossing the notch).  Flat per-bond arrays are derived on demand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

_TOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SpecimenGeometry:
    """Rectangle ``[0, a] x [-b/2, b/2]`` with rounded corners and a left edge notch.

    The notch is the set of points within ``notch_halfwidth`` of the segment
    ``{0 <= x1 <= notch_length - notch_halfwidth, x2 = 0}``: a slot of
    thickness ``2d`` with a circular tip whose apex is ``(notch_length, 0)``.
    """

    a: float = 2.0
    b: float = 1.0
    notch_length: float = 0.5
    notch_halfwidth: float = 0.05
    corner_radius: float = 0.15

    def __post_init__(self):
        a, b, l0, d, th = self.a, self.b, self.notch_length, self.notch_halfwidth, self.corner_radius
        if not (a > 0 and b > 0):
            raise GeometryError("a and b must be positive")
        if not 0 < l0 < a:
            raise GeometryError("notch length must lie in (0, a)")
        if not 0 < 2 * d < b:
            raise GeometryError("notch thickness must lie in (0, b)")
        if not d < l0:
            raise GeometryError("notch half-width must be smaller than its length")
        if not 0 < th < min(a, b) / 4:
            raise GeometryError("corner radius must lie in (0, min(a, b)/4)")

    @property
    def notch_core_end(self) -> float:
        return self.notch_length - self.notch_halfwidth

    def in_notch(self, x):
        x = np.asarray(x, dtype=float)
        x1, ax2 = x[..., 0], np.abs(x[..., 1])
        dx = np.clip(x1, 0.0, self.notch_core_end) - x1
        return dx * dx + ax2 * ax2 <= self.notch_halfwidth**2

    def in_rounded_rectangle(self, x):
        x = np.asarray(x, dtype=float)
        x1, ax2 = x[..., 0], np.abs(x[..., 1])
        a, hb, th = self.a, self.b / 2, self.corner_radius
        inside = (x1 > 0) & (x1 < a) & (ax2 < hb)
        cx = np.clip(x1, th, a - th)
        cy = np.minimum(ax2, hb - th)
        return inside & ((x1 - cx) ** 2 + (ax2 - cy) ** 2 <= th * th)

    def contains(self, x):
        return self.in_rounded_rectangle(x) & ~self.in_notch(x)

    @property
    def area(self) -> float:
        a, b, th, d = self.a, self.b, self.corner_radius, self.notch_halfwidth
        notch = 2 * d * self.notch_core_end + 0.5 * math.pi * d * d
        return a * b - (4 - math.pi) * th * th - notch

    @property
    def perimeter(self) -> float:
        a, b, th, d = self.a, self.b, self.corner_radius, self.notch_halfwidth
        return 2 * (a + b) - (8 - 2 * math.pi) * th + 2 * self.notch_core_end + math.pi * d - 2 * d

    def segment_hits_notch(self, p, q):
        """True where the closed segment ``p -> q`` meets the closed notch."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d2 = self.notch_halfwidth**2
        x_end = self.notch_core_end
        p1, p2 = p[..., 0], p[..., 1]
        q1, q2 = q[..., 0], q[..., 1]
        # segment crosses the notch axis inside the core
        crosses = (p2 * q2) <= 0
        denom = np.where(p2 != q2, p2 - q2, 1.0)
        t = np.where(p2 != q2, p2 / denom, 0.0)
        xc = p1 + t * (q1 - p1)
        hit = crosses & (xc >= 0) & (xc <= x_end)
        # otherwise the distance is attained at an endpoint of either segment
        hit |= _point_seg_dist2(p, 0.0, x_end) <= d2
        hit |= _point_seg_dist2(q, 0.0, x_end) <= d2
        for cx in (0.0, x_end):
            hit |= _seg_point_dist2(p, q, cx) <= d2
        return hit


def _point_seg_dist2(p, x0, x1):
    """Squared distance from points to the axis segment ``[x0, x1] x {0}``."""
    dx = np.clip(p[..., 0], x0, x1) - p[..., 0]
    return dx * dx + p[..., 1] ** 2


def _seg_point_dist2(p, q, cx):
    """Squared distance from segments ``p -> q`` to the point ``(cx, 0)``."""
    d1 = q[..., 0] - p[..., 0]
    d2 = q[..., 1] - p[..., 1]
    w1 = cx - p[..., 0]
    w2 = -p[..., 1]
    len2 = d1 * d1 + d2 * d2
    t = np.clip((w1 * d1 + w2 * d2) / np.where(len2 > 0, len2, 1.0), 0.0, 1.0)
    e1 = w1 - t * d1
    e2 = w2 - t * d2
    return e1 * e1 + e2 * e2


@dataclass(frozen=True)
class ParticleGrid:
    geom: SpecimenGeometry
    spacing: float
    horizon: float
    density: float
    shape: tuple[int, int]
    index_map: np.ndarray  # (nx, ny) particle index or -1
    ix: np.ndarray
    iy: np.ndarray
    positions: np.ndarray  # (N, 2)
    in_top_layer: np.ndarray
    in_bottom_layer: np.ndarray

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def volume(self) -> float:
        return self.spacing**2

    @property
    def active(self) -> np.ndarray:
        return self.index_map >= 0

    @cached_property
    def mirror(self) -> np.ndarray:
        """Index of the particle mirrored across ``x2 = 0``."""
        ny = self.shape[1]
        m = self.index_map[self.ix, ny - 1 - self.iy]
        if np.any(m < 0):
            raise GeometryError("grid is not mirror-symmetric about x2 = 0")
        return m

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "volume", "in_top_layer", "in_bottom_layer"])
            for p, t, b in zip(self.positions, self.in_top_layer, self.in_bottom_layer):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(self.volume), int(t), int(b)])


def lattice_shape(geom: SpecimenGeometry, h: float) -> tuple[int, int]:
    nx = round(geom.a / h)
    ny = round(geom.b / h)
    if abs(nx * h - geom.a) > _TOL * geom.a or abs(ny * h - geom.b) > _TOL * geom.b:
        raise GeometryError("a and b must be integer multiples of the lattice spacing")
    if ny % 2:
        raise GeometryError("b / h_grid must be even so that no particle sits on x2 = 0")
    return nx, ny


def lattice_centers(shape, h):
    nx, ny = shape
    x1 = (np.arange(nx) + 0.5) * h
    # exact negation under mirroring j -> ny-1-j
    x2 = (np.arange(ny) - (ny - 1) / 2.0) * h
    return x1, x2


def layer_masks(positions, geom: SpecimenGeometry, eps: float):
    x1, x2 = positions[:, 0], positions[:, 1]
    th, hb = geom.corner_radius, geom.b / 2
    band = (x1 > th) & (x1 < geom.a - th)
    top = band & (x2 > hb - eps) & (x2 < hb)
    bottom = band & (x2 > -hb) & (x2 < -hb + eps)
    return top, bottom


def build_grid(geom: SpecimenGeometry, h_grid: float, eps: float, density: float = 1.0) -> ParticleGrid:
    """Cell-centered lattice of spacing ``h_grid`` clipped to the specimen."""
    if h_grid <= 0 or eps <= 0:
        raise GeometryError("spacing and horizon must be positive")
    if h_grid > eps / 3 * (1 + _TOL):
        raise GeometryError("horizon under-resolved: need h_grid <= eps/3")
    if eps >= geom.corner_radius:
        raise GeometryError("horizon must be smaller than the corner radius")
    shape = lattice_shape(geom, h_grid)
    x1, x2 = lattice_centers(shape, h_grid)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    inside = geom.contains(np.stack([X1, X2], axis=-1))
    ix, iy = np.nonzero(inside)
    index_map = np.full(shape, -1, dtype=np.int64)
    index_map[ix, iy] = np.arange(len(ix))
    positions = np.stack([x1[ix], x2[iy]], axis=1)
    top, bottom = layer_masks(positions, geom, eps)
    return ParticleGrid(
        geom=geom,
        spacing=h_grid,
        horizon=eps,
        density=density,
        shape=shape,
        index_map=index_map,
        ix=ix,
        iy=iy,
        positions=positions,
        in_top_layer=top,
        in_bottom_layer=bottom,
    )


# ---------------------------------------------------------------------------
# Bonds
# ---------------------------------------------------------------------------


def partial_volume(L, h, eps):
    """Linear ramp for cells straddling the horizon boundary."""
    return np.clip(0.5 + (eps - np.asarray(L, dtype=float)) / h, 0.0, 1.0)


def effective_radius(L, h, eps):
    """Radius at which ``J`` is sampled: mean radius of the in-horizon part of the cell."""
    L = np.asarray(L, dtype=float)
    return np.minimum(L, 0.5 * (L - 0.5 * h + eps))


def horizon_offsets(m: float):
    """Lattice offsets ``(di, dj)`` with ``0 < |o| < m + 1/2``, ordered in mirror pairs.

    Returns ``(offsets, pair_start)``; offsets ``pair_start[p]:pair_start[p+1]``
    form the p-th group, either ``(di, 0)`` alone or ``(di, dj), (di, -dj)``.
    """
    reach = m + 0.5
    R = int(math.ceil(reach))
    offs = []
    starts = [0]
    for di in range(-R, R + 1):
        for dj in range(0, R + 1):
            if (di == 0 and dj == 0) or math.hypot(di, dj) >= reach:
                continue
            offs.append((di, dj))
            if dj:
                offs.append((di, -dj))
            starts.append(len(offs))
    return np.array(offs, dtype=np.int64), np.array(starts, dtype=np.int64)


@dataclass(frozen=True)
class BondTable:
    grid: ParticleGrid
    offsets: np.ndarray  # (K, 2) lattice offsets
    pair_start: np.ndarray  # mirror-pair grouping of offsets
    length: np.ndarray  # (K,)
    unit: np.ndarray  # (K, 2)
    influence: np.ndarray  # (K,) J evaluated at the effective radius
    pv: np.ndarray  # (K,) partial-volume factor
    mask: np.ndarray  # (nx, ny, K) bool, bond present
    pad: int

    @property
    def n_offsets(self) -> int:
        return len(self.offsets)

    @cached_property
    def flat(self):
        """Directed bond list ``(i, j, k)`` grouped by ``i``; k is the offset id."""
        bx, by, k = np.nonzero(self.mask)
        i = self.grid.index_map[bx, by]
        j = self.grid.index_map[bx + self.offsets[k, 0], by + self.offsets[k, 1]]
        order = np.argsort(i, kind="stable")
        return i[order], j[order], k[order]

    @property
    def i(self):
        return self.flat[0]

    @property
    def j(self):
        return self.flat[1]

    @property
    def k(self):
        return self.flat[2]

    @property
    def n_bonds(self) -> int:
        return len(self.flat[0])

    @cached_property
    def indptr(self):
        counts = np.bincount(self.i, minlength=self.grid.n)
        return np.concatenate([[0], np.cumsum(counts)])

    def neighbors(self, p: int):
        s, e = self.indptr[p], self.indptr[p + 1]
        return self.j[s:e]

    def bond_lengths(self):
        return self.length[self.k]

    def bond_units(self):
        return self.unit[self.k]

    def bond_weights(self):
        return self.influence[self.k]

    def bond_pv(self):
        return self.pv[self.k]


def build_bonds(grid: ParticleGrid, eps: float, J, notch: SpecimenGeometry | None = None) -> BondTable:
    """Horizon bonds of every particle, with notch-crossing bonds removed."""
    if not math.isclose(eps, grid.horizon, rel_tol=1e-12):
        raise GeometryError("bonds must use the grid's horizon")
    notch = notch or grid.geom
    h = grid.spacing
    offsets, starts = horizon_offsets(eps / h)
    L = h * np.hypot(offsets[:, 0], offsets[:, 1])
    unit = offsets * h / L[:, None]
    Jw = np.asarray(J(effective_radius(L, h, eps) / eps), dtype=float)
    pv = partial_volume(L, h, eps)
    keep = (pv > 0) & (Jw > 0)
    # drop empty offsets, preserving mirror-pair grouping
    groups = [np.arange(starts[p], starts[p + 1]) for p in range(len(starts) - 1)]
    groups = [g for g in groups if keep[g[0]]]
    sel = np.concatenate(groups)
    starts = np.concatenate([[0], np.cumsum([len(g) for g in groups])])
    offsets, L, unit, Jw, pv = offsets[sel], L[sel], unit[sel], Jw[sel], pv[sel]

    nx, ny = grid.shape
    R = int(np.abs(offsets).max())
    active = np.zeros((nx + 2 * R, ny + 2 * R), dtype=bool)
    active[R : R + nx, R : R + ny] = grid.active
    x1c = (np.arange(-R, nx + R) + 0.5) * h
    x2c = (np.arange(-R, ny + R) - (ny - 1) / 2.0) * h
    P = np.stack(np.meshgrid(x1c[R : R + nx], x2c[R : R + ny], indexing="ij"), axis=-1)
    mask = np.zeros((nx, ny, len(offsets)), dtype=bool)
    for k, (di, dj) in enumerate(offsets):
        nb = active[R + di : R + di + nx, R + dj : R + dj + ny]
        m = grid.active & nb
        Q = P + np.array([di, dj]) * h
        m &= ~notch.segment_hits_notch(P, Q)
        mask[:, :, k] = m
    return BondTable(
        grid=grid,
        offsets=offsets,
        pair_start=starts,
        length=L,
        unit=unit,
        influence=Jw,
        pv=pv,
        mask=mask,
        pad=R,
    )


# ---------------------------------------------------------------------------
# Rigid motions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidModes:
    modes: np.ndarray  # (3, N, 2)
    valid: np.ndarray  # (3,) bool; degenerate modes are zero and flagged False
    volume: float

    def inner(self, f, g) -> float:
        return float(np.sum(f * g) * self.volume)


def rigid_modes(grid: ParticleGrid) -> RigidModes:
    """Two translations and the in-plane rotation, orthonormal in the discrete L2 product."""
    if grid.n == 0:
        raise GeometryError("empty grid")
    x = grid.positions
    V = grid.volume
    raw = np.zeros((3, grid.n, 2))
    raw[0, :, 0] = 1.0
    raw[1, :, 1] = 1.0
    raw[2, :, 0] = -x[:, 1]
    raw[2, :, 1] = x[:, 0]
    modes = np.zeros_like(raw)
    valid = np.zeros(3, dtype=bool)
    for a in range(3):
        w = raw[a].copy()
        scale = math.sqrt(np.sum(w * w) * V)
        for b in range(a):
            if valid[b]:
                w -= np.sum(w * modes[b]) * V * modes[b]
        # second pass for orthogonality to round-off
        for b in range(a):
            if valid[b]:
                w -= np.sum(w * modes[b]) * V * modes[b]
        nrm = math.sqrt(np.sum(w * w) * V)
        if scale > 0 and nrm > 1e-10 * scale:
            modes[a] = w / nrm
            valid[a] = True
    return RigidModes(modes=modes, valid=valid, volume=V)
