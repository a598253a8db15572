"""Plane linear elastodynamics on the specimen, used as the zero-horizon reference.

Bilinear (Q1) finite elements on the same cell lattice as the particle grid,
lumped mass, traction applied weakly on the loaded edges and every other
boundary (including the notch faces) left traction free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .dynamics import LoadProgram
from .geometry import SpecimenGeometry, lattice_centers, lattice_shape


class CFLError(ValueError):
    pass


def voigt(C: np.ndarray) -> np.ndarray:
    idx = [(0, 0), (1, 1), (0, 1)]
    D = np.empty((3, 3))
    for a, (i, j) in enumerate(idx):
        for b, (k, l) in enumerate(idx):
            D[a, b] = C[i, j, k, l]
    return D


def q1_stiffness(C: np.ndarray, h: float) -> np.ndarray:
    """8x8 element stiffness for a square cell; dof order (n0x, n0y, n1x, ...)."""
    D = voigt(C)
    # corners counter-clockwise: (0,0), (1,0), (1,1), (0,1)
    cx = np.array([-1, 1, 1, -1])
    cy = np.array([-1, -1, 1, 1])
    gp = 1.0 / math.sqrt(3.0)
    Ke = np.zeros((8, 8))
    for xi in (-gp, gp):
        for eta in (-gp, gp):
            dN_dxi = 0.25 * cx * (1 + eta * cy)
            dN_deta = 0.25 * cy * (1 + xi * cx)
            dN_dx = dN_dxi * 2.0 / h
            dN_dy = dN_deta * 2.0 / h
            B = np.zeros((3, 8))
            B[0, 0::2] = dN_dx
            B[1, 1::2] = dN_dy
            B[2, 0::2] = dN_dy
            B[2, 1::2] = dN_dx
            Ke += B.T @ D @ B * (h * h / 4.0)
    return Ke


@dataclass
class LocalProblem:
    geom: SpecimenGeometry
    C: np.ndarray  # (2, 2, 2, 2)
    density: float
    load: LoadProgram
    spacing: float
    periodic: tuple[bool, bool] = (False, False)
    damping: float = 0.0
    cells: np.ndarray | None = None  # optional override of the active-cell mask
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.shape = lattice_shape(self.geom, self.spacing) if self.cells is None else self.cells.shape
        if self.cells is None:
            x1, x2 = lattice_centers(self.shape, self.spacing)
            X1, X2 = np.meshgrid(x1, x2, indexing="ij")
            self.cells = self.geom.contains(np.stack([X1, X2], axis=-1))
        self._build()

    # -- assembly ----------------------------------------------------------
    def _node_id(self, i, j):
        nx, ny = self.shape
        px, py = self.periodic
        i = i % nx if px else i
        j = j % ny if py else j
        return i * (ny + 1) + j

    def _build(self):
        nx, ny = self.shape
        h = self.spacing
        ci, cj = np.nonzero(self.cells)
        corners = np.stack([
            self._node_id(ci, cj),
            self._node_id(ci + 1, cj),
            self._node_id(ci + 1, cj + 1),
            self._node_id(ci, cj + 1),
        ], axis=1)
        used = np.unique(corners)
        remap = np.full((nx + 1) * (ny + 1), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        conn = remap[corners]
        self.node_ids = used
        self.n_nodes = len(used)
        ii, jj = np.divmod(used, ny + 1)
        self.node_xy = np.stack([ii * h, (jj - ny / 2.0) * h], axis=1)
        dofs = np.empty((len(conn), 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * conn
        dofs[:, 1::2] = 2 * conn + 1
        Ke = q1_stiffness(self.C, h)
        rows = np.repeat(dofs, 8, axis=1).ravel()
        cols = np.tile(dofs, (1, 8)).ravel()
        vals = np.tile(Ke.ravel(), len(conn))
        ndof = 2 * self.n_nodes
        self.K = sp.csr_matrix((vals, (rows, cols)), shape=(ndof, ndof))
        mass = np.bincount(conn.ravel(), minlength=self.n_nodes) * (self.density * h * h / 4.0)
        self.mass = np.repeat(mass, 2).reshape(-1, 2)
        self.conn = conn
        self.f_shape = self._traction_shape()

    def _traction_shape(self) -> np.ndarray:
        """Nodal loads for unit amplitude: int g_shape(x1) phi dx on the loaded edges."""
        geom = self.geom
        nx, ny = self.shape
        h = self.spacing
        f = np.zeros((self.n_nodes, 2))
        if self.periodic[1]:
            return f
        lo, hi = geom.corner_radius, geom.a - geom.corner_radius
        gx, gw = np.polynomial.legendre.leggauss(4)
        remap = {nid: k for k, nid in enumerate(self.node_ids)}
        for j_cell, j_node, sign in ((ny - 1, ny, 1.0), (0, 0, -1.0)):
            for i in np.nonzero(self.cells[:, j_cell])[0]:
                x0, x1 = i * h, (i + 1) * h
                a, b = max(x0, lo), min(x1, hi)
                if b <= a:
                    continue
                xs = 0.5 * (a + b) + 0.5 * (b - a) * gx
                w = 0.5 * (b - a) * gw * self.load.profile(xs, geom.a, geom.corner_radius)
                phi1 = (xs - x0) / h
                n0 = remap[self._node_id(i, j_node)]
                n1 = remap[self._node_id(i + 1, j_node)]
                f[n0, 1] += sign * np.sum(w * (1 - phi1))
                f[n1, 1] += sign * np.sum(w * phi1)
        return f

    # -- dynamics ----------------------------------------------------------
    @cached_property
    def lambda_max(self) -> float:
        minv = 1.0 / np.sqrt(self.mass.ravel())
        A = sp.diags(minv) @ self.K @ sp.diags(minv)
        return float(eigsh(A, k=1, which="LA", return_eigenvectors=False, tol=1e-6)[0])

    @property
    def cfl_dt(self) -> float:
        return 2.0 / math.sqrt(self.lambda_max)

    def external(self, t: float) -> np.ndarray:
        return self.load.amplitude(t) * self.f_shape

    def internal(self, u: np.ndarray) -> np.ndarray:
        return -(self.K @ u.ravel()).reshape(-1, 2)

    def acceleration(self, u, v, t):
        return (self.internal(u) + self.external(t)) / self.mass - self.damping * v

    def energy(self, u, v) -> float:
        return 0.5 * float(np.sum(self.mass * v * v)) + 0.5 * float(u.ravel() @ (self.K @ u.ravel()))

    def stress(self, u: np.ndarray) -> np.ndarray:
        """Cell-center stress (sigma11, sigma22, sigma12) for every active cell."""
        h = self.spacing
        ue = u[self.conn]  # (cells, 4, 2)
        e11 = (ue[:, 1, 0] + ue[:, 2, 0] - ue[:, 0, 0] - ue[:, 3, 0]) / (2 * h)
        e22 = (ue[:, 2, 1] + ue[:, 3, 1] - ue[:, 0, 1] - ue[:, 1, 1]) / (2 * h)
        g12 = (ue[:, 2, 0] + ue[:, 3, 0] - ue[:, 0, 0] - ue[:, 1, 0]) / (2 * h) + \
              (ue[:, 1, 1] + ue[:, 2, 1] - ue[:, 0, 1] - ue[:, 3, 1]) / (2 * h)
        return np.stack([e11, e22, g12], axis=1) @ voigt(self.C).T

    def cell_centers(self) -> np.ndarray:
        x1, x2 = lattice_centers(self.shape, self.spacing)
        ci, cj = np.nonzero(self.cells)
        return np.stack([x1[ci], x2[cj]], axis=1)

    def evaluate(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of a nodal field, restricted to active nodes."""
        nx, ny = self.shape
        h = self.spacing
        s = points[:, 0] / h
        r = points[:, 1] / h + ny / 2.0
        i0 = np.clip(np.floor(s).astype(np.int64), 0, nx - 1)
        j0 = np.clip(np.floor(r).astype(np.int64), 0, ny - 1)
        fs, fr = s - i0, r - j0
        lookup = np.full((nx + 1) * (ny + 1), -1, dtype=np.int64)
        lookup[self.node_ids] = np.arange(self.n_nodes)
        acc = np.zeros((len(points), 2))
        wsum = np.zeros(len(points))
        for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
            w = (fs if di else 1 - fs) * (fr if dj else 1 - fr)
            nid = lookup[self._node_id(i0 + di, j0 + dj)]
            ok = (nid >= 0) & (w > 0)
            acc[ok] += w[ok, None] * u[nid[ok]]
            wsum[ok] += w[ok]
        if np.any(wsum <= 0):
            raise ValueError("evaluation point outside the discretized domain")
        return acc / wsum[:, None]


@dataclass
class LocalState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0


def local_initialize(problem: LocalProblem, u0=None, v0=None, t0: float = 0.0) -> LocalState:
    n = problem.n_nodes
    u = np.zeros((n, 2)) if u0 is None else np.array(u0, dtype=float)
    v = np.zeros((n, 2)) if v0 is None else np.array(v0, dtype=float)
    return LocalState(u=u, v=v, a=problem.acceleration(u, v, t0), t=t0)


def local_step(state: LocalState, problem: LocalProblem, dt: float) -> LocalState:
    """Velocity-Verlet step of ``rho u_tt = div(C : E u)`` (damping lagged by half a step)."""
    if dt > problem.cfl_dt:
        raise CFLError(f"dt={dt:.4g} exceeds the CFL bound {problem.cfl_dt:.4g}")
    vh = state.v + 0.5 * dt * state.a
    u = state.u + dt * vh
    t = state.t + dt
    a = problem.acceleration(u, vh, t)
    return LocalState(u=u, v=vh + 0.5 * dt * a, a=a, t=t)


def run_local(problem: LocalProblem, T: float, snapshot_every: float, safety: float = 0.5):
    """Integrate to ``T``; returns snapshot times and nodal displacements."""
    n_snap = int(round(T / snapshot_every)) if T > 0 else 0
    if n_snap and abs(n_snap * snapshot_every - T) > 1e-9 * T:
        raise ValueError("T must be a multiple of the snapshot interval")
    st = local_initialize(problem)
    times, us, vs = [0.0], [st.u.copy()], [st.v.copy()]
    if n_snap == 0:
        return np.array(times), us, vs
    sub = max(1, math.ceil(snapshot_every / (safety * problem.cfl_dt)))
    dt = snapshot_every / sub
    for s in range(n_snap):
        for _ in range(sub):
            st = local_step(st, problem, dt)
        times.append((s + 1) * snapshot_every)
        us.append(st.u.copy())
        vs.append(st.v.copy())
    return np.array(times), us, vs


def compare_fields(u_nonlocal, u_local, mask, volume=1.0, times_nonlocal=None, times_local=None) -> dict:
    """Sup over snapshots of the masked relative L2 error.

    ``u_local`` must already be sampled at the nonlocal particle positions.
    """
    if len(u_nonlocal) != len(u_local):
        raise ValueError("mismatched snapshot counts")
    if times_nonlocal is not None and times_local is not None:
        if len(times_nonlocal) != len(times_local) or not np.allclose(times_nonlocal, times_local, rtol=0, atol=1e-9):
            raise ValueError("mismatched snapshot cadences")
    errs = []
    for a, b in zip(u_nonlocal, u_local):
        num = math.sqrt(float(np.sum((a[mask] - b[mask]) ** 2)) * volume)
        den = math.sqrt(float(np.sum(b[mask] ** 2)) * volume)
        errs.append(num / den if den > 0 else (0.0 if num == 0 else math.inf))
    return {"per_snapshot": errs, "sup": max(errs) if errs else 0.0}
