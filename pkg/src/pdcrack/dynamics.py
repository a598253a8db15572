"""Nonlocal force assembly, boundary-layer loading and explicit time stepping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .geometry import BondTable, ParticleGrid, RigidModes
from .material import PROFILE_CODES, MaterialModel, bond_force_bound


class UnstableError(RuntimeError):
    """Raised when the displacement blows past the a priori bound or goes non-finite."""


# ---------------------------------------------------------------------------
# Load program
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadProgram:
    """Traction ``g(x1, t) = g_max * ramp(t) * shape(x1)`` on the top/bottom edges."""

    g_max: float = 0.05
    ramp_time: float = 0.2
    ramp: str = "linear"  # linear | smooth
    shape: str = "uniform"  # uniform | bump

    def __post_init__(self):
        if self.g_max < 0:
            raise ValueError("g_max must be non-negative")
        if self.ramp_time <= 0:
            raise ValueError("ramp_time must be positive")
        if self.ramp not in ("linear", "smooth"):
            raise ValueError(f"unknown ramp {self.ramp!r}")
        if self.shape not in ("uniform", "bump"):
            raise ValueError(f"unknown load shape {self.shape!r}")

    def amplitude(self, t: float) -> float:
        s = min(max(t / self.ramp_time, 0.0), 1.0)
        if self.ramp == "smooth":
            s = math.sin(0.5 * math.pi * s) ** 2
        return self.g_max * s

    def profile(self, x1, a: float, theta: float):
        x1 = np.asarray(x1, dtype=float)
        if self.shape == "uniform":
            return np.ones_like(x1)
        # smooth positive bump, symmetric about the specimen midline
        z = (x1 - 0.5 * a) / (0.5 * a - theta)
        return 1.0 + 0.5 * np.cos(0.5 * math.pi * np.clip(z, -1, 1)) ** 2

    def g(self, x1, t: float, a: float, theta: float):
        return self.amplitude(t) * self.profile(x1, a, theta)


def body_force(t: float, grid: ParticleGrid, load: LoadProgram, eps: float) -> np.ndarray:
    """Layer body force: ``+e2 g/eps`` on the top layer, ``-e2 g/eps`` on the bottom."""
    geom = grid.geom
    b = np.zeros((grid.n, 2))
    g = load.g(grid.positions[:, 0], t, geom.a, geom.corner_radius) / eps
    b[grid.in_top_layer, 1] = g[grid.in_top_layer]
    b[grid.in_bottom_layer, 1] = -g[grid.in_bottom_layer]
    return b


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


@dataclass
class SimState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0
    step_index: int = 0
    work: float = 0.0  # accumulated external work  int b . v dt

    def copy(self) -> "SimState":
        return replace(self, u=self.u.copy(), v=self.v.copy(), a=self.a.copy())

    @classmethod
    def zeros(cls, n: int) -> "SimState":
        z = np.zeros((n, 2))
        return cls(u=z.copy(), v=z.copy(), a=z.copy())


def l2_norm(field: np.ndarray, volume: float) -> float:
    return math.sqrt(float(np.sum(field * field)) * volume)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _dh(code, p0, p1, s):
    if code == 0:
        return p0 * p1 * math.exp(-p1 * s)
    x = s / p1
    if x >= 1.0:
        return 0.0
    y = 1.0 - x
    return 4.0 * p0 / p1 * y * y * y


@numba.njit(cache=True)
def _force_kernel(U, pad, offsets, pair_start, L, e, coef, mask, alive, code, p0, p1, out):
    nx, ny, K = mask.shape
    npairs = len(pair_start) - 1
    for i in range(nx):
        for j in range(ny):
            fx = 0.0
            fy = 0.0
            ux = U[0, i + pad, j + pad]
            uy = U[1, i + pad, j + pad]
            for p in range(npairs):
                gx = 0.0
                gy = 0.0
                for k in range(pair_start[p], pair_start[p + 1]):
                    if mask[i, j, k] and alive[i, j, k]:
                        ii = i + pad + offsets[k, 0]
                        jj = j + pad + offsets[k, 1]
                        S = ((U[0, ii, jj] - ux) * e[k, 0] + (U[1, ii, jj] - uy) * e[k, 1]) / L[k]
                        c = coef[k] * S * _dh(code, p0, p1, L[k] * S * S)
                        gx += c * e[k, 0]
                        gy += c * e[k, 1]
                fx += gx
                fy += gy
            out[0, i, j] = fx
            out[1, i, j] = fy


@numba.njit(cache=True)
def _strain_kernel(U, pad, offsets, L, e, mask, out):
    nx, ny, K = mask.shape
    for i in range(nx):
        for j in range(ny):
            ux = U[0, i + pad, j + pad]
            uy = U[1, i + pad, j + pad]
            for k in range(K):
                if mask[i, j, k]:
                    ii = i + pad + offsets[k, 0]
                    jj = j + pad + offsets[k, 1]
                    out[i, j, k] = ((U[0, ii, jj] - ux) * e[k, 0] + (U[1, ii, jj] - uy) * e[k, 1]) / L[k]
                else:
                    out[i, j, k] = 0.0


class ForceOperator:
    """Evaluates the peridynamic force density on a lattice-structured bond table.

    Per particle the contributions of mirrored offsets ``(di, dj)`` and
    ``(di, -dj)`` are added to each other before entering the running sum, so
    mirror-symmetric inputs produce bitwise mirror-symmetric forces.
    """

    def __init__(self, bonds: BondTable, material: MaterialModel):
        self.bonds = bonds
        self.material = material
        grid = bonds.grid
        self.grid = grid
        self.pad = bonds.pad
        nx, ny = grid.shape
        self._U = np.zeros((2, nx + 2 * self.pad, ny + 2 * self.pad))
        # bond force on x = 2 dW/dS e pv V
        self.coef = 4.0 * bonds.influence * bonds.pv * grid.volume / material.eps3_omega
        self.alive = np.ones_like(bonds.mask)
        prof = material.profile
        self.code = PROFILE_CODES[prof.kind]
        self.p0, self.p1 = prof.params

    def scatter(self, u: np.ndarray) -> np.ndarray:
        g = self.grid
        p = self.pad
        U = self._U
        U[:, p + g.ix, p + g.iy] = u.T
        return U

    def __call__(self, u: np.ndarray) -> np.ndarray:
        g = self.grid
        b = self.bonds
        U = self.scatter(u)
        out = np.empty((2,) + g.shape)
        _force_kernel(U, self.pad, b.offsets, b.pair_start, b.length, b.unit, self.coef, b.mask,
                      self.alive, self.code, self.p0, self.p1, out)
        F = out[:, g.ix, g.iy].T
        if not np.all(np.isfinite(F)):
            bad = int(np.nonzero(~np.isfinite(F).all(axis=1))[0][0])
            raise UnstableError(f"non-finite bond force at particle {bad} ({g.positions[bad]})")
        return F

    def lattice_strains(self, u: np.ndarray) -> np.ndarray:
        """Bond strains on the lattice, shape (nx, ny, K); zero where no bond."""
        b = self.bonds
        out = np.empty(b.mask.shape)
        _strain_kernel(self.scatter(u), self.pad, b.offsets, b.length, b.unit, b.mask, out)
        return out

    def freeze(self, failed: np.ndarray) -> None:
        """Permanently zero the given lattice bonds (irreversibility option)."""
        self.alive &= ~failed


def strain(u: np.ndarray, bonds: BondTable, i=None, j=None, k=None) -> np.ndarray:
    """Tensile strain ``(u(y) - u(x)) / |y - x| . e`` for the flat bond list."""
    if i is None:
        i, j, k = bonds.flat
    du = u[j] - u[i]
    return np.einsum("bk,bk->b", du, bonds.unit[k]) / bonds.length[k]


def assemble_force(state: SimState, grid: ParticleGrid, bonds: BondTable, m: MaterialModel) -> np.ndarray:
    return ForceOperator(bonds, m)(state.u)


# ---------------------------------------------------------------------------
# Rigid projection, energies, time step
# ---------------------------------------------------------------------------


def project_out_rigid(field: np.ndarray, modes: RigidModes) -> np.ndarray:
    out = field.copy()
    for a in range(3):
        if modes.valid[a]:
            out -= modes.inner(out, modes.modes[a]) * modes.modes[a]
    return out


def kinetic_energy(v: np.ndarray, grid: ParticleGrid, rho: float) -> float:
    return 0.5 * rho * float(np.sum(v * v)) * grid.volume


def stable_dt(grid: ParticleGrid, bonds: BondTable, m: MaterialModel, safety: float = 0.5) -> float:
    """Explicit step bound from the linearized bond stiffness sum."""
    if not safety > 0:
        raise ValueError("safety factor must be positive")
    k_bond = 2.0 / m.eps3_omega * bonds.influence * m.profile.dh0 / bonds.length
    per_offset = 2.0 * k_bond * bonds.pv * grid.volume
    total = bonds.mask.astype(float) @ per_offset
    return safety * math.sqrt(2.0 * m.density / float(total.max()))


def lattice_tensor(bonds: BondTable, m: MaterialModel) -> np.ndarray:
    """Elasticity tensor of the discrete operator for an interior particle.

    Sum over all horizon offsets of ``k_S L pv V e_i e_j e_k e_l`` with
    ``k_S = d2W/dS2 (0)``.  Independent of eps at fixed eps/h.
    """
    kS = 2.0 / m.eps3_omega * bonds.influence * m.profile.dh0
    w = kS * bonds.length * bonds.pv * bonds.grid.volume
    e = bonds.unit
    return np.einsum("k,ki,kj,kl,km->ijlm", w, e, e, e, e)


@dataclass
class Integrator:
    """Velocity-Verlet integration of ``rho u_tt = L(u) + b``."""

    grid: ParticleGrid
    bonds: BondTable
    material: MaterialModel
    load: LoadProgram
    dt: float
    irreversible: bool = False
    force: ForceOperator = field(init=False)

    def __post_init__(self):
        if not 0 < self.dt <= stable_dt(self.grid, self.bonds, self.material, safety=1.0):
            raise ValueError(f"dt={self.dt:.4g} violates the explicit stability bound")
        self.force = ForceOperator(self.bonds, self.material)
        self.rho = self.material.density
        self.eps = self.material.horizon
        self._bound_rate = self._force_rate()
        self._S_plus = None
        if self.irreversible:
            from .material import critical_strains

            self._S_plus = critical_strains(self.bonds.length, self.material)[1]

    def _force_rate(self) -> float:
        """a priori bound on ||L(u)||_L2 from bounded bond forces."""
        b, m = self.bonds, self.material
        per_offset = 2.0 * bond_force_bound(b.length, b.influence, m) * b.pv * self.grid.volume
        fmax = b.mask.astype(float) @ per_offset
        return math.sqrt(float(np.sum(fmax**2)) * self.grid.volume)

    def total_force(self, u, t):
        return self.force(u) + body_force(t, self.grid, self.load, self.eps)

    def initialize(self, u0=None, v0=None, t0: float = 0.0) -> SimState:
        n = self.grid.n
        u = np.zeros((n, 2)) if u0 is None else np.array(u0, dtype=float)
        v = np.zeros((n, 2)) if v0 is None else np.array(v0, dtype=float)
        F = self.total_force(u, t0)
        st = SimState(u=u, v=v, a=F / self.rho, t=t0)
        self._u0 = l2_norm(u, self.grid.volume)
        self._v0 = l2_norm(v, self.grid.volume)
        self._t0 = t0
        self._bmax = l2_norm(body_force(t0, self.grid, self.load, self.eps), self.grid.volume)
        return st

    def bound(self, t: float) -> float:
        s = t - self._t0
        return self._u0 + s * self._v0 + 0.5 * s * s * (self._bmax + self._bound_rate) / self.rho

    def step(self, st: SimState) -> SimState:
        dt = self.dt
        V = self.grid.volume
        b_old = body_force(st.t, self.grid, self.load, self.eps)
        pw_old = float(np.sum(b_old * st.v)) * V
        u = st.u + dt * st.v + 0.5 * dt * dt * st.a
        t = st.t + dt
        b_new = body_force(t, self.grid, self.load, self.eps)
        a = (self.force(u) + b_new) / self.rho
        v = st.v + 0.5 * dt * (st.a + a)
        pw_new = float(np.sum(b_new * v)) * V
        self._bmax = max(self._bmax, l2_norm(b_new, V))
        nrm = l2_norm(u, V)
        if not math.isfinite(nrm) or nrm > 1e3 * self.bound(t):
            raise UnstableError(f"UNSTABLE at t={t:.6g}: ||u|| = {nrm:.3e}")
        new = SimState(u=u, v=v, a=a, t=t, step_index=st.step_index + 1,
                       work=st.work + 0.5 * dt * (pw_old + pw_new))
        if self.irreversible:
            S = self.force.lattice_strains(u)
            self.force.freeze(np.abs(S) >= self._S_plus)
        return new


def step(state: SimState, grid: ParticleGrid, bonds: BondTable, m: MaterialModel, load: LoadProgram,
         dt: float) -> SimState:
    """One velocity-Verlet step (builds a throwaway integrator)."""
    integ = Integrator(grid, bonds, m, load, dt)
    integ._u0, integ._v0, integ._t0 = l2_norm(state.u, grid.volume), l2_norm(state.v, grid.volume), state.t
    integ._bmax = l2_norm(body_force(state.t, grid, load, m.horizon), grid.volume)
    return integ.step(state)
