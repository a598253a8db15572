import math

import numpy as np
import pytest

from pdcrack.geometry import SpecimenGeometry, build_bonds, build_grid, effective_radius, partial_volume
from pdcrack.material import Influence, MaterialModel, invert_calibration

# A small specimen (< 400 particles at h = 0.025) for brute-force oracles.
SMALL = SpecimenGeometry(a=0.5, b=0.5, notch_length=0.15, notch_halfwidth=0.025, corner_radius=0.1)
SMALL_EPS = 0.075
SMALL_H = 0.025


def make_material(eps, influence="constant", kind="exponential", mu=1.0, G_c=1.0, density=1.0):
    J = Influence(influence)
    return MaterialModel(invert_calibration(mu, G_c, J, kind), J, eps, density=density)


def naive_force(u, grid, m):
    """Direct evaluation over every ordered particle pair (no neighbor lists).

    The inner loop over partners is vectorized; pairs beyond the ramped
    support or crossing the notch contribute nothing.
    """
    x = grid.positions
    eps, h, V = m.horizon, grid.spacing, grid.volume
    F = np.zeros_like(u)
    for p in range(grid.n):
        d = x - x[p]
        L = np.hypot(d[:, 0], d[:, 1])
        L[p] = math.inf
        pv = partial_volume(L, h, eps)
        live = (pv > 0) & ~grid.geom.segment_hits_notch(np.broadcast_to(x[p], x.shape), x)
        d, L, pv = d[live], L[live], pv[live]
        e = d / L[:, None]
        S = np.sum((u[live] - u[p]) * e, axis=1) / L
        Jw = m.influence(effective_radius(L, h, eps) / eps)
        dW = 2.0 / (eps**3 * math.pi) * Jw * S * m.profile.dh(L * S * S)
        F[p] = np.sum((2.0 * dW * pv * V)[:, None] * e, axis=0)
    return F


@pytest.fixture(scope="session")
def small_model():
    grid = build_grid(SMALL, SMALL_H, SMALL_EPS)
    m = make_material(SMALL_EPS)
    bonds = build_bonds(grid, SMALL_EPS, m.influence)
    return grid, bonds, m


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
