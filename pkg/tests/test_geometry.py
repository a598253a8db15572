import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdcrack.geometry import (
    GeometryError,
    SpecimenGeometry,
    build_bonds,
    build_grid,
    horizon_offsets,
    partial_volume,
    rigid_modes,
)
from pdcrack.material import Influence

from .conftest import SMALL, SMALL_EPS, SMALL_H

GEOM = SpecimenGeometry(a=2.0, b=1.0, notch_length=0.5, notch_halfwidth=0.05, corner_radius=0.15)


def test_specimen_validation():
    with pytest.raises(GeometryError):
        SpecimenGeometry(notch_length=2.5)
    with pytest.raises(GeometryError):
        SpecimenGeometry(notch_halfwidth=0.6)
    with pytest.raises(GeometryError):
        SpecimenGeometry(corner_radius=0.3)


def test_particle_count_and_membership():
    geom = SpecimenGeometry(a=2.0, b=1.0, notch_length=0.5, notch_halfwidth=0.05, corner_radius=0.1)
    h = 0.025
    grid = build_grid(geom, h, 0.08)
    assert abs(grid.n * h * h - geom.area) <= 2 * h * geom.perimeter
    assert np.all(geom.contains(grid.positions))
    assert grid.volume == pytest.approx(h * h)


def test_layers_follow_the_strict_band():
    eps = 0.1
    grid = build_grid(GEOM, 0.025, eps)
    x1, x2 = grid.positions.T
    band = (x1 > GEOM.corner_radius) & (x1 < GEOM.a - GEOM.corner_radius)
    assert np.array_equal(grid.in_top_layer, band & (x2 > 0.5 - eps) & (x2 < 0.5))
    assert np.array_equal(grid.in_bottom_layer, band & (x2 < -0.5 + eps) & (x2 > -0.5))
    assert grid.in_top_layer.sum() == grid.in_bottom_layer.sum() > 0


def test_notch_interior_is_void():
    grid = build_grid(GEOM, 0.025, 0.1)
    d = np.hypot(grid.positions[:, 0] - 0.2, grid.positions[:, 1])
    assert d.min() > GEOM.notch_halfwidth
    assert not GEOM.contains(np.array([0.2, 0.0]))


@pytest.mark.parametrize("h,eps", [(0.04, 0.1), (0.025, 0.2)])
def test_grid_preconditions(h, eps):
    with pytest.raises(GeometryError):
        build_grid(GEOM, h, eps)


def test_odd_row_count_rejected():
    with pytest.raises(GeometryError):
        build_grid(SpecimenGeometry(b=1.0), 1 / 25, 0.14)


def test_grid_is_mirror_symmetric():
    grid = build_grid(GEOM, 0.025, 0.1)
    mir = grid.mirror
    assert np.array_equal(grid.positions[mir, 0], grid.positions[:, 0])
    assert np.array_equal(grid.positions[mir, 1], -grid.positions[:, 1])


def test_grid_csv(tmp_path):
    grid = build_grid(SMALL, SMALL_H, SMALL_EPS)
    path = tmp_path / "grid.csv"
    grid.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,volume,in_top_layer,in_bottom_layer"
    assert len(lines) == grid.n + 1


# -- bonds ------------------------------------------------------------------


@pytest.fixture(scope="module")
def small():
    grid = build_grid(SMALL, SMALL_H, SMALL_EPS)
    return grid, build_bonds(grid, SMALL_EPS, Influence("constant"))


def brute_force_neighbors(grid, eps, geom):
    """All-pairs scan of the lattice with the ramp support and notch test."""
    x = grid.positions
    reach = eps + grid.spacing / 2
    out = []
    for p in range(grid.n):
        d = x - x[p]
        r = np.hypot(d[:, 0], d[:, 1])
        cand = np.nonzero((r > 0) & (r < reach - 1e-12))[0]
        cand = cand[~geom.segment_hits_notch(np.broadcast_to(x[p], (len(cand), 2)), x[cand])]
        out.append(set(cand.tolist()))
    return out


def test_neighbor_lists_match_all_pairs_scan(small):
    grid, bonds = small
    expected = brute_force_neighbors(grid, SMALL_EPS, SMALL)
    for p in range(grid.n):
        assert set(bonds.neighbors(p).tolist()) == expected[p]


def test_bonds_are_symmetric(small):
    grid, bonds = small
    i, j, k = bonds.flat
    pairs = set(zip(i.tolist(), j.tolist()))
    assert all((b, a) in pairs for a, b in pairs)
    d = grid.positions[j] - grid.positions[i]
    assert np.allclose(np.hypot(*d.T), bonds.length[k], atol=1e-14)
    assert np.allclose(d / bonds.length[k, None], bonds.unit[k], atol=1e-14)


def test_no_bond_crosses_notch(small):
    grid, bonds = small
    i, j, _ = bonds.flat
    assert not np.any(SMALL.segment_hits_notch(grid.positions[i], grid.positions[j]))


def test_notch_straddling_pair_has_no_bond():
    grid = build_grid(GEOM, 0.025, 0.1)
    bonds = build_bonds(grid, 0.1, Influence("constant"))
    x = grid.positions
    tgt = [GEOM.notch_length - 0.1 / 4, 0.1 / 4]
    p = np.argmin(np.hypot(x[:, 0] - tgt[0], x[:, 1] - tgt[1]))
    q = grid.mirror[p]
    assert q not in set(bonds.neighbors(p).tolist())


def test_distant_pair_has_no_bond(small):
    grid, bonds = small
    i, j, _ = bonds.flat
    r = np.hypot(*(grid.positions[j] - grid.positions[i]).T)
    assert r.max() < 1.2 * SMALL_EPS


def test_partial_volume_ramp_values():
    h, eps = 0.01, 0.04
    assert partial_volume(eps - h, h, eps) == 1.0
    assert partial_volume(eps, h, eps) == pytest.approx(0.5)
    assert partial_volume(eps + h / 2, h, eps) == pytest.approx(0.0, abs=1e-12)
    assert partial_volume(eps + h, h, eps) == 0.0


def test_interior_horizon_area_converges():
    for m, tol in [(8, 0.03), (16, 0.015)]:
        offs, _ = horizon_offsets(m)
        L = np.hypot(*offs.T) / m  # in units of eps, h = 1/m
        total = np.sum(partial_volume(L, 1 / m, 1.0)) / m**2
        assert abs(total - math.pi) / math.pi < tol


def test_offsets_come_in_mirror_pairs():
    offs, starts = horizon_offsets(4)
    for s, e in zip(starts[:-1], starts[1:]):
        grp = offs[s:e]
        assert len(grp) in (1, 2)
        if len(grp) == 1:
            assert grp[0, 1] == 0
        else:
            assert grp[0, 0] == grp[1, 0] and grp[0, 1] == -grp[1, 1] != 0


# -- rigid modes ------------------------------------------------------------


def test_rigid_modes_orthonormal(small):
    grid, _ = small
    modes = rigid_modes(grid)
    assert modes.valid.all()
    G = np.array([[modes.inner(a, b) for b in modes.modes] for a in modes.modes])
    assert np.allclose(G, np.eye(3), atol=1e-12, rtol=0)


def test_raw_rotation_orthogonal_to_translations_on_symmetric_grid():
    grid = build_grid(GEOM, 0.025, 0.1)
    x = grid.positions
    rot = np.stack([-x[:, 1], x[:, 0]], axis=1)
    # orthogonal to e1 by mirror symmetry
    assert abs(np.sum(rot[:, 0])) < 1e-9


def test_single_particle_rotation_flagged():
    class One:
        n = 1
        positions = np.array([[0.3, 0.0]])
        volume = 1.0

    modes = rigid_modes(One())
    assert modes.valid.tolist() == [True, True, False]
    assert np.all(modes.modes[2] == 0)


@given(c1=st.floats(-1, 1), c2=st.floats(-1, 1), om=st.floats(-1, 1))
@settings(max_examples=25, deadline=None)
def test_rigid_motion_is_strain_free(small, c1, c2, om):
    from pdcrack.dynamics import strain

    grid, bonds = small
    x = grid.positions
    w = np.stack([c1 - om * x[:, 1], c2 + om * x[:, 0]], axis=1)
    assert np.max(np.abs(strain(w, bonds)), initial=0.0) <= 1e-12
