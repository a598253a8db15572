import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdcrack.dynamics import ForceOperator
from pdcrack.fracture import (
    BondClass,
    CrackTracker,
    CrossingBonds,
    classify_bonds,
    classify_strains,
    crack_tip,
    failed_outside_strip,
    opening_profile,
    thresholds,
    zone_sets,
)
from pdcrack.geometry import SpecimenGeometry, build_bonds, build_grid

from .conftest import make_material

EPS, H = 0.1, 0.025
GEOM = SpecimenGeometry()
L0 = GEOM.notch_length


@pytest.fixture(scope="module")
def setup():
    grid = build_grid(GEOM, H, EPS)
    m = make_material(EPS)
    bonds = build_bonds(grid, EPS, m.influence)
    return grid, bonds, m, CrossingBonds.build(bonds)


def fail_crossing(bonds, crossing, sel):
    cls = np.zeros(bonds.mask.shape, dtype=np.int8)
    cls[crossing.ix[sel], crossing.iy[sel], crossing.k[sel]] = BondClass.FAILED
    return cls


def test_zero_field_is_intact(setup):
    grid, bonds, m, _ = setup
    S = ForceOperator(bonds, m).lattice_strains(np.zeros((grid.n, 2)))
    assert np.all(classify_bonds(S, bonds, m) == BondClass.INTACT)


def test_threshold_examples(setup):
    _, bonds, m, _ = setup
    S_c, S_plus = thresholds(bonds, m)
    vertical = int(np.nonzero((bonds.offsets[:, 0] == 0) & (bonds.offsets[:, 1] == 1))[0][0])
    assert classify_strains(2 * S_c[vertical], S_c[vertical], S_plus[vertical]) == BondClass.SOFTENING
    assert classify_strains(-S_plus[vertical], S_c[vertical], S_plus[vertical]) == BondClass.FAILED
    assert classify_strains(0.99 * S_c[vertical], S_c[vertical], S_plus[vertical]) == BondClass.INTACT


def test_classification_matches_raw_recompute(setup, rng):
    grid, bonds, m, _ = setup
    u = rng.normal(scale=0.3, size=(grid.n, 2))
    cls = classify_bonds(ForceOperator(bonds, m).lattice_strains(u), bonds, m)
    bx, by, k = np.nonzero(bonds.mask)
    pick = rng.choice(len(bx), size=100, replace=False)
    for b in pick:
        p = grid.index_map[bx[b], by[b]]
        q = grid.index_map[bx[b] + bonds.offsets[k[b], 0], by[b] + bonds.offsets[k[b], 1]]
        d = grid.positions[q] - grid.positions[p]
        L = np.hypot(*d)
        S = (u[q] - u[p]) @ d / L**2
        S_c, S_plus = m.r_c / np.sqrt(L), m.r_plus / np.sqrt(L)
        expected = 2 if abs(S) >= S_plus else 1 if abs(S) >= S_c else 0
        assert cls[bx[b], by[b], k[b]] == expected


def test_crossing_bonds_are_sorted_and_undirected(setup):
    grid, bonds, _, crossing = setup
    assert np.all(np.diff(crossing.xc) >= 0)
    upper = grid.positions[grid.index_map[crossing.ix, crossing.iy], 1]
    assert np.all(upper > 0)
    assert np.all(crossing.xc > GEOM.notch_core_end)


def test_tip_without_failure_is_notch_tip(setup):
    _, bonds, _, crossing = setup
    cls = np.zeros(bonds.mask.shape, dtype=np.int8)
    assert crack_tip(cls, crossing, L0) == L0


def test_tip_of_synthetic_crack(setup):
    _, bonds, _, crossing = setup
    cls = fail_crossing(bonds, crossing, crossing.xc < L0 + 0.2)
    assert abs(crack_tip(cls, crossing, L0) - (L0 + 0.2)) <= H


def test_isolated_failure_does_not_advance_tip(setup):
    _, bonds, _, crossing = setup
    far = np.nonzero(crossing.xc > L0 + 0.5)[0][:1]
    sel = np.zeros(len(crossing.xc), dtype=bool)
    sel[far] = True
    assert crack_tip(fail_crossing(bonds, crossing, sel), crossing, L0) == L0


@given(seed=st.integers(0, 2**32 - 1), p_fail=st.floats(0, 1), p_soft=st.floats(0, 1))
@settings(max_examples=30, deadline=None)
def test_failure_zone_inside_softening_zone(setup, seed, p_fail, p_soft):
    _, bonds, _, crossing = setup
    n = len(crossing.xc)
    r = np.random.default_rng(seed).random(n)
    raw = np.where(r < p_fail, 2, np.where(r < p_fail + (1 - p_fail) * p_soft, 1, 0))
    cls = np.zeros(bonds.mask.shape, dtype=np.int8)
    cls[crossing.ix, crossing.iy, crossing.k] = raw
    z = zone_sets(cls, crossing, L0)
    assert set(z.failure.tolist()) <= set(z.softening.tolist())
    assert z.softening_end >= z.tip >= L0
    assert z.process_zone >= 0


def test_empty_crack_zone_sets(setup):
    _, bonds, _, crossing = setup
    cls = np.zeros(bonds.mask.shape, dtype=np.int8)
    near = crossing.xc < L0 + 0.03
    cls[crossing.ix[near], crossing.iy[near], crossing.k[near]] = BondClass.SOFTENING
    z = zone_sets(cls, crossing, L0)
    assert len(z.failure) == 0 and len(z.softening) > 0
    assert z.process_zone == pytest.approx(z.softening_end - L0)


def test_failed_bonds_outside_strip_are_counted(setup):
    grid, bonds, _, crossing = setup
    cls = fail_crossing(bonds, crossing, crossing.xc < L0 + 0.1)
    assert failed_outside_strip(cls, bonds, EPS) == 0
    bx, by, k = np.nonzero(bonds.mask)
    x2 = grid.positions[grid.index_map[bx, by], 1]
    y2 = x2 + bonds.offsets[k, 1] * H
    stray = np.nonzero((x2 > 0.3) & (y2 > 0.3))[0][:5]
    cls[bx[stray], by[stray], k[stray]] = BondClass.FAILED
    assert failed_outside_strip(cls, bonds, EPS) == 5


# -- opening profile ----------------------------------------------------------


def test_opening_of_odd_field_is_twice_top_average(setup, rng):
    grid, *_ = setup
    x = grid.positions
    u2 = np.sign(x[:, 1]) * (1 + x[:, 0] ** 2) + x[:, 1]
    u = np.stack([np.cos(x[:, 1]), u2], axis=1)
    xs, jump = opening_profile(u, grid)
    ahead = xs > L0
    # ahead of the notch the top band averages u2 over x2 in (0, 2h]
    assert np.allclose(jump[ahead], 2 * (1 + xs[ahead] ** 2) + 2 * 0.025, rtol=1e-12)


def test_opening_of_translation_vanishes(setup):
    grid, *_ = setup
    u = np.tile([0.3, -0.7], (grid.n, 1))
    xs, jump = opening_profile(u, grid)
    assert len(xs) == grid.shape[0]
    assert np.abs(jump).max() <= 1e-15


# -- tracker ----------------------------------------------------------------


def test_tracker_counts_regressions_and_tip_decreases(setup, tmp_path):
    grid, bonds, m, crossing = setup
    tr = CrackTracker(bonds, m)
    S_plus = thresholds(bonds, m)[1]
    u = np.zeros((grid.n, 2))
    big = np.zeros(bonds.mask.shape)
    sel = crossing.xc < L0 + 0.1
    big[crossing.ix[sel], crossing.iy[sel], crossing.k[sel]] = 2 * S_plus[crossing.k[sel]]
    z1 = tr.update(0.0, big, u)
    z2 = tr.update(0.1, np.zeros_like(big), u)
    assert z1.tip > L0 and z2.tip == L0
    assert tr.state.tip_decreases == 1
    assert tr.state.regressions == np.count_nonzero(sel)
    tr.write(tmp_path)
    assert (tmp_path / "crack_tip.csv").read_text().splitlines()[0] == "t,tip"
    summary = json.loads((tmp_path / "zones.json").read_text())
    assert summary["tip_decreases"] == 1 and len(summary["snapshots"]) == 2


def test_broken_bonds_stay_failed(setup):
    grid, bonds, m, crossing = setup
    tr = CrackTracker(bonds, m)
    broken = np.zeros(bonds.mask.shape, dtype=bool)
    sel = crossing.xc < L0 + 0.1
    broken[crossing.ix[sel], crossing.iy[sel], crossing.k[sel]] = True
    z = tr.update(0.0, np.zeros(bonds.mask.shape), np.zeros((grid.n, 2)), broken=broken)
    assert z.tip == pytest.approx(crossing.xc[sel].max())
