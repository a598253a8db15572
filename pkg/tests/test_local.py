import math

import numpy as np
import pytest

from pdcrack.dynamics import LoadProgram
from pdcrack.geometry import SpecimenGeometry
from pdcrack.local import (
    CFLError,
    LocalProblem,
    compare_fields,
    local_initialize,
    local_step,
    run_local,
)
from pdcrack.material import elasticity_tensor

C1 = elasticity_tensor(1.0, 1.0)  # lambda = mu = 1, so lambda + 2 mu = 3


def specimen(a, b, theta=None):
    theta = 0.1 * min(a, b) if theta is None else theta
    return SpecimenGeometry(a=a, b=b, notch_length=0.1 * a, notch_halfwidth=0.01 * b, corner_radius=theta)


def box(n1, n2, h, periodic, damping=0.0, load=None, theta=None):
    """Fully active rectangle of cells; the notch of the nominal geometry is ignored."""
    cells = np.ones((n1, n2), dtype=bool)
    return LocalProblem(specimen(n1 * h, n2 * h, theta), C1, 1.0, load or LoadProgram(g_max=0.0), h,
                        periodic=periodic, damping=damping, cells=cells)


def run_to(prob, st, T, dt):
    n = math.ceil(T / dt - 1e-12)
    dt = T / n
    for _ in range(n):
        st = local_step(st, prob, dt)
    return st


def test_zero_data_stays_zero():
    prob = LocalProblem(SpecimenGeometry(), C1, 1.0, LoadProgram(g_max=0.0), 0.05)
    times, us, _ = run_local(prob, 0.2, 0.1)
    assert len(times) == 3
    assert all(np.all(u == 0) for u in us)


def test_p_wave_in_periodic_box():
    n1, h = 64, 1 / 64
    prob = box(n1, 2, h, (True, True))
    k = 2 * math.pi
    omega = k * math.sqrt(3.0)
    x1 = prob.node_xy[:, 0]
    u0 = np.stack([np.sin(k * x1), np.zeros_like(x1)], axis=1)
    st = local_initialize(prob, u0=u0)
    T = 2 * math.pi / omega
    st = run_to(prob, st, T, 0.25 * prob.cfl_dt)
    exact = u0 * math.cos(omega * T)
    err = np.linalg.norm(st.u - exact) / np.linalg.norm(exact)
    assert err < 0.01


def test_static_uniaxial_tension_with_damping():
    g = 0.01
    n, h = 20, 0.05
    load = LoadProgram(g_max=g, ramp_time=0.5)
    prob = box(n, n, h, (True, False), damping=8.0, load=load, theta=1e-9)
    st = run_to(prob, local_initialize(prob), 15.0, 0.5 * prob.cfl_dt)
    assert np.abs(st.v).max() < 1e-6
    # laterally constrained by periodicity: e22 = g / (lambda + 2 mu)
    x2 = prob.node_xy[:, 1]
    slope = np.polyfit(x2, st.u[:, 1], 1)[0]
    assert slope == pytest.approx(g / 3.0, rel=0.02)
    sig = prob.stress(st.u)
    assert np.allclose(sig[:, 1], g, rtol=0.03)


def test_energy_error_is_second_order():
    prob = box(16, 16, 1 / 16, (False, False))
    x = prob.node_xy
    u0 = 1e-2 * np.stack([np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1]) * x[:, 0]], axis=1)
    drift = []
    for dt in (0.4 * prob.cfl_dt, 0.2 * prob.cfl_dt):
        st = local_initialize(prob, u0=u0)
        E0 = prob.energy(st.u, st.v)
        worst = 0.0
        for _ in range(round(1.0 / dt)):
            st = local_step(st, prob, dt)
            worst = max(worst, abs(prob.energy(st.u, st.v) - E0))
        drift.append(worst / E0)
    assert math.log2(drift[0] / drift[1]) == pytest.approx(2.0, abs=0.3)


def node_mirror(prob):
    xy = prob.node_xy
    key = {(round(a / prob.spacing), round(b / prob.spacing)): i for i, (a, b) in enumerate(xy)}
    return np.array([key[(round(a / prob.spacing), round(-b / prob.spacing))] for a, b in xy])


def test_notched_response_is_mirror_symmetric():
    load = LoadProgram(g_max=0.05, ramp_time=0.1, shape="bump")
    prob = LocalProblem(SpecimenGeometry(), C1, 1.0, load, 0.05)
    _, us, _ = run_local(prob, 0.4, 0.2)
    mir = node_mirror(prob)
    u = us[-1]
    assert np.abs(u).max() > 0
    assert np.allclose(u[mir, 0], u[:, 0], atol=1e-14)
    assert np.allclose(u[mir, 1], -u[:, 1], atol=1e-14)


def test_step_beyond_cfl_bound_rejected():
    prob = box(8, 8, 1 / 8, (False, False))
    st = local_initialize(prob)
    with pytest.raises(CFLError):
        local_step(st, prob, 1.01 * prob.cfl_dt)


def test_compare_fields():
    rng = np.random.default_rng(0)
    u = [rng.normal(size=(50, 2)) for _ in range(3)]
    mask = np.ones(50, dtype=bool)
    assert compare_fields(u, u, mask)["sup"] == 0.0
    v = [1.1 * w for w in u]
    assert compare_fields(v, u, mask)["sup"] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        compare_fields(u, u, mask, times_nonlocal=[0, 1, 2], times_local=[0, 0.5, 1])
    with pytest.raises(ValueError):
        compare_fields(u[:2], u, mask)
