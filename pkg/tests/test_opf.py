import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slsgrid.errors import InfeasibleError
from slsgrid.opf import (LoadProfile, laplacian, sample_load_profile, solve_dc_opf,
                         steady_state_input)
from slsgrid.plant import PlantModel, Topology, generate_plant


def test_zero_loads_give_zero_setpoint():
    p = generate_plant(3, 3, seed=0)
    sp = solve_dc_opf(p.topology, p.susceptance, sample_load_profile(p.topology, 1, 0.0), p)
    assert not sp.x_star.any() and not sp.u_star.any()


def test_two_node_transfer():
    topo = Topology(2, ((0, 1),))
    b, p = 0.8, 0.3
    sp = solve_dc_opf(topo, np.array([b]), LoadProfile(np.array([p, -p])))
    assert sp.phases[0] - sp.phases[1] == pytest.approx(p / b, abs=1e-12)
    assert sp.phases[0] == pytest.approx(0.0, abs=1e-14)


def test_load_profile_balances_and_varies():
    topo = Topology(4, ((0, 1), (1, 2), (2, 3)))
    a = sample_load_profile(topo, 1, 2.0).net_injection
    b = sample_load_profile(topo, 2, 2.0).net_injection
    assert abs(a.sum()) < 1e-12
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_load_profile(topo, 0, -1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_power_balance_and_equilibrium(seed):
    p = generate_plant(3, 4, seed=seed)
    sp = solve_dc_opf(p.topology, p.susceptance, sample_load_profile(p.topology, seed, 1.0), p)
    L = laplacian(p.topology, p.susceptance)
    assert abs((L @ sp.phases).sum()) < 1e-10
    assert sp.phases[0] == pytest.approx(0.0, abs=1e-14)
    assert not sp.x_star[1::2].any()
    resid = p.A @ sp.x_star + p.B @ sp.u_star - sp.x_star
    assert np.abs(resid).max() <= 1e-12


def test_balanced_loads_need_no_dispatch():
    # a feasible flow exists, so the unit dispatch cost is zero and L theta equals the loads
    p = generate_plant(2, 3, seed=4)
    loads = sample_load_profile(p.topology, 7, 1.0)
    sp = solve_dc_opf(p.topology, p.susceptance, loads, p)
    np.testing.assert_allclose(laplacian(p.topology, p.susceptance) @ sp.phases,
                               loads.net_injection, atol=1e-12)


def test_gauge_shift_keeps_flows():
    p = generate_plant(3, 3, seed=2)
    sp = solve_dc_opf(p.topology, p.susceptance, sample_load_profile(p.topology, 3, 1.0))
    L = laplacian(p.topology, p.susceptance)
    np.testing.assert_allclose(L @ (sp.phases + 0.7), L @ sp.phases, atol=1e-12)


def test_disconnected_is_rejected():
    with pytest.raises(InfeasibleError):
        solve_dc_opf(Topology(3, ((0, 1),)), np.array([1.0]), LoadProfile(np.zeros(3)))


def test_steady_state_input_examples():
    single = PlantModel(Topology(1, ()), 0.2, np.array([3.0]), np.zeros(0), u_max=1.0)
    assert steady_state_input(single, [1.5])[0] == 0.0
    p = generate_plant(2, 2, seed=5)
    assert not steady_state_input(p, np.zeros(4)).any()
    theta = np.random.default_rng(0).normal(size=4)
    u = steady_state_input(p, theta)
    x = np.zeros(8)
    x[0::2] = theta
    assert np.abs(p.A @ x + p.B @ u - x).max() <= 1e-12
    # per-node formula: dt m_i^-1 (b_i theta_i - sum_j b_ij theta_j)
    S = p.susceptance_matrix
    expect = p.dt * p.inertia_inv * (S.sum(1) * theta - S @ theta)
    np.testing.assert_allclose(u, expect, atol=1e-14)
