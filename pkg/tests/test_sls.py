import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slsgrid.errors import DimensionError, InfeasibleError
from slsgrid.plant import LinearSystem, generate_plant, locality_mask
from slsgrid.runtime import lqr_riccati
from slsgrid.sls import (SystemResponse, convolve_response, dump_response, h2_cost,
                         load_response, runtime_init, runtime_step, simulate_closed_loop,
                         synthesize_h2, validate_achievability)


def random_achievable(A, B, T, rng):
    """Random Phi_u blocks, Phi_x from the recursion, last Phi_u closing the tail.

    The closing block solves B Phi_u(T) = -A Phi_x(T), which is exact for the
    square invertible B used here.
    """
    n, p = B.shape
    px = [np.eye(n)]
    pu = []
    for _ in range(T - 1):
        pu.append(rng.normal(size=(p, n)))
        px.append(A @ px[-1] + B @ pu[-1])
    pu.append(-np.linalg.lstsq(B, A @ px[-1], rcond=None)[0])
    return SystemResponse(np.array(px), np.array(pu))


def test_open_loop_deadbeat_residual_zero():
    plant = LinearSystem(np.zeros((2, 2)), np.eye(2))
    px = np.zeros((3, 2, 2))
    px[0] = np.eye(2)
    r = SystemResponse(px, np.zeros((3, 2, 2)))
    assert validate_achievability(plant, r) == 0.0
    bad = SystemResponse(2 * px, np.zeros((3, 2, 2)))
    assert validate_achievability(plant, bad) >= 1.0


def test_scalar_truncation_residual():
    plant = LinearSystem([[0.5]], [[1.0]])
    px = np.array([[[0.5 ** k]] for k in range(4)])
    r = SystemResponse(px, np.zeros((4, 1, 1)))
    assert validate_achievability(plant, r) == pytest.approx(0.0625, abs=1e-15)


def test_trivial_synthesis_for_zero_dynamics():
    plant = LinearSystem(np.zeros((3, 3)), np.eye(3))
    r = synthesize_h2(plant, 4, q_weight=2 * np.eye(3), r_weight=np.eye(3))
    np.testing.assert_allclose(r.phi_x[0], np.eye(3))
    assert np.abs(r.phi_x[1:]).max() < 1e-14 and np.abs(r.phi_u).max() < 1e-14


@pytest.mark.parametrize("d", [1, 2, None])
def test_synthesis_achievable_and_masked(d):
    p = generate_plant(4, 4, seed=3)
    mask = locality_mask(p.topology, d)
    r = synthesize_h2(p, 12, mask)
    assert validate_achievability(p, r) <= 1e-8
    assert r.achievable_tol is not None
    sx, su = r.support()
    assert not np.any(sx & ~mask.state_support)
    assert not np.any(su & ~mask.input_support)


def test_zero_hop_mask_is_infeasible_on_connected_grid():
    p = generate_plant(2, 2, seed=0)
    with pytest.raises(InfeasibleError) as info:
        synthesize_h2(p, 10, locality_mask(p.topology, 0))
    assert "increase d or T" in str(info.value)


def test_unconstrained_synthesis_matches_finite_horizon_lqr_structure():
    # with a deadbeat tail the oracle is a Riccati recursion with a huge terminal weight
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3)) * 0.6
    B = rng.normal(size=(3, 3))
    plant = LinearSystem(A, B)
    T = 6
    r = synthesize_h2(plant, T)
    lqr = lqr_riccati(plant, np.eye(3), np.eye(3), T, terminal_weight=1e12 * np.eye(3))
    # impulse responses of the time-varying LQR loop, gains reused per column
    px = [np.eye(3)]
    pu = []
    for k in range(T):
        K = lqr.gains[k]
        pu.append(-K @ px[-1])
        px.append((A - B @ K) @ px[-1])
    np.testing.assert_allclose(r.phi_u, np.array(pu), atol=1e-5)
    np.testing.assert_allclose(r.phi_x, np.array(px[:-1]), atol=1e-5)


def test_cost_monotone_in_d_and_T():
    p = generate_plant(3, 3, seed=8)
    costs_d = [h2_cost(synthesize_h2(p, 12, locality_mask(p.topology, d)), np.eye(p.n), np.eye(p.p))
               for d in (1, 2, 3, None)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(costs_d, costs_d[1:]))
    costs_T = [h2_cost(synthesize_h2(p, T), np.eye(p.n), np.eye(p.p)) for T in (6, 9, 12)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(costs_T, costs_T[1:]))


def test_runtime_init_and_zero_input():
    p = generate_plant(2, 2, seed=1)
    r = synthesize_h2(p, 8)
    st0 = runtime_init(r, np.zeros(p.n))
    assert not st0.w_hat_buffer.any() and not st0.x_hat_next.any()
    x0 = np.zeros(p.n)
    x0[0] = 1.0
    st1 = runtime_init(r, x0)
    np.testing.assert_array_equal(st1.x_hat_next, x0)
    # first estimate is zero, so is the first input
    assert not runtime_step(st1, r, x0).any()
    with pytest.raises(DimensionError):
        runtime_init(r, np.zeros(3))


def test_zero_disturbance_gives_zero_input():
    p = generate_plant(2, 2, seed=1)
    r = synthesize_h2(p, 8)
    xs, us = simulate_closed_loop(p, r, np.zeros((20, p.n)))
    assert not xs.any() and not us.any()


def test_impulse_reproduces_columns():
    p = generate_plant(2, 3, seed=4)
    T = 10
    r = synthesize_h2(p, T, locality_mask(p.topology, 2))
    for j in (0, 5, 11):
        w = np.zeros((T + 5, p.n))
        w[0, j] = 1.0
        xs, us = simulate_closed_loop(p, r, w)
        for k in range(1, T + 1):
            np.testing.assert_allclose(xs[k], r.phi_x[k - 1][:, j], atol=1e-12)
            np.testing.assert_allclose(us[k], r.phi_u[k - 1][:, j], atol=1e-12)
        assert np.abs(xs[T + 1:]).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_convolution_equivalence_any_achievable_response(seed, T):
    rng = np.random.default_rng(seed)
    n = 3
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, n)) + 2 * np.eye(n)
    r = random_achievable(A, B, T, rng)
    plant = LinearSystem(A, B)
    assert validate_achievability(plant, r) < 1e-8 * max(1.0, np.abs(r.phi_x).max())
    w = rng.normal(size=(15, n))
    xs, us = simulate_closed_loop(plant, r, w)
    xc, uc = convolve_response(r, w)
    scale = max(1.0, np.abs(xc).max())
    np.testing.assert_allclose(xs, xc, atol=1e-9 * scale)
    np.testing.assert_allclose(us, uc[:-1], atol=1e-9 * scale)


def test_locality_containment_d2():
    p = generate_plant(5, 5, seed=2)
    r = synthesize_h2(p, 15, locality_mask(p.topology, 2))
    dist = p.topology.distances
    for j in range(p.N):
        far = np.flatnonzero(dist[j] > 2)
        idx = np.concatenate([2 * far, 2 * far + 1])
        # the impulse response x(k) = Phi_x(k) e_j is exactly zero far away
        assert not r.phi_x[:, idx][:, :, 2 * j + 1].any()
        w = np.zeros((20, p.n))
        w[0, 2 * j + 1] = 1.0
        xs, _ = simulate_closed_loop(p, r, w)
        # simulated plant: only rounding from the boundary cancellation leaks out
        assert np.abs(xs[:, idx]).max() <= 1e-14 * np.abs(xs).max()


def test_response_serialization_round_trip():
    p = generate_plant(2, 2, seed=6)
    r = synthesize_h2(p, 5, locality_mask(p.topology, 1))
    text = dump_response(r)
    q = load_response(text)
    np.testing.assert_array_equal(q.phi_x, r.phi_x)
    np.testing.assert_array_equal(q.phi_u, r.phi_u)
    assert dump_response(q) == text


def test_parallel_columns_match_serial():
    from concurrent.futures import ThreadPoolExecutor
    p = generate_plant(3, 3, seed=12)
    mask = locality_mask(p.topology, 2)
    a = synthesize_h2(p, 10, mask)
    timings = []
    with ThreadPoolExecutor(2) as pool:
        b = synthesize_h2(p, 10, mask, executor=pool, timings=timings)
    np.testing.assert_array_equal(a.phi_x, b.phi_x)
    assert sum(c for c, _ in timings) == p.n
