from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slsgrid.errors import DimensionError
from slsgrid.plant import (LinearSystem, PlantModel, Topology, dump_plant, generate_plant,
                           load_plant, locality_mask, mesh_edges, spectral_radius,
                           step_dynamics)


def brute_distances(node_count, edges):
    nbrs = {i: set() for i in range(node_count)}
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    out = np.full((node_count, node_count), -1)
    for s in range(node_count):
        out[s, s] = 0
        q = deque([s])
        while q:
            i = q.popleft()
            for j in nbrs[i]:
                if out[s, j] < 0:
                    out[s, j] = out[s, i] + 1
                    q.append(j)
    return out


def test_single_node_plant():
    p = generate_plant(1, 1, seed=3, dt=0.2, u_max=1.0)
    assert p.N == 1
    assert p.node_susceptance(0) == 0.0
    np.testing.assert_array_equal(p.A, [[1.0, 0.2], [0.0, 1.0]])
    assert spectral_radius(p) == pytest.approx(1.0, abs=1e-6)


def test_five_by_five_mesh():
    p = generate_plant(5, 5, seed=11)
    assert p.N == 25
    assert p.topology.is_connected()
    assert max(p.topology.degree(i) for i in range(25)) <= 4
    mesh = set(mesh_edges(5, 5))
    assert set(p.topology.edges) <= mesh


def test_path_graph_adjacency():
    p = generate_plant(3, 1, seed=7)
    assert p.topology.neighbors(1) == (0, 2)
    assert p.topology.edges == ((0, 1), (1, 2))


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_generated_graphs_connected(seed, rows, cols):
    p = generate_plant(rows, cols, seed=seed)
    assert p.topology.is_connected()
    assert np.all((p.susceptance >= 0.5) & (p.susceptance <= 1.0))
    assert np.all((p.inertia_inv >= 0.0) & (p.inertia_inv <= 10.0))


def test_blocks_match_swing_equation():
    p = generate_plant(3, 3, seed=5)
    dt = p.dt
    S = p.susceptance_matrix
    for i in range(p.N):
        m_inv = p.inertia_inv[i]
        b_i = sum(S[i, j] for j in p.topology.neighbors(i))
        np.testing.assert_allclose(p.A[2 * i:2 * i + 2, 2 * i:2 * i + 2],
                                   [[1, dt], [-b_i * m_inv * dt, 1]])
        for j in range(p.N):
            blk = p.A[2 * i:2 * i + 2, 2 * j:2 * j + 2]
            if j in p.topology.neighbors(i):
                np.testing.assert_allclose(blk, [[0, 0], [S[i, j] * m_inv * dt, 0]])
            elif j != i:
                assert not blk.any()
    np.testing.assert_array_equal(S, S.T)


def test_spectral_radius_two_node_matches_characteristic_polynomial():
    p = generate_plant(1, 2, seed=2)
    coeffs = np.poly(p.A)
    assert spectral_radius(p) == pytest.approx(np.max(np.abs(np.roots(coeffs))), rel=1e-6)


def test_default_scale_plants_are_mostly_unstable():
    radii = [spectral_radius(generate_plant(5, 5, seed=s)) for s in range(10)]
    assert sum(r > 1.0 for r in radii) >= 8


def test_locality_mask_examples():
    topo = Topology(3, ((0, 1), (1, 2)))
    m0 = locality_mask(topo, 0)
    np.testing.assert_array_equal(m0.state_support, np.kron(np.eye(3, dtype=bool), np.ones((2, 2), bool)))
    m1 = locality_mask(topo, 1)
    near = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], bool)
    np.testing.assert_array_equal(m1.state_support, np.kron(near, np.ones((2, 2), bool)))
    np.testing.assert_array_equal(m1.input_support, np.kron(near, np.ones((1, 2), bool)))
    assert locality_mask(topo, topo.diameter).is_full
    assert locality_mask(topo, None).is_full


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 4), st.integers(0, 4))
def test_locality_mask_monotone_and_bfs(seed, d1, d2):
    p = generate_plant(3, 4, seed=seed)
    dist = brute_distances(p.N, p.topology.edges)
    np.testing.assert_array_equal(p.topology.distances, dist)
    lo, hi = sorted((d1, d2))
    assert locality_mask(p.topology, hi).contains(locality_mask(p.topology, lo))


def test_topology_rejects_bad_edges():
    with pytest.raises(ValueError):
        Topology(2, ((0, 0),))
    with pytest.raises(ValueError):
        Topology(2, ((0, 1), (1, 0)))


def test_step_dynamics_examples():
    p = generate_plant(1, 1, seed=0)
    np.testing.assert_array_equal(step_dynamics(p, np.zeros(2), np.zeros(1), np.zeros(1)), 0)
    np.testing.assert_array_equal(step_dynamics(p, [0.7, 0.0], [0.0], [0.0]), [0.7, 0.0])
    with pytest.raises(DimensionError):
        step_dynamics(p, np.zeros(3), np.zeros(1), np.zeros(1))


def test_step_dynamics_matches_per_node_loop():
    p = generate_plant(2, 2, seed=9)
    rng = np.random.default_rng(0)
    x, u, w = rng.normal(size=8), rng.normal(size=4), rng.normal(size=4)
    expect = np.zeros(8)
    S = p.susceptance_matrix
    for i in range(4):
        th, om = x[2 * i], x[2 * i + 1]
        b_i = S[i].sum()
        coupling = sum(S[i, j] * x[2 * j] for j in p.topology.neighbors(i))
        expect[2 * i] = th + p.dt * om
        expect[2 * i + 1] = om + p.dt * p.inertia_inv[i] * (coupling - b_i * th) + u[i] + w[i]
    np.testing.assert_allclose(step_dynamics(p, x, u, w), expect, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_step_dynamics_linear(seed):
    p = generate_plant(2, 3, seed=seed)
    rng = np.random.default_rng(seed)
    a = [rng.normal(size=k) for k in (p.n, p.p, p.p)]
    b = [rng.normal(size=k) for k in (p.n, p.p, p.p)]
    lhs = step_dynamics(p, *(x + y for x, y in zip(a, b)))
    rhs = step_dynamics(p, *a) + step_dynamics(p, *b) - step_dynamics(p, np.zeros(p.n), np.zeros(p.p), np.zeros(p.p))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_row_block_depends_on_neighbors_only():
    p = generate_plant(4, 4, seed=1)
    for i in range(p.N):
        allowed = set(p.topology.neighbors(i)) | {i}
        for j in range(p.N):
            if j not in allowed:
                assert not p.A[2 * i:2 * i + 2, 2 * j:2 * j + 2].any()


def test_plant_round_trip():
    p = generate_plant(3, 4, seed=21, dt=0.15, u_max=2.5)
    q = load_plant(dump_plant(p))
    np.testing.assert_array_equal(p.A, q.A)
    assert q.u_max == 2.5 and q.topology == p.topology
    assert dump_plant(q) == dump_plant(p)


def test_validation():
    topo = Topology(2, ((0, 1),))
    with pytest.raises(ValueError):
        PlantModel(topo, 0.2, [1.0, 1.0], [0.7], u_max=0.0)
    with pytest.raises(DimensionError):
        PlantModel(topo, 0.2, [1.0], [0.7], u_max=1.0)
    with pytest.raises(DimensionError):
        LinearSystem(np.eye(2), np.ones((3, 1)))
