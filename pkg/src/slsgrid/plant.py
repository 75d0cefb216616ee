"""Networked LTI plants: mesh topologies, swing-equation dynamics, locality masks.

State ordering is interleaved per node, ``[theta_0, omega_0, theta_1, omega_1, ...]``,
and nodes are numbered row-major over the mesh.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import DimensionError, NumericalError

STATE_DIM = 2
INPUT_DIM = 1
UNBOUNDED = -1  # hop radius sentinel for "no locality constraint"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph over ``node_count`` nodes."""

    node_count: int
    edges: tuple
    rows: int = 0
    cols: int = 0

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    @cached_property
    def adjacency(self):
        nbrs = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    def neighbors(self, i):
        return self.adjacency[i]

    def bfs(self, source):
        """Hop distances from ``source``; unreachable nodes get -1."""
        dist = np.full(self.node_count, -1, dtype=int)
        dist[source] = 0
        queue = deque([source])
        while queue:
            i = queue.popleft()
            for j in self.adjacency[i]:
                if dist[j] < 0:
                    dist[j] = dist[i] + 1
                    queue.append(j)
        return dist

    @cached_property
    def distances(self):
        d = np.stack([self.bfs(i) for i in range(self.node_count)])
        d.setflags(write=False)
        return d

    def is_connected(self):
        return bool(np.all(self.bfs(0) >= 0))

    @property
    def diameter(self):
        d = self.distances
        if np.any(d < 0):
            return np.inf
        return int(d.max())

    def degree(self, i):
        return len(self.adjacency[i])


def mesh_edges(rows, cols):
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return edges


def random_mesh_topology(rows, cols, rng, extra_edge_prob=0.3):
    """Uniform spanning tree of the mesh plus i.i.d. extra mesh edges.

    The tree is drawn with Wilson's loop-erased random walk, so the result is
    always connected.
    """
    n = rows * cols
    all_edges = mesh_edges(rows, cols)
    nbrs = [[] for _ in range(n)]
    for i, j in all_edges:
        nbrs[i].append(j)
        nbrs[j].append(i)

    in_tree = np.zeros(n, dtype=bool)
    in_tree[int(rng.integers(n))] = True
    nxt = np.full(n, -1, dtype=int)
    tree = set()
    for start in range(n):
        i = start
        while not in_tree[i]:
            nxt[i] = nbrs[i][int(rng.integers(len(nbrs[i])))]
            i = nxt[i]
        i = start
        while not in_tree[i]:
            in_tree[i] = True
            tree.add((min(i, nxt[i]), max(i, nxt[i])))
            i = nxt[i]

    edges = set(tree)
    for e in all_edges:
        if e not in tree and rng.random() < extra_edge_prob:
            edges.add(e)
    return Topology(node_count=n, edges=tuple(sorted(edges)), rows=rows, cols=cols)


@dataclass(frozen=True)
class LinearSystem:
    """Plain ``x+ = A x + B u + w`` system with no network structure."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _frozen(np.atleast_2d(self.A))
        B = _frozen(np.atleast_2d(self.B))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise DimensionError(f"incompatible A {A.shape} and B {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class PlantModel:
    """Undamped linearized swing-equation network.

    Per node ``i`` the update is ``x_i+ = A_ii x_i + sum_j A_ij x_j + [0, 1]^T (w_i + u_i)``
    with ``A_ii = [[1, dt], [-b_i m_i^-1 dt, 1]]`` and
    ``A_ij = [[0, 0], [b_ij m_i^-1 dt, 0]]``.
    """

    topology: Topology
    dt: float
    inertia_inv: np.ndarray
    susceptance: np.ndarray
    u_max: float
    state_dim_per_node: int = field(default=STATE_DIM, init=False)
    input_dim_per_node: int = field(default=INPUT_DIM, init=False)

    def __post_init__(self):
        inv_m = _frozen(self.inertia_inv)
        b = _frozen(self.susceptance)
        if inv_m.shape != (self.topology.node_count,):
            raise DimensionError("inertia_inv must have one entry per node")
        if b.shape != (len(self.topology.edges),):
            raise DimensionError("susceptance must have one entry per edge")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        object.__setattr__(self, "inertia_inv", inv_m)
        object.__setattr__(self, "susceptance", b)

    @property
    def N(self):
        return self.topology.node_count

    @property
    def n(self):
        return STATE_DIM * self.N

    @property
    def p(self):
        return INPUT_DIM * self.N

    @cached_property
    def susceptance_matrix(self):
        S = np.zeros((self.N, self.N))
        for (i, j), b in zip(self.topology.edges, self.susceptance):
            S[i, j] = S[j, i] = b
        S.setflags(write=False)
        return S

    @cached_property
    def laplacian(self):
        S = self.susceptance_matrix
        L = np.diag(S.sum(axis=1)) - S
        L.setflags(write=False)
        return L

    def node_susceptance(self, i):
        """``b_i``, the sum of incident line susceptances."""
        return float(self.susceptance_matrix[i].sum())

    def a_block(self, i, j):
        dt, inv_m = self.dt, self.inertia_inv[i]
        if i == j:
            return np.array([[1.0, dt], [-self.node_susceptance(i) * inv_m * dt, 1.0]])
        b_ij = self.susceptance_matrix[i, j]
        if b_ij == 0.0:
            return np.zeros((2, 2))
        return np.array([[0.0, 0.0], [b_ij * inv_m * dt, 0.0]])

    @property
    def b_block(self):
        return np.array([[0.0], [1.0]])

    @cached_property
    def A(self):
        A = np.zeros((self.n, self.n))
        for i in range(self.N):
            A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = self.a_block(i, i)
            for j in self.topology.neighbors(i):
                A[2 * i:2 * i + 2, 2 * j:2 * j + 2] = self.a_block(i, j)
        A.setflags(write=False)
        return A

    @cached_property
    def B(self):
        B = np.zeros((self.n, self.p))
        B[1::2, :] = np.eye(self.N)
        B.setflags(write=False)
        return B

    def with_u_max(self, u_max):
        return replace(self, u_max=float(u_max))

    def state_node(self, k):
        return k // STATE_DIM


def generate_plant(rows, cols, seed, dt=0.2, u_max=1.0, extra_edge_prob=0.3):
    """Random connected swing-equation plant over a ``rows x cols`` mesh.

    Line susceptances are drawn from U[0.5, 1] and inverse inertias from U[0, 10].
    """
    if rows * cols < 1:
        raise ValueError("mesh must contain at least one node")
    rng = np.random.default_rng(seed)
    topo = random_mesh_topology(rows, cols, rng, extra_edge_prob)
    susceptance = rng.uniform(0.5, 1.0, size=len(topo.edges))
    inertia_inv = rng.uniform(0.0, 10.0, size=topo.node_count)
    return PlantModel(topology=topo, dt=float(dt), inertia_inv=inertia_inv,
                      susceptance=susceptance, u_max=float(u_max))


def spectral_radius(plant):
    try:
        eig = np.linalg.eigvals(np.asarray(plant.A))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


@dataclass(frozen=True)
class LocalityMask:
    """Sparsity supports for ``Phi_x`` (n x n) and ``Phi_u`` (p x n).

    ``d == UNBOUNDED`` marks the all-true mask.
    """

    d: int
    state_support: np.ndarray
    input_support: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state_support", _frozen(self.state_support, bool))
        object.__setattr__(self, "input_support", _frozen(self.input_support, bool))
        n = self.state_support.shape[1]
        if self.state_support.shape != (n, n) or self.input_support.shape[1] != n:
            raise DimensionError("mask shapes do not match")

    @classmethod
    def full(cls, n, p):
        return cls(UNBOUNDED, np.ones((n, n), bool), np.ones((p, n), bool))

    @property
    def is_full(self):
        return bool(self.state_support.all() and self.input_support.all())

    def contains(self, other):
        return bool(np.all(self.state_support >= other.state_support)
                    and np.all(self.input_support >= other.input_support))


def locality_mask(topology, d):
    """d-hop supports: block (i, j) is allowed iff dist(i, j) <= d.

    Pass ``d=None`` or a negative ``d`` for the unconstrained mask.
    """
    N = topology.node_count
    if d is None or d < 0:
        return LocalityMask.full(STATE_DIM * N, INPUT_DIM * N)
    dist = topology.distances
    near = (dist >= 0) & (dist <= d)
    state = np.kron(near, np.ones((STATE_DIM, STATE_DIM), bool))
    inputs = np.kron(near, np.ones((INPUT_DIM, STATE_DIM), bool))
    return LocalityMask(int(d), state, inputs)


def step_dynamics(plant, x, u, w):
    """``x+ = A x + B (u + w)`` with per-node disturbance ``w``; no saturation."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (plant.n,) or u.shape != (plant.p,) or w.shape != (plant.p,):
        raise DimensionError(
            f"expected x {(plant.n,)}, u and w {(plant.p,)}; got {x.shape}, {u.shape}, {w.shape}")
    return plant.A @ x + plant.B @ (u + w)


# -- text serialization -------------------------------------------------------

_PLANT_HEADER = "# slsgrid plant v1"


def _fmt(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dump_plant(plant):
    topo = plant.topology
    lines = [
        _PLANT_HEADER,
        f"rows = {topo.rows}",
        f"cols = {topo.cols}",
        f"node_count = {topo.node_count}",
        f"dt = {plant.dt!r}",
        f"u_max = {plant.u_max!r}",
        "edges = " + " ".join(f"{i} {j}" for i, j in topo.edges),
        "susceptance = " + _fmt(plant.susceptance),
        "inertia_inv = " + _fmt(plant.inertia_inv),
    ]
    return "\n".join(lines) + "\n"


def load_plant(text):
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.split()
    ints = [int(v) for v in fields.get("edges", [])]
    edges = tuple(zip(ints[0::2], ints[1::2]))
    topo = Topology(node_count=int(fields["node_count"][0]), edges=edges,
                    rows=int(fields["rows"][0]), cols=int(fields["cols"][0]))
    return PlantModel(topology=topo, dt=float(fields["dt"][0]),
                      inertia_inv=[float(v) for v in fields["inertia_inv"]],
                      susceptance=[float(v) for v in fields.get("susceptance", [])],
                      u_max=float(fields["u_max"][0]))
