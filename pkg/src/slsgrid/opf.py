"""Random load profiles, DC optimal power flow, and equilibrium setpoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .optimization import solve_eq_ls
from .plant import STATE_DIM


@dataclass(frozen=True)
class LoadProfile:
    net_injection: np.ndarray


@dataclass(frozen=True)
class Setpoint:
    """Equilibrium state (phases, zero frequencies) and the input that holds it."""

    x_star: np.ndarray
    u_star: np.ndarray

    @property
    def phases(self):
        return self.x_star[0::STATE_DIM]


def sample_load_profile(topology, seed, magnitude):
    """I.i.d. uniform injections on ``[-magnitude, magnitude]``, recentered to sum to zero."""
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    rng = np.random.default_rng(seed)
    inj = rng.uniform(-magnitude, magnitude, size=topology.node_count)
    return LoadProfile(inj - inj.mean())


def laplacian(topology, susceptances):
    N = topology.node_count
    L = np.zeros((N, N))
    for (i, j), b in zip(topology.edges, susceptances):
        L[i, j] -= b
        L[j, i] -= b
        L[i, i] += b
        L[j, j] += b
    return L


def solve_dc_opf(topology, susceptances, loads, plant=None):
    """Least-cost dispatch with DC power flow, gauge ``theta_0 = 0``.

    Variables are phases ``theta`` and dispatch ``g`` with cost ``sum g_i^2``,
    flow balance ``L theta = loads + g`` and ``sum g = -sum loads``. When
    ``plant`` is given the holding input ``u_star`` is filled in; otherwise it
    is left as zeros.
    """
    if not topology.is_connected():
        raise InfeasibleError("DC power flow needs a connected network (reduced Laplacian "
                              "is singular)", where="topology")
    N = topology.node_count
    L = laplacian(topology, susceptances)
    p = np.asarray(loads.net_injection, dtype=float)
    W = np.zeros((2 * N, 2 * N))
    W[N:, N:] = np.eye(N)
    E = np.zeros((N + 2, 2 * N))
    E[:N, :N] = L
    E[:N, N:] = -np.eye(N)
    E[N, N:] = 1.0
    E[N + 1, 0] = 1.0
    h = np.concatenate([p, [-p.sum(), 0.0]])
    labels = [f"flow balance at node {i}" for i in range(N)] + ["dispatch balance", "gauge"]
    z = solve_eq_ls(W, E, h, labels)
    theta = z[:N]
    x_star = np.zeros(STATE_DIM * N)
    x_star[0::STATE_DIM] = theta
    u_star = steady_state_input(plant, theta) if plant is not None else np.zeros(N)
    return Setpoint(x_star, u_star)


def steady_state_input(plant, x_star_phases):
    """Input that makes ``x*`` (given phases, zero frequencies) an equilibrium.

    Only the frequency rows of ``A x* + B u* = x*`` involve ``u*``, and ``B``
    is the identity on them, so ``u*`` is the frequency-row residual of
    ``(I - A) x*``.
    """
    theta = np.asarray(x_star_phases, dtype=float)
    x_star = np.zeros(plant.n)
    x_star[0::STATE_DIM] = theta
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    rhs = x_star - A @ x_star
    freq = np.arange(1, plant.n, STATE_DIM)
    Bf = B[freq]
    assert np.allclose(Bf, np.eye(plant.p)), "input matrix must drive each frequency row"
    return rhs[freq].copy()
