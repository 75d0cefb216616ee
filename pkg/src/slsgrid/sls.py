"""Finite-horizon system level synthesis for LTI plants.

A response is stored as spectral blocks ``phi_x[k-1] = Phi_x(k)`` and
``phi_u[k-1] = Phi_u(k)`` for ``k = 1..T``, so that
``x(t) = sum_k Phi_x(k) w(t-k)`` and ``u(t) = sum_k Phi_u(k) w(t-k)``.
Achievability is ``Phi_x(1) = I``, ``Phi_x(k+1) = A Phi_x(k) + B Phi_u(k)`` and
the deadbeat closure ``A Phi_x(T) + B Phi_u(T) = 0``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from .errors import DimensionError, InfeasibleError
from .kernels import Pattern
from .optimization import solve_eq_ls, solve_eq_ls_banded
from .plant import LocalityMask


@dataclass(frozen=True)
class SystemResponse:
    phi_x: np.ndarray
    phi_u: np.ndarray
    achievable_tol: float | None = None

    def __post_init__(self):
        px = np.array(self.phi_x, dtype=float)
        pu = np.array(self.phi_u, dtype=float)
        if px.ndim != 3 or pu.ndim != 3 or px.shape[0] != pu.shape[0] \
                or px.shape[1] != px.shape[2] or pu.shape[2] != px.shape[2]:
            raise DimensionError(f"inconsistent block stacks {px.shape} and {pu.shape}")
        px.setflags(write=False)
        pu.setflags(write=False)
        object.__setattr__(self, "phi_x", px)
        object.__setattr__(self, "phi_u", pu)

    @property
    def horizon(self):
        return self.phi_x.shape[0]

    @property
    def n(self):
        return self.phi_x.shape[1]

    @property
    def p(self):
        return self.phi_u.shape[1]

    @cached_property
    def _u_filter(self):
        pat = Pattern(np.any(self.phi_u != 0, axis=0))
        return pat, pat.gather(self.phi_u)

    @cached_property
    def _x_filter(self):
        tail = self.phi_x[1:]
        pat = Pattern(np.any(tail != 0, axis=0))
        return pat, pat.gather(tail)

    def support(self):
        """Union over k of the nonzero patterns of Phi_x(k) and Phi_u(k)."""
        return np.any(self.phi_x != 0, axis=0), np.any(self.phi_u != 0, axis=0)


def validate_achievability(plant, response):
    """Largest entrywise violation of the finite-horizon achievability equations."""
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    px, pu = response.phi_x, response.phi_u
    if px.shape[1] != A.shape[0] or pu.shape[1] != B.shape[1]:
        raise DimensionError("response does not match the plant dimensions")
    res = np.max(np.abs(px[0] - np.eye(A.shape[0])))
    nxt = np.einsum("ij,kjl->kil", A, px) + np.einsum("ij,kjl->kil", B, pu)
    if response.horizon > 1:
        res = max(res, np.max(np.abs(px[1:] - nxt[:-1])))
    return float(max(res, np.max(np.abs(nxt[-1]))))


def h2_cost(response, q_weight, r_weight):
    Q = np.asarray(q_weight, dtype=float)
    R = np.asarray(r_weight, dtype=float)
    px, pu = response.phi_x, response.phi_u
    return float(np.einsum("kij,il,klj->", px, Q, px) + np.einsum("kij,il,klj->", pu, R, pu))


# -- column subproblems -------------------------------------------------------------

@dataclass
class ColumnSystem:
    """Affine constraints on the free entries of a group of response columns.

    Variables are ``Phi_x(k)[state_rows, j]`` for ``k = 2..Kx`` followed by
    ``Phi_u(k)[input_rows, j]`` for ``k = 1..T``; ``Phi_x(1)`` is pinned to
    the identity and appears only in the right-hand side (one column of
    ``rhs`` per response column).
    """

    columns: np.ndarray
    state_rows: np.ndarray
    input_rows: np.ndarray
    horizon: int
    state_blocks: int
    eq_sparse: sps.csr_matrix = field(repr=False)
    rhs: np.ndarray
    touched: np.ndarray = field(repr=False)

    @cached_property
    def eq_matrix(self):
        return self.eq_sparse.toarray()

    @cached_property
    def labels(self):
        return [f"k={k} state row {int(r)}" for k in range(1, self.horizon + 1)
                for r in self.touched]

    @property
    def n_state_vars(self):
        return (self.state_blocks - 1) * self.state_rows.size

    @property
    def size(self):
        return self.n_state_vars + self.horizon * self.input_rows.size

    def state_slice(self, k):
        """Variable slice holding ``Phi_x(k)`` for ``k >= 2``."""
        m = self.state_rows.size
        return slice((k - 2) * m, (k - 1) * m)

    def input_slice(self, k):
        m = self.input_rows.size
        off = self.n_state_vars
        return slice(off + (k - 1) * m, off + k * m)


def column_groups(mask):
    """Group columns whose state and input supports coincide."""
    groups = {}
    for j in range(mask.state_support.shape[1]):
        key = (mask.state_support[:, j].tobytes(), mask.input_support[:, j].tobytes())
        groups.setdefault(key, []).append(j)
    out = []
    for cols in groups.values():
        j = cols[0]
        out.append((np.array(cols), np.flatnonzero(mask.state_support[:, j]),
                    np.flatnonzero(mask.input_support[:, j])))
    return out


def build_column_system(A, B, columns, state_rows, input_rows, horizon, deadbeat=True):
    """Achievability plus locality for the columns in ``columns``.

    With ``deadbeat`` the last state block is ``Phi_x(T)`` and
    ``A Phi_x(T) + B Phi_u(T) = 0`` closes the recursion; otherwise
    ``Phi_x(T+1)`` is kept as a free terminal block (the MPC form).
    """
    A = np.asarray(A)
    B = np.asarray(B)
    T = horizon
    for j in columns:
        if j not in state_rows:
            raise InfeasibleError(f"column {j} excludes its own diagonal entry, "
                                  "so Phi_x(1) = I violates the mask", where=f"column {j}")
    touched = np.flatnonzero(np.any(A[:, state_rows] != 0, axis=1)
                             | np.any(B[:, input_rows] != 0, axis=1))
    touched = np.union1d(touched, state_rows)
    pos = {int(r): i for i, r in enumerate(state_rows)}
    in_support = np.array([int(r) in pos for r in touched])
    target = np.array([pos.get(int(r), -1) for r in touched])

    Kx = T if deadbeat else T + 1
    m, ms, mu = touched.size, state_rows.size, input_rows.size
    n_state_vars = (Kx - 1) * ms
    ai, aj = np.nonzero(A[np.ix_(touched, state_rows)])
    bi, bj = np.nonzero(B[np.ix_(touched, input_rows)])
    av = -A[touched[ai], state_rows[aj]]
    bv = -B[touched[bi], input_rows[bj]]
    si = np.flatnonzero(in_support)
    rows, cols, vals = [], [], []
    rhs = np.zeros((T * m, len(columns)))
    for k in range(1, T + 1):
        r0 = (k - 1) * m
        if k >= 2:
            rows.append(r0 + ai)
            cols.append((k - 2) * ms + aj)
            vals.append(av)
        else:
            rhs[:m] = A[np.ix_(touched, columns)]
        rows.append(r0 + bi)
        cols.append(n_state_vars + (k - 1) * mu + bj)
        vals.append(bv)
        if k + 1 <= Kx:
            rows.append(r0 + si)
            cols.append((k - 1) * ms + target[si])
            vals.append(np.ones(si.size))
    E = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(T * m, n_state_vars + T * mu))
    return ColumnSystem(np.asarray(columns), state_rows, input_rows, T, Kx, E, rhs, touched)


def _objective_weight(system, Q, R):
    sx, su = system.state_rows, system.input_rows
    blocks = [Q[np.ix_(sx, sx)]] * (system.state_blocks - 1) + [R[np.ix_(su, su)]] * system.horizon
    W = np.zeros((system.size, system.size))
    off = 0
    for blk in blocks:
        s = blk.shape[0]
        W[off:off + s, off:off + s] = blk
        off += s
    return W


def solve_column_group(A, B, horizon, columns, state_rows, input_rows, Q, R):
    """One distributed-synthesis subproblem: the H2-optimal columns of a group.

    Returns ``(system, solution)`` with one solution column per response column.
    """
    system = build_column_system(A, B, columns, state_rows, input_rows, horizon, deadbeat=True)
    Qs, Rs = Q[np.ix_(state_rows, state_rows)], R[np.ix_(input_rows, input_rows)]
    if not (np.count_nonzero(Qs - np.diag(np.diag(Qs))) or np.count_nonzero(Rs - np.diag(np.diag(Rs)))):
        w = np.concatenate([np.tile(np.diag(Qs), system.state_blocks - 1),
                            np.tile(np.diag(Rs), horizon)])
        Z = solve_eq_ls_banded(w, system.eq_sparse, system.rhs)
        if Z is not None:
            return system, Z
    # dense path: general weights, and the diagnosis of infeasible constraints
    W = _objective_weight(system, Q, R)
    try:
        Z = solve_eq_ls(W, system.eq_matrix, system.rhs, system.labels)
    except InfeasibleError as exc:
        raise InfeasibleError(
            f"columns {list(map(int, columns))}: no localized response of horizon {horizon} "
            f"({exc}); increase d or T", where=exc.where) from exc
    return system, Z


def synthesize_h2(plant, horizon, mask=None, q_weight=None, r_weight=None, executor=None,
                  timings=None):
    """Localized H2 synthesis, solved independently per group of columns.

    ``executor`` (anything with a ``map`` method) runs the column subproblems
    in parallel. If ``timings`` is a list, ``(columns, seconds)`` pairs are
    appended for each subproblem.
    """
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    n, p = B.shape
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    mask = mask or LocalityMask.full(n, p)
    Q = np.eye(n) if q_weight is None else np.asarray(q_weight, dtype=float)
    R = np.eye(p) if r_weight is None else np.asarray(r_weight, dtype=float)

    groups = column_groups(mask)

    def work(group):
        cols, sx, su = group
        t0 = time.perf_counter()
        system, Z = solve_column_group(A, B, horizon, cols, sx, su, Q, R)
        return system, Z, time.perf_counter() - t0

    results = (executor.map if executor is not None else map)(work, groups)

    phi_x = np.zeros((horizon, n, n))
    phi_u = np.zeros((horizon, p, n))
    phi_x[0] = np.eye(n)
    for system, Z, secs in results:
        cols = system.columns
        for k in range(2, horizon + 1):
            phi_x[k - 1][np.ix_(system.state_rows, cols)] = Z[system.state_slice(k)]
        for k in range(1, horizon + 1):
            phi_u[k - 1][np.ix_(system.input_rows, cols)] = Z[system.input_slice(k)]
        if timings is not None:
            timings.append((cols.size, secs))
    response = SystemResponse(phi_x, phi_u)
    tol = 1e-8
    return SystemResponse(phi_x, phi_u, achievable_tol=tol) \
        if validate_achievability(plant, response) <= tol else response


# -- controller realization -----------------------------------------------------------

@dataclass
class SlsRuntimeState:
    """Disturbance-estimate FIFO (row 0 newest) and the predicted nominal state."""

    w_hat_buffer: np.ndarray
    x_hat_next: np.ndarray


def runtime_init(response, x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (response.n,):
        raise DimensionError("initial state has the wrong length")
    return SlsRuntimeState(np.zeros((response.horizon, response.n)), x0.copy())


def runtime_step(state, response, x_measured):
    """Advance the realization one step and return the control input.

    ``w_hat = x - x_hat``; ``u = sum_{k=1..T} Phi_u(k) w_hat[k]``;
    ``x_hat_next = sum_{k=2..T} Phi_x(k) w_hat[k-1]`` (buffer index 1 = newest).
    """
    x = np.asarray(x_measured, dtype=float)
    buf = state.w_hat_buffer
    w_new = x - state.x_hat_next
    buf[1:] = buf[:-1]
    buf[0] = w_new
    upat, uval = response._u_filter
    u = upat.fir(uval, buf)
    if response.horizon > 1:
        xpat, xval = response._x_filter
        state.x_hat_next = xpat.fir(xval, buf[:-1])
    else:
        state.x_hat_next = np.zeros(response.n)
    return u


def simulate_closed_loop(plant, response, disturbances, x0=None):
    """Plant ``x+ = A x + B u + w`` driven by the SLS realization.

    ``disturbances`` is ``(steps, n)``; returns states ``(steps + 1, n)`` and
    inputs ``(steps, p)``.
    """
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    w = np.asarray(disturbances, dtype=float)
    x = np.zeros(A.shape[0]) if x0 is None else np.asarray(x0, dtype=float)
    state = runtime_init(response, x)
    xs, us = [x], []
    for t in range(w.shape[0]):
        u = runtime_step(state, response, x)
        x = A @ x + B @ u + w[t]
        xs.append(x)
        us.append(u)
    return np.array(xs), np.array(us)


def convolve_response(response, disturbances):
    """``x(t) = sum_k Phi_x(k) w(t-k)`` and the matching inputs, for ``t = 0..steps``."""
    w = np.asarray(disturbances, dtype=float)
    steps = w.shape[0]
    T = response.horizon
    xs = np.zeros((steps + 1, response.n))
    us = np.zeros((steps + 1, response.p))
    for t in range(steps + 1):
        for k in range(1, T + 1):
            if 0 <= t - k < steps:
                xs[t] += response.phi_x[k - 1] @ w[t - k]
                us[t] += response.phi_u[k - 1] @ w[t - k]
    return xs, us


# -- text serialization ------------------------------------------------------------

_RESPONSE_HEADER = "# slsgrid system response v1"


def dump_response(response):
    lines = [_RESPONSE_HEADER, f"horizon = {response.horizon}",
             f"state_dim = {response.n}", f"input_dim = {response.p}"]
    for name, blocks in (("phi_x", response.phi_x), ("phi_u", response.phi_u)):
        for k, blk in enumerate(blocks, start=1):
            lines.append(f"{name} {k} = " + " ".join(repr(float(v)) for v in blk.ravel()))
    return "\n".join(lines) + "\n"


def load_response(text):
    meta, blocks = {}, {"phi_x": {}, "phi_u": {}}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        parts = key.split()
        if len(parts) == 2:
            blocks[parts[0]][int(parts[1])] = np.array(value.split(), dtype=float)
        else:
            meta[parts[0]] = int(value)
    T, n, p = meta["horizon"], meta["state_dim"], meta["input_dim"]
    px = np.stack([blocks["phi_x"][k].reshape(n, n) for k in range(1, T + 1)])
    pu = np.stack([blocks["phi_u"][k].reshape(p, n) for k in range(1, T + 1)])
    return SystemResponse(px, pu)
