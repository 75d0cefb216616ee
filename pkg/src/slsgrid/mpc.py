"""Setpoint-tracking MPC with input boxes: centralized and localized (DLMPC) solvers.

Both solvers minimize, over a horizon ``T`` starting from ``x~(1) = x_now``,

    sum_{k=1..T} |x~(k) - x_ref|_Q^2 + |u~(k) - u_ref|_R^2 + |x~(T+1) - x_ref|_P^2

subject to the plant dynamics and ``|u~(k)| <= u_max``. ``P`` defaults to the
stationary Riccati matrix. The centralized solver condenses the problem onto
the input sequence; the localized solver works on system-response variables
``x~(k) - x_ref = Phi_x(k) dx`` and ``u~(k) - u_ref = Phi_u(k) dx`` with
``dx = x_now - x_ref`` under a locality mask, by two-copy ADMM.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, InfeasibleError
from .kernels import Pattern
from .optimization import AdmmConfig, AffineProjector, QpProblem, admm_two_block, solve_box_qp
from .plant import LocalityMask
from .runtime import stationary_lqr
from .sls import SystemResponse, build_column_system, column_groups


@dataclass(frozen=True)
class MpcProblem:
    plant: object
    horizon: int
    q_weight: np.ndarray
    r_weight: np.ndarray
    u_max: float
    x_ref: np.ndarray
    u_ref: np.ndarray
    mask: LocalityMask = None
    terminal_weight: np.ndarray = None
    # solver structures shared by every problem derived through with_setpoint
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        A, B = np.asarray(self.plant.A), np.asarray(self.plant.B)
        n, p = B.shape
        Q = np.asarray(self.q_weight, dtype=float)
        R = np.asarray(self.r_weight, dtype=float)
        x_ref = np.asarray(self.x_ref, dtype=float)
        u_ref = np.asarray(self.u_ref, dtype=float)
        if Q.shape != (n, n) or R.shape != (p, p) or x_ref.shape != (n,) or u_ref.shape != (p,):
            raise DimensionError("weights or setpoint do not match the plant")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if np.max(np.abs(A @ x_ref + B @ u_ref - x_ref), initial=0.0) > 1e-8:
            raise ValueError("(x_ref, u_ref) is not an equilibrium of the plant")
        if np.any(np.abs(u_ref) >= self.u_max):
            raise InfeasibleError("setpoint needs |u_ref| >= u_max and cannot be held",
                                  where=f"node {int(np.argmax(np.abs(u_ref)))}")
        mask = self.mask or LocalityMask.full(n, p)
        for name, val in (("q_weight", Q), ("r_weight", R), ("x_ref", x_ref),
                          ("u_ref", u_ref), ("mask", mask)):
            object.__setattr__(self, name, val)
        if self.terminal_weight is None:
            P = self.cache.get("terminal")
            if P is None:
                P = stationary_lqr(self.plant, Q, R).value_matrices[0]
                self.cache["terminal"] = P
            object.__setattr__(self, "terminal_weight", P)

    def with_setpoint(self, x_ref, u_ref):
        return dataclasses.replace(self, x_ref=x_ref, u_ref=u_ref)

    @property
    def input_bounds(self):
        return -self.u_max - self.u_ref, self.u_max - self.u_ref


@dataclass(frozen=True)
class PlannedTrajectory:
    """Predicted ``x~(1..T)`` (``states[0] = x_now``), inputs ``u~(1..T)`` and ``x~(T+1)``."""

    states: np.ndarray
    inputs: np.ndarray
    terminal_state: np.ndarray

    @property
    def horizon(self):
        return self.inputs.shape[0]


def rollout(plant, x_now, inputs):
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    xs = [np.asarray(x_now, dtype=float)]
    for u in inputs:
        xs.append(A @ xs[-1] + B @ u)
    return PlannedTrajectory(np.array(xs[:-1]), np.asarray(inputs, dtype=float), xs[-1])


def hold_plan(problem):
    T = problem.horizon
    return PlannedTrajectory(np.tile(problem.x_ref, (T, 1)), np.tile(problem.u_ref, (T, 1)),
                             problem.x_ref.copy())


def plan_cost(problem, plan):
    """Objective value of ``plan`` for ``problem``."""
    dx = plan.states - problem.x_ref
    du = plan.inputs - problem.u_ref
    dT = plan.terminal_state - problem.x_ref
    return float(np.einsum("ki,ij,kj->", dx, problem.q_weight, dx)
                 + np.einsum("ki,ij,kj->", du, problem.r_weight, du)
                 + dT @ problem.terminal_weight @ dT)


# -- centralized -------------------------------------------------------------------

def _condensed(problem):
    key = ("condensed", problem.horizon)
    if key not in problem.cache:
        A, B = np.asarray(problem.plant.A), np.asarray(problem.plant.B)
        n, p = B.shape
        T = problem.horizon
        # stacked deviations [dx(1); ...; dx(T+1)] = F dx(1) + S du
        F = np.zeros(((T + 1) * n, n))
        S = np.zeros(((T + 1) * n, T * p))
        Ak = np.eye(n)
        for k in range(T + 1):
            F[k * n:(k + 1) * n] = Ak
            Ak = A @ Ak
        for k in range(1, T + 1):
            blk = B
            for i in range(k, T + 1):
                S[i * n:(i + 1) * n, (k - 1) * p:k * p] = blk
                blk = A @ blk
        Qbar = sla.block_diag(*([problem.q_weight] * T + [problem.terminal_weight]))
        SQ = S.T @ Qbar
        H = 2.0 * (SQ @ S + np.kron(np.eye(T), problem.r_weight))
        problem.cache[key] = (0.5 * (H + H.T), 2.0 * SQ @ F, F, S)
    return problem.cache[key]


def mpc_solve_centralized(problem, x_now, warm_start=None):
    """Condensed box-QP over the input sequence.

    ``warm_start`` may be the previous :class:`PlannedTrajectory`; its inputs
    shifted by one step seed the solver.
    """
    x_now = np.asarray(x_now, dtype=float)
    if x_now.shape != problem.x_ref.shape:
        raise DimensionError("x_now has the wrong length")
    H, G, _, _ = _condensed(problem)
    lo, hi = problem.input_bounds
    T = problem.horizon
    qp = QpProblem(H, G @ (x_now - problem.x_ref), lower=np.tile(lo, T), upper=np.tile(hi, T))
    init = None
    if warm_start is not None and warm_start.horizon == T:
        shifted = np.concatenate([warm_start.inputs[1:], warm_start.inputs[-1:]])
        init = (shifted - problem.u_ref).ravel()
    sol = solve_box_qp(qp, init=init)
    du = np.clip(sol.solution, qp.lower, qp.upper).reshape(T, -1)
    return rollout(problem.plant, x_now, du + problem.u_ref)


# -- localized (DLMPC) ---------------------------------------------------------------

class _LocalizedStructure:
    """Mask patterns, column-group projectors and index maps for one (plant, mask, T)."""

    def __init__(self, problem):
        A, B = np.asarray(problem.plant.A), np.asarray(problem.plant.B)
        T = problem.horizon
        mask = problem.mask
        self.T = T
        self.xpat = Pattern(mask.state_support)   # Phi_x(2..T+1)
        self.upat = Pattern(mask.input_support)   # Phi_u(1..T)
        nx, nu = self.xpat.nnz, self.upat.nnz
        self.nx_total = T * nx
        self.dim = T * (nx + nu)
        xpos = np.full(mask.state_support.shape, -1)
        xpos[self.xpat.rows, self.xpat.indices] = np.arange(nx)
        upos = np.full(mask.input_support.shape, -1)
        upos[self.upat.rows, self.upat.indices] = np.arange(nu)

        self.groups = []
        for cols, sx, su in column_groups(mask):
            system = build_column_system(A, B, cols, sx, su, T, deadbeat=False)
            proj = AffineProjector(system.eq_matrix, system.rhs, system.labels)
            idx = np.zeros((system.size, cols.size), dtype=np.intp)
            for k in range(2, T + 2):
                idx[system.state_slice(k)] = (k - 2) * nx + xpos[np.ix_(sx, cols)]
            for k in range(1, T + 1):
                idx[system.input_slice(k)] = self.nx_total + (k - 1) * nu + upos[np.ix_(su, cols)]
            self.groups.append((proj, idx))

    def split(self, v):
        return (v[:self.nx_total].reshape(self.T, -1), v[self.nx_total:].reshape(self.T, -1))

    def project(self, v):
        out = np.empty_like(v)
        for proj, idx in self.groups:
            out[idx] = proj.project(v[idx])
        return out

    def response(self, v, n):
        xv, uv = self.split(v)
        px = np.concatenate([np.eye(n)[None], self.xpat.scatter(xv)[:-1]])
        return SystemResponse(px, self.upat.scatter(uv))


class LocalizedMpcSolver:
    """DLMPC by two-copy ADMM with warm starts across calls.

    The row copy handles the cost and the input box. Each state or input row
    only sees ``s = Phi_row . dx`` on its mask support, so its proximal step is
    a scalar problem; the terminal block is coupled through ``P`` and solved
    jointly. The column copy projects each column group onto the dynamics
    and the mask. The penalty is scaled by ``|dx|^2`` so residuals are
    measured in response units.
    """

    def __init__(self, problem, config=None):
        q, r = np.diag(problem.q_weight), np.diag(problem.r_weight)
        if not (np.allclose(problem.q_weight, np.diag(q)) and np.allclose(problem.r_weight, np.diag(r))):
            raise ValueError("the localized solver needs diagonal Q and R")
        self.config = config or AdmmConfig()
        key = ("localized", problem.horizon)
        if key not in problem.cache:
            problem.cache[key] = _LocalizedStructure(problem)
        self.structure = problem.cache[key]
        self.q_diag, self.r_diag = q, r
        self._warm = None
        self.last_iterations = 0
        self.last_history = []

    def _row_prox(self, problem, dx):
        st = self.structure
        T = st.T
        P = problem.terminal_weight
        lo, hi = problem.input_bounds
        sigma = float(dx @ dx)
        dx2 = dx * dx
        mx = st.xpat.rowdot(np.ones((1, st.xpat.nnz)), dx2)[0]
        mu = st.upat.rowdot(np.ones((1, st.upat.nnz)), dx2)[0]
        live_x, live_u = mx > 0, mu > 0
        mx_safe = np.where(live_x, mx, 1.0)
        mu_safe = np.where(live_u, mu, 1.0)
        term_rows = np.flatnonzero(live_x)
        P_live = P[np.ix_(term_rows, term_rows)]
        factors = {}

        def prox(v, rho):
            xv, uv = (a.copy() for a in st.split(v))
            rs = rho * sigma
            wx, wu = rs / mx_safe, rs / mu_safe
            cx = st.xpat.rowdot(xv, dx)
            cu = st.upat.rowdot(uv, dx)
            sx = cx.copy()
            if T > 1:
                sx[:-1] = np.where(live_x, wx * cx[:-1] / (2.0 * self.q_diag + wx), 0.0)
            if rho not in factors:
                D = wx[term_rows]
                factors[rho] = sla.cho_factor(2.0 * P_live + np.diag(D))
            s_term = np.zeros_like(cx[-1])
            s_term[term_rows] = sla.cho_solve(factors[rho], wx[term_rows] * cx[-1, term_rows])
            sx[-1] = s_term
            su = np.clip(wu * cu / (2.0 * self.r_diag + wu), lo, hi)
            su = np.where(live_u, su, 0.0)
            st.xpat.rowaxpy(xv, np.where(live_x, (sx - cx) / mx_safe, 0.0), dx)
            st.upat.rowaxpy(uv, np.where(live_u, (su - cu) / mu_safe, 0.0), dx)
            return np.concatenate([xv.ravel(), uv.ravel()])

        return prox

    def solve(self, problem, x_now):
        """Return ``(plan, response, iterations)``; see :func:`mpc_solve_localized`."""
        x_now = np.asarray(x_now, dtype=float)
        if x_now.shape != problem.x_ref.shape:
            raise DimensionError("x_now has the wrong length")
        st = self.structure
        dx = x_now - problem.x_ref
        n = dx.size
        if not np.any(dx):
            init = st.project(np.zeros(st.dim))
            self.last_iterations, self.last_history = 0, []
            return hold_plan(problem), st.response(init, n), 0
        prox = self._row_prox(problem, dx)
        init, dual, rho = self._warm if self._warm is not None else (None, None, None)
        res = admm_two_block(prox, st.project, st.dim, self.config, init=init,
                             dual_init=dual, rho=rho)
        self._warm = (res.consensus, res.dual, res.rho)
        self.last_iterations, self.last_history = res.iterations, res.history
        # inputs come from the row copy, which meets the box exactly
        _, uv = st.split(res.row_copy)
        du = st.upat.rowdot(uv, dx)
        plan = rollout(problem.plant, x_now, du + problem.u_ref)
        return plan, st.response(res.consensus, n), res.iterations

    def reset(self):
        self._warm = None


def mpc_solve_localized(problem, x_now, admm=None, solver=None):
    """Localized MPC over system responses.

    Returns ``(plan, response, iterations)``. ``response`` holds ``Phi_x(1..T)``
    and ``Phi_u(1..T)`` of the consensus iterate. Pass a persistent ``solver``
    to warm-start consecutive solves.
    """
    solver = solver or LocalizedMpcSolver(problem, admm)
    return solver.solve(problem, x_now)
