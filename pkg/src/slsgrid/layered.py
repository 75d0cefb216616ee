"""Two-layer controller: periodic localized MPC planning plus offline SLS tracking.

The top layer replans once every ``t_mpc`` steps from the measured state. The
bottom layer is an offline-synthesized localized SLS controller that runs on
the tracking error ``e = x - x_plan`` and adds its feedback to the planned
input; the sum is clamped to the actuator bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LocalityError, SlsError
from .mpc import LocalizedMpcSolver, MpcProblem, PlannedTrajectory, hold_plan
from .plant import locality_mask
from .runtime import saturate
from .sls import SystemResponse, runtime_init, runtime_step, synthesize_h2


@dataclass
class LayeredController:
    t_mpc: int
    problem: MpcProblem
    solver: LocalizedMpcSolver
    bottom: SystemResponse = None
    bottom_state: object = None
    current_plan: object = None
    step_in_period: int = 0
    audit: bool = False
    steps: int = 0
    solve_steps: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    admm_iterations: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)

    def __post_init__(self):
        if self.t_mpc < 1:
            raise ValueError("t_mpc must be at least 1")
        if self.t_mpc > self.problem.horizon:
            raise ValueError("t_mpc cannot exceed the planning horizon")


def build_layered_controller(plant, setpoint, q_weight, r_weight, horizon=20, t_mpc=20, d=2,
                             u_max=None, admm=None, bottom_layer=True, audit=False):
    """Synthesize the bottom layer offline and set up the top-layer problem.

    Both layers share ``Q``, ``R``, ``d`` and the horizon.
    """
    u_max = plant.u_max if u_max is None else u_max
    mask = locality_mask(plant.topology, d)
    problem = MpcProblem(plant, horizon, q_weight, r_weight, u_max, setpoint.x_star,
                         setpoint.u_star, mask=mask)
    bottom = synthesize_h2(plant, horizon, mask, q_weight, r_weight) if bottom_layer else None
    ctrl = LayeredController(t_mpc, problem, LocalizedMpcSolver(problem, admm), bottom,
                             audit=audit)
    if audit and bottom is not None:
        _audit_support(ctrl)
    return ctrl


def _audit_support(ctrl):
    ms, mu = ctrl.problem.mask.state_support, ctrl.problem.mask.input_support
    sx, su = ctrl.bottom.support()
    if np.any(sx & ~ms) or np.any(su & ~mu):
        raise LocalityError("bottom-layer response reaches outside the locality mask")


def _audit_inputs(ctrl, u_fb):
    """Recompute each node's feedback from its own neighborhood of the buffer."""
    mask = ctrl.problem.mask.input_support
    buf = ctrl.bottom_state.w_hat_buffer
    for i in range(mask.shape[0]):
        cols = np.flatnonzero(mask[i])
        local = np.einsum("kj,kj->", ctrl.bottom.phi_u[:, i, cols], buf[:, cols])
        if abs(local - u_fb[i]) > 1e-9 * (1.0 + abs(u_fb[i])):
            raise LocalityError(f"node {i} feedback depends on states outside its neighborhood")


def _degraded_plan(ctrl):
    """Unused tail of the previous plan, then the target equilibrium held."""
    hold = hold_plan(ctrl.problem)
    prev, k = ctrl.current_plan, ctrl.t_mpc
    if prev is None or prev.horizon <= k:
        return hold
    return PlannedTrajectory(np.vstack([prev.states[k:], hold.states[:k]]),
                             np.vstack([prev.inputs[k:], hold.inputs[:k]]),
                             hold.terminal_state)


def _replan(ctrl, x, setpoint):
    if setpoint is not None:
        ctrl.problem = ctrl.problem.with_setpoint(setpoint.x_star, setpoint.u_star)
    try:
        plan, _, iters = ctrl.solver.solve(ctrl.problem, x)
        ctrl.admm_iterations.append(iters)
    except SlsError as exc:
        plan = _degraded_plan(ctrl)
        ctrl.solver.reset()
        ctrl.failures.append((ctrl.steps, str(exc)))
    ctrl.current_plan = plan
    ctrl.solve_steps.append(ctrl.steps)
    if ctrl.bottom is not None:
        # the new plan starts at the measured state, so the error history restarts
        ctrl.bottom_state = runtime_init(ctrl.bottom, np.zeros(ctrl.bottom.n))


def layered_step(ctrl, x_measured, new_setpoint=None):
    """One control step; replans at the start of each period."""
    x = np.asarray(x_measured, dtype=float)
    if ctrl.step_in_period == 0:
        _replan(ctrl, x, new_setpoint)
    k = ctrl.step_in_period
    plan = ctrl.current_plan
    if ctrl.bottom is not None:
        e = x - plan.states[k]
        u_fb = runtime_step(ctrl.bottom_state, ctrl.bottom, e)
        if ctrl.audit:
            _audit_inputs(ctrl, u_fb)
    else:
        u_fb = np.zeros(plan.inputs.shape[1])
    u = saturate(plan.inputs[k] + u_fb, ctrl.problem.u_max)
    ctrl.telemetry.append((plan.inputs[k].copy(), u_fb))
    ctrl.step_in_period = (k + 1) % ctrl.t_mpc
    ctrl.steps += 1
    return u


def count_online_solves(ctrl, sim_length):
    """Top-layer solves made during the first ``sim_length`` steps."""
    return sum(1 for s in ctrl.solve_steps if s < sim_length)

