"""Centralized linear baselines: Riccati gains, saturation, setpoint tracking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, NonConvergenceError, NumericalError


@dataclass(frozen=True)
class LqrSolution:
    """Gains ``K_t`` (control law ``u = -K_t x``) and value matrices ``P_t``.

    For a finite horizon ``T`` there are ``T`` gains and ``T + 1`` value
    matrices with ``P_T`` the terminal weight. A stationary solution has a
    single gain and a single value matrix.
    """

    gains: tuple
    value_matrices: tuple

    @property
    def gain(self):
        return self.gains[0]

    @property
    def horizon(self):
        return len(self.gains)


def _riccati_step(A, B, Q, R, P):
    S = R + B.T @ P @ B
    try:
        cf = sla.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("R + B^T P B is not positive definite") from exc
    K = sla.cho_solve(cf, B.T @ P @ A)
    P_new = Q + A.T @ P @ (A - B @ K)
    return K, 0.5 * (P_new + P_new.T)


def lqr_riccati(plant, q_weight, r_weight, horizon, terminal_weight=None):
    """Backward Riccati recursion from ``P_T = terminal_weight`` (default Q)."""
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    Q = np.asarray(q_weight, dtype=float)
    R = np.asarray(r_weight, dtype=float)
    if Q.shape != A.shape or R.shape != (B.shape[1], B.shape[1]):
        raise DimensionError("weights do not match the plant")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    P = Q.copy() if terminal_weight is None else np.asarray(terminal_weight, dtype=float)
    Ps, Ks = [P], []
    for _ in range(horizon):
        K, P = _riccati_step(A, B, Q, R, P)
        Ks.append(K)
        Ps.append(P)
    return LqrSolution(tuple(reversed(Ks)), tuple(reversed(Ps)))


def stationary_lqr(plant, q_weight, r_weight, tol=1e-12, max_iters=100000):
    """Riccati recursion iterated until the value matrix stops changing."""
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    Q = np.asarray(q_weight, dtype=float)
    R = np.asarray(r_weight, dtype=float)
    P = Q.copy()
    for _ in range(max_iters):
        K, P_new = _riccati_step(A, B, Q, R, P)
        delta = np.max(np.abs(P_new - P))
        P = P_new
        if delta <= tol * max(1.0, np.max(np.abs(P))):
            K, _ = _riccati_step(A, B, Q, R, P)
            return LqrSolution((K,), (P,))
    raise NonConvergenceError("Riccati recursion did not converge; is (A, B) stabilizable?",
                              residuals=delta)


def saturate(u, u_max):
    if not u_max > 0:
        raise ValueError("u_max must be positive")
    return np.clip(u, -u_max, u_max)


def linear_tracking_step(gains, x, x_ref, u_ref):
    """``u = u_ref - K (x - x_ref)`` with the first (stationary) gain."""
    K = gains.gain
    x = np.asarray(x, dtype=float)
    if x.shape != (K.shape[1],) or np.shape(x_ref) != x.shape or np.shape(u_ref) != (K.shape[0],):
        raise DimensionError("state, reference or input has the wrong length")
    return u_ref - K @ (x - x_ref)
