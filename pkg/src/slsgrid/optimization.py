"""Dense convex solvers: equality-constrained least squares, box QPs, two-block ADMM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .errors import (DegenerateProblemError, DimensionError, InfeasibleError,
                     NonConvergenceError)

RANK_TOL = 1e-9


def _label(labels, k):
    if labels is None:
        return f"row {k}"
    return str(labels[k])


class RowReduction(NamedTuple):
    """Orthogonal decomposition of a consistent linear system ``E z = h``.

    ``particular`` is the minimum-norm solution (one column per right-hand
    side) and ``nullspace`` an orthonormal basis of ``ker E``.
    """

    particular: np.ndarray
    nullspace: np.ndarray
    rowspace: np.ndarray
    kept: np.ndarray
    scale: np.ndarray
    triangular: np.ndarray


def reduce_rows(E, h, labels=None, tol=1e-9):
    """Drop zero and linearly dependent rows of ``E z = h`` after a consistency check.

    Rows are normalized to unit length first, so the rank decision does not
    depend on row scaling. Raises InfeasibleError naming the worst row when
    the system has no solution.
    """
    E = np.asarray(E, dtype=float)
    h = np.asarray(h, dtype=float)
    vec = h.ndim == 1
    hm = h[:, None] if vec else h
    c, v = E.shape
    if hm.shape[0] != c:
        raise DimensionError(f"E has {c} rows but h has {hm.shape[0]}")

    norms = np.linalg.norm(E, axis=1)
    big = norms.max() if c else 0.0
    nz = norms > 1e-13 * max(big, 1e-300)
    hscale = 1.0 + (np.abs(hm).max() if hm.size else 0.0)
    bad = np.flatnonzero(~nz & (np.abs(hm).max(axis=1, initial=0.0) > tol * hscale))
    if bad.size:
        k = int(bad[0])
        raise InfeasibleError(f"constraint {_label(labels, k)} reads 0 = {hm[k].max():.3g}",
                              where=_label(labels, k))

    rows = np.flatnonzero(nz)
    En = E[rows] / norms[rows, None]
    hn = hm[rows] / norms[rows, None]
    if rows.size == 0:
        Q = np.eye(v)
        rank = 0
        R = np.zeros((0, 0))
        piv = np.zeros(0, dtype=int)
    else:
        Q, R, piv = sla.qr(En.T, pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
    Rr = R[:rank, :rank]
    kept = rows[piv[:rank]]
    Qr = Q[:, :rank]
    if rank:
        y = sla.solve_triangular(Rr, hn[piv[:rank]], trans="T")
    else:
        y = np.zeros((0, hm.shape[1]))
    z0 = Qr @ y
    resid = En @ z0 - hn
    if resid.size:
        worst = np.unravel_index(np.argmax(np.abs(resid)), resid.shape)
        if abs(resid[worst]) > 1e3 * tol * hscale:
            k = int(rows[worst[0]])
            raise InfeasibleError(
                f"constraint {_label(labels, k)} is inconsistent with the others "
                f"(residual {resid[worst]:.3g})", where=_label(labels, k))
    if vec:
        z0 = z0[:, 0]
    return RowReduction(z0, Q[:, rank:], Qr, kept, norms[kept], Rr)


class AffineProjector:
    """Euclidean projection onto ``{z : E z = h_j}`` for a fixed ``E``.

    All right-hand sides are supplied up front as columns of ``h``; each call
    projects one column of ``t`` per right-hand side.
    """

    def __init__(self, E, h, labels=None):
        red = reduce_rows(E, np.atleast_2d(np.asarray(h, float).T).T, labels)
        self.particular = red.particular
        if red.nullspace.shape[1] <= red.rowspace.shape[1]:
            self._basis, self._mode = red.nullspace, "null"
        else:
            self._basis, self._mode = red.rowspace, "row"

    @property
    def dim(self):
        return self.particular.shape[0]

    def project(self, t):
        B = self._basis
        if self._mode == "null":
            return self.particular + B @ (B.T @ t)
        return t - B @ (B.T @ t) + self.particular


def solve_eq_ls(objective_weight, eq_matrix, eq_rhs, labels=None):
    """argmin 1/2 z^T W z subject to E z = h.

    Redundant consistent rows are dropped. ``eq_rhs`` may be a matrix, in
    which case every column is solved against the same factorization.

    Raises:
        InfeasibleError: the constraints are inconsistent.
        DegenerateProblemError: W is not positive definite on ker E.
    """
    W = np.asarray(objective_weight, dtype=float)
    E = np.atleast_2d(np.asarray(eq_matrix, dtype=float))
    h = np.asarray(eq_rhs, dtype=float)
    v = W.shape[0]
    if W.shape != (v, v) or E.shape[1] != v:
        raise DimensionError(f"W {W.shape} and E {E.shape} disagree")

    red = reduce_rows(E, h, labels)
    N = red.nullspace
    z0 = red.particular
    if N.shape[1] == 0:
        return z0
    Wr = N.T @ W @ N
    try:
        cf = sla.cho_factor(Wr, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DegenerateProblemError(
            "objective weight is not positive definite on the constraint nullspace") from exc
    diag = np.abs(np.diag(cf[0]))
    if diag.min() <= 1e-8 * diag.max():
        raise DegenerateProblemError("objective weight is singular on the constraint nullspace")
    y = sla.cho_solve(cf, -(N.T @ (W @ z0)))
    return z0 + N @ y


def solve_eq_ls_banded(weight_diag, eq_matrix, eq_rhs, tol=1e-14):
    """argmin 1/2 z^T diag(w) z subject to E z = h, through the dual normal equations.

    Fast path for a diagonal weight and a sparse E whose Gram matrix
    ``E diag(w)^-1 E^T`` is banded (time-stacked dynamics rows). Any ``z`` of
    the form ``diag(w)^-1 E^T mu`` that satisfies ``E z = h`` is the unique
    optimizer, so a small residual certifies the answer. Returns None when
    the fast path does not apply or does not certify; the caller then falls
    back to ``solve_eq_ls``.
    """
    w = np.asarray(weight_diag, dtype=float)
    if w.min() <= 0:
        return None
    E = sps.csr_matrix(eq_matrix)
    h = np.asarray(eq_rhs, dtype=float)
    winv = 1.0 / w
    S = (E.multiply(winv[None, :]) @ E.T).tocoo()
    upper = S.col >= S.row
    r, c = S.row[upper], S.col[upper]
    if r.size == 0:
        return None
    u = int((c - r).max())
    ab = np.zeros((u + 1, S.shape[0]))
    ab[u + r - c, c] = S.data[upper]
    # redundant rows make S singular; a tiny shift keeps the factor defined
    ab[u] += 1e-13 * ab[u].max()
    try:
        cb = sla.cholesky_banded(ab)
    except np.linalg.LinAlgError:
        return None
    scale = 1.0 + np.abs(h).max()
    z = np.zeros((E.shape[1],) + h.shape[1:])
    for _ in range(6):
        res = h - E @ z
        if np.abs(res).max() <= tol * scale:
            return z
        mu = sla.cho_solve_banded((cb, False), res)
        z = z + (winv[:, None] * (E.T @ mu) if h.ndim == 2 else winv * (E.T @ mu))
    return z if np.abs(h - E @ z).max() <= tol * scale else None


# -- box-constrained QP ---------------------------------------------------------

@dataclass(frozen=True)
class QpProblem:
    """minimize 1/2 z^T H z + g^T z  s.t.  E z = h,  lower <= z <= upper."""

    hessian: np.ndarray
    linear: np.ndarray
    eq_matrix: np.ndarray = None
    eq_rhs: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        g = np.asarray(self.linear, dtype=float).ravel()
        n = g.size
        if H.shape != (n, n):
            raise DimensionError(f"hessian {H.shape} does not match linear term ({n},)")
        if not np.allclose(H, H.T, atol=1e-10 * max(1.0, np.abs(H).max())):
            raise ValueError("hessian must be symmetric")
        E = np.zeros((0, n)) if self.eq_matrix is None else np.atleast_2d(
            np.asarray(self.eq_matrix, dtype=float))
        h = np.zeros(E.shape[0]) if self.eq_rhs is None else np.asarray(
            self.eq_rhs, dtype=float).ravel()
        lo = np.full(n, -np.inf) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=float), (n,)).copy()
        hi = np.full(n, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=float), (n,)).copy()
        if E.shape[1] != n or h.shape != (E.shape[0],):
            raise DimensionError("equality constraint shapes do not match")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        for name, val in (("hessian", H), ("linear", g), ("eq_matrix", E), ("eq_rhs", h),
                          ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)

    @property
    def size(self):
        return self.linear.size

    def objective(self, z):
        return float(0.5 * z @ self.hessian @ z + self.linear @ z)


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    max_iters: int = 5000
    adaptive_rho: bool = True
    # residual balancing: rescale rho by ``tau`` when one residual exceeds ``mu`` times the other
    mu: float = 5.0
    tau: float = 2.0
    # over-relaxation factor in (0, 2); 1 is plain ADMM
    alpha: float = 1.0

    def __post_init__(self):
        if min(self.rho, self.eps_primal, self.eps_dual, self.max_iters) <= 0:
            raise ValueError("ADMM parameters must be positive")
        if not 0 < self.alpha < 2:
            raise ValueError("over-relaxation factor must lie in (0, 2)")


class QpSolution(NamedTuple):
    solution: np.ndarray
    iterations: int
    residuals: dict
    active: np.ndarray


def _eq_qp(Hf, gf, Ef, hf):
    """minimize 1/2 z^T Hf z + gf^T z s.t. Ef z = hf; minimum-norm on ties.

    Returns the minimizer and the multipliers of the equality rows.
    """
    if Ef.shape[0]:
        red = reduce_rows(Ef, hf)
        z0, N = red.particular, red.nullspace
        Hr = N.T @ Hf @ N
        gr = N.T @ (Hf @ z0 + gf)
    else:
        z0, N = np.zeros(gf.size), None
        Hr, gr = Hf, gf
    if Hr.shape[0] == 0:
        y = np.zeros(0)
    else:
        try:
            cf = sla.cho_factor(Hr, lower=True)
            d = np.abs(np.diag(cf[0]))
            if d.min() <= 1e-7 * d.max():
                raise np.linalg.LinAlgError("near singular")
            y = sla.cho_solve(cf, -gr)
        except np.linalg.LinAlgError:
            # PSD and singular: minimum-norm optimizer over the optimal face
            w, V = np.linalg.eigh(Hr)
            pos = w > 1e-10 * max(w.max(), 1e-300)
            proj = V[:, ~pos].T @ gr
            if np.linalg.norm(proj) > 1e-8 * (1.0 + np.linalg.norm(gr)):
                raise DegenerateProblemError("quadratic program is unbounded below")
            y = -(V[:, pos] @ ((V[:, pos].T @ gr) / w[pos]))
    zf = z0 + (y if N is None else N @ y)
    if Ef.shape[0]:
        lam, *_ = np.linalg.lstsq(Ef.T, -(Hf @ zf + gf), rcond=None)
    else:
        lam = np.zeros(0)
    return zf, lam


def _bpp(H, g, E, h, lo, hi, active, max_iters):
    """Block principal pivoting with Murty's single-pivot fallback.

    ``active`` holds -1 (at lower), +1 (at upper) or 0 (free) per coordinate.
    """
    n = g.size
    active = active.copy()
    active[(active == -1) & ~np.isfinite(lo)] = 0
    active[(active == 1) & ~np.isfinite(hi)] = 0
    best, stalls = n + 1, 0
    zscale = max(1.0, np.max(np.abs(np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)],
                                                    [0.0]]))))
    for it in range(1, max_iters + 1):
        free = np.flatnonzero(active == 0)
        z = np.where(active == -1, lo, np.where(active == 1, hi, 0.0))
        z[free] = 0.0
        fixed = np.flatnonzero(active != 0)
        zB = z[fixed]
        gF = g[free] + H[np.ix_(free, fixed)] @ zB
        hF = h - E[:, fixed] @ zB if E.shape[0] else h
        try:
            zf, lam = _eq_qp(H[np.ix_(free, free)], gF, E[:, free], hF)
        except InfeasibleError:
            # the bound pattern leaves some equality row unsatisfiable: release its variables
            rel = np.flatnonzero(np.any(E[:, fixed] != 0, axis=0))
            if rel.size == 0:
                raise
            active[fixed[rel]] = 0
            continue
        z[free] = zf
        grad = H @ z + g + (E.T @ lam if E.shape[0] else 0.0)
        tol_p = 1e-10 * max(zscale, np.max(np.abs(z), initial=1.0))
        tol_d = 1e-10 * max(1.0, np.max(np.abs(g), initial=0.0),
                            np.max(np.abs(grad), initial=0.0), np.max(np.abs(H @ z)))
        low_viol = (active == 0) & (z < lo - tol_p)
        up_viol = (active == 0) & (z > hi + tol_p)
        dual_viol = ((active == -1) & (grad < -tol_d)) | ((active == 1) & (grad > tol_d))
        infeasible = np.flatnonzero(low_viol | up_viol | dual_viol)
        if infeasible.size == 0:
            return np.clip(z, lo, hi), it, active, lam, grad
        if infeasible.size < best:
            best, stalls = infeasible.size, 0
            flip = infeasible
        elif stalls < 3:
            stalls += 1
            flip = infeasible
        else:
            flip = infeasible[-1:]
        for k in flip:
            if low_viol[k]:
                active[k] = -1
            elif up_viol[k]:
                active[k] = 1
            else:
                active[k] = 0
    raise NonConvergenceError(f"box QP active set did not settle in {max_iters} pivots",
                              residuals={"infeasible": int(best)})


def _projected_newton(H, g, lo, hi, z, max_iters):
    """Bertsekas' projected Newton method for a box-only QP.

    Variables within ``eps`` of a bound whose gradient pushes outward are held
    fixed; the rest take a Newton step followed by a projected Armijo search.
    On a quadratic the full step is exact once the binding set settles, so the
    loop ends after finitely many steps in practice.
    """
    n = g.size
    z = np.clip(z, lo, hi)
    Hz = H @ z
    hdiag = np.diag(H)
    gscale = max(1.0, np.max(np.abs(g), initial=0.0))
    last_free, cf = None, None
    for it in range(1, max_iters + 1):
        grad = Hz + g
        pg = z - np.clip(z - grad, lo, hi)
        crit = float(np.max(np.abs(pg), initial=0.0))
        tol = 1e-9 * max(gscale, np.max(np.abs(Hz), initial=0.0))
        eps = min(1e-3, crit)
        binding = ((z <= lo + eps) & (grad > 0)) | ((z >= hi - eps) & (grad < 0))
        if crit <= tol:
            active = np.where(binding & (grad > 0), -1, np.where(binding, 1, 0))
            return z, it, active, np.zeros(0), grad
        free = np.flatnonzero(~binding)
        d = np.zeros(n)
        if free.size:
            # the factor is reused while the free set stays put
            if last_free is None or not np.array_equal(free, last_free):
                Hff = H[np.ix_(free, free)]
                try:
                    cf = sla.cho_factor(Hff, lower=True)
                except np.linalg.LinAlgError:
                    shift = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(Hff)))))
                    cf = sla.cho_factor(Hff + shift * np.eye(free.size), lower=True)
                last_free = free
            d[free] = -sla.cho_solve(cf, grad[free])
        fixed = np.flatnonzero(binding)
        diag = hdiag[fixed]
        d[fixed] = -grad[fixed] / np.where(diag > 0, diag, 1.0)
        f0 = 0.5 * z @ Hz + g @ z
        alpha = 1.0
        while True:
            zt = np.clip(z + alpha * d, lo, hi)
            step = zt - z
            Hzt = H @ zt
            ft = 0.5 * zt @ Hzt + g @ zt
            if ft <= f0 + 1e-4 * (grad @ step) or alpha < 1e-12:
                break
            alpha *= 0.5
        if not np.any(step):
            break
        z, Hz = zt, Hzt
    raise NonConvergenceError(f"projected Newton did not converge in {max_iters} steps",
                              residuals={"projected_gradient": crit})


def solve_box_qp(problem, config=None, warm_start=None, init=None):
    """Solve a :class:`QpProblem` to KKT accuracy.

    Box-only problems use projected Newton steps (falling back to pivoting if
    those stall); problems with equality rows use block principal pivoting.
    ``warm_start`` may be the ``active`` array of a previous solution and
    ``init`` a starting point. Returns a :class:`QpSolution`; ``residuals``
    holds the primal (equality and bound) and dual (stationarity and sign)
    violations of the returned point.
    """
    config = config or AdmmConfig()
    H, g, E, h = problem.hessian, problem.linear, problem.eq_matrix, problem.eq_rhs
    lo, hi = problem.lower, problem.upper
    n = problem.size

    if E.shape[0]:
        # phase one: the closest box point to the affine set must lie on it
        z1, _, _, _, _ = _bpp(E.T @ E, -(E.T @ h), np.zeros((0, n)), np.zeros(0), lo, hi,
                              np.zeros(n, dtype=int), max(config.max_iters, 10 * n))
        gap = E @ z1 - h
        if np.max(np.abs(gap)) > 1e-7 * (1.0 + np.max(np.abs(h))):
            k = int(np.argmax(np.abs(gap)))
            raise InfeasibleError(f"equality row {k} cannot be met inside the box "
                                  f"(gap {gap[k]:.3g})", where=f"row {k}")

    active = np.zeros(n, dtype=int) if warm_start is None else np.asarray(warm_start, int)
    cap = max(config.max_iters, 10 * n)
    result = None
    if not E.shape[0]:
        z0 = init if init is not None else np.where(active == -1, lo, np.where(active == 1, hi, 0.0))
        try:
            result = _projected_newton(H, g, lo, hi, np.asarray(z0, dtype=float), cap)
        except NonConvergenceError:
            active = np.zeros(n, dtype=int)
    if result is None:
        try:
            result = _bpp(H, g, E, h, lo, hi, active, cap)
        except DegenerateProblemError:
            # singular H with a recession direction blocked only by the box: a vanishing
            # Tikhonov shift picks the minimum-norm optimizer
            delta = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(H)))))
            result = _bpp(H + delta * np.eye(n), g, E, h, lo, hi, active, cap)
    z, iters, active, lam, _ = result
    grad = H @ z + g + (E.T @ lam if E.shape[0] else 0.0)
    eq_res = float(np.max(np.abs(E @ z - h), initial=0.0))
    bound_res = float(max(np.max(lo - z, initial=0.0), np.max(z - hi, initial=0.0)))
    free = active == 0
    dual = float(max(np.max(np.abs(grad[free]), initial=0.0),
                     np.max(-grad[active == -1], initial=0.0),
                     np.max(grad[active == 1], initial=0.0)))
    return QpSolution(z, iters, {"primal": max(eq_res, bound_res), "dual": dual}, active)


# -- ADMM ---------------------------------------------------------------------

class AdmmResult(NamedTuple):
    consensus: np.ndarray
    iterations: int
    history: list
    row_copy: np.ndarray
    dual: np.ndarray
    rho: float


def admm_two_block(prox_f: Callable, proj_g: Callable, dim: int, config: AdmmConfig = None,
                   init=None, dual_init=None, rho=None):
    """Two-block consensus ADMM in scaled form.

    Iterates ``phi = prox_f(psi - lam, rho)``, ``psi = proj_g(phi + lam)``,
    ``lam += phi - psi`` until ``||phi - psi|| <= eps_primal`` and
    ``rho ||psi - psi_prev|| <= eps_dual``. Returns the ``psi`` iterate.
    """
    config = config or AdmmConfig()
    rho = float(config.rho if rho is None else rho)
    psi = np.zeros(dim) if init is None else np.array(init, dtype=float)
    lam = np.zeros(dim) if dual_init is None else np.array(dual_init, dtype=float)
    if psi.shape != (dim,) or lam.shape != (dim,):
        raise DimensionError("initial iterates must have length dim")
    history = []
    for it in range(1, config.max_iters + 1):
        phi = prox_f(psi - lam, rho)
        psi_prev = psi
        relaxed = phi if config.alpha == 1.0 else config.alpha * phi + (1.0 - config.alpha) * psi
        psi = proj_g(relaxed + lam)
        lam = lam + relaxed - psi
        r = float(np.linalg.norm(phi - psi))
        s = float(rho * np.linalg.norm(psi - psi_prev))
        history.append((r, s, rho))
        if r <= config.eps_primal and s <= config.eps_dual:
            return AdmmResult(psi, it, history, phi, lam, rho)
        if config.adaptive_rho:
            if r > config.mu * s:
                rho *= config.tau
                lam /= config.tau
            elif s > config.mu * r:
                rho /= config.tau
                lam *= config.tau
    raise NonConvergenceError(
        f"ADMM did not converge in {config.max_iters} iterations "
        f"(primal {history[-1][0]:.3g}, dual {history[-1][1]:.3g})",
        residuals=history[-1][:2], history=history)
