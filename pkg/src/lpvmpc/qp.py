"""Dense dual active-set QP solver (Goldfarb-Idnani) for

    min 1/2 z'Hz + f'z   s.t.  Gz <= h

Starts at the unconstrained minimizer and repeatedly adds the most violated
constraint, dropping active ones whose multipliers would turn negative. The
dual objective increases monotonically, so the method cannot cycle in exact
arithmetic. ``H`` must be positive definite; a semidefinite ``H`` is
regularized with a tiny ridge.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE_RELAXED = "infeasible_relaxed"


class QpProblem(NamedTuple):
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray


class QpResult(NamedTuple):
    z: np.ndarray
    iterations: int
    status: str
    multipliers: np.ndarray


def objective(qp: QpProblem, z) -> float:
    return float(0.5 * z @ qp.H @ z + qp.f @ z)


def kkt_residual(qp: QpProblem, z, lam) -> float:
    """Max of stationarity, primal infeasibility, dual infeasibility and complementarity."""
    slack = qp.G @ z - qp.h
    stat = qp.H @ z + qp.f + qp.G.T @ lam
    parts = [np.max(np.abs(stat), initial=0.0),
             np.max(slack, initial=0.0),
             np.max(-lam, initial=0.0),
             np.max(np.abs(lam * slack), initial=0.0)]
    return float(max(parts))


def _inverse_cholesky(H):
    n = H.shape[0]
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * (1.0 + np.max(np.abs(np.diag(H)), initial=0.0))
        L = np.linalg.cholesky(H + ridge * np.eye(n))
    return solve_triangular(L, np.eye(n), lower=True)


def solve_qp(qp: QpProblem, tol: float = 1e-6, max_iter: int = 4000) -> QpResult:
    H, f, G, h = (np.asarray(a, dtype=float) for a in qp)
    n = H.shape[0]
    if H.shape != (n, n) or f.shape != (n,) or G.shape[1:] != (n,) or h.shape != G.shape[:1]:
        raise ValueError("inconsistent QP dimensions")
    m = G.shape[0]
    J = _inverse_cholesky(H)          # H^-1 = J'J
    z = -(J.T @ (J @ f))
    active: list[int] = []
    u = np.zeros(0)
    feas_tol = min(tol, 1e-9) * (1.0 + np.max(np.abs(h), initial=0.0))
    it = 0
    status = OPTIMAL

    while m:
        slack = h - G @ z
        if active:
            slack[active] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -feas_tol:
            break
        if it >= max_iter:
            status = MAX_ITER
            break
        n_p = -G[p]                    # constraint p written as n_p'z >= -h_p
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            d = J @ n_p
            if active:
                Q, R = np.linalg.qr(J @ -G[active].T)
                proj = Q.T @ d
                step = J.T @ (d - Q @ proj)
                r = solve_triangular(R, proj)
            else:
                step = J.T @ d
                r = np.zeros(0)

            t1, drop = np.inf, -1
            pos = np.flatnonzero(r > 1e-14 * (1.0 + np.abs(r).max(initial=0.0)))
            if pos.size:
                ratios = u_plus[pos] / r[pos]
                j = int(np.argmin(ratios))
                t1, drop = float(max(ratios[j], 0.0)), int(pos[j])

            curvature = float(step @ n_p)
            if curvature <= 1e-13 * float(d @ d):
                t2 = np.inf
            else:
                t2 = -float(h[p] - G[p] @ z) / curvature

            if not np.isfinite(t1) and not np.isfinite(t2):
                status = INFEASIBLE_RELAXED
                break
            if not np.isfinite(t2):
                # p depends linearly on the active set: dual step only
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                del active[drop]
                u_plus = np.delete(u_plus, drop)
                continue
            t = min(t1, t2)
            z = z + t * step
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            del active[drop]
            u_plus = np.delete(u_plus, drop)
            if it >= max_iter:
                status = MAX_ITER
                u = u_plus[:-1]
                break
        if status != OPTIMAL:
            break

    lam = np.zeros(m)
    if active:
        lam[active] = np.maximum(u[:len(active)], 0.0)
    return QpResult(z, it, status, lam)
