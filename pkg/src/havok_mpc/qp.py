"""Box-constrained strictly convex QP solver.

    minimize  0.5 u^T H u + g^T u   subject to  lb <= u <= ub

Projected gradient with Barzilai-Borwein steps and a non-monotone acceptance
test; steps that fail the test fall back to the fixed step 1/L. Once the
active set settles, a reduced Newton step on the free variables is tried,
which finishes small problems in a handful of iterations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConvergenceError

KKT_TOL = 1e-8
NONMONOTONE_MEMORY = 10


def max_eigenvalue(H: np.ndarray, iters: int = 100, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = H.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(iters):
        w = H @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return lam


def kkt_residual(H, g, lb, ub, u) -> float:
    """``||u - clamp(u - (H u + g))||_inf``; zero exactly at the optimum."""
    return float(np.max(np.abs(u - np.clip(u - (H @ u + g), lb, ub)), initial=0.0))


def objective(H, g, u) -> float:
    u = np.asarray(u, dtype=float)
    return float(0.5 * u @ H @ u + np.asarray(g, dtype=float) @ u)


@dataclass
class QpSolution:
    u: np.ndarray
    iterations: int
    residual: float


def _newton_on_free_set(H, g, lb, ub, u, f_u):
    """Projected search along the Newton direction of the free variables.

    Variables at a bound whose gradient pushes outward stay fixed. Returns
    the first point along ``clip(u + t d)``, ``t = 1, 1/2, ...`` that lowers
    the objective, or None.
    """
    grad = H @ u + g
    eps = 1e-12 * (1.0 + np.abs(u))
    at_lb = (u <= lb + eps) & (grad > 0)
    at_ub = (u >= ub - eps) & (grad < 0)
    free = ~(at_lb | at_ub)
    if not free.any():
        return None
    d = np.zeros_like(u)
    try:
        d[free] = -np.linalg.solve(H[np.ix_(free, free)], grad[free])
    except np.linalg.LinAlgError:
        return None
    t = 1.0
    for _ in range(30):
        cand = np.clip(u + t * d, lb, ub)
        f = objective(H, g, cand)
        if f < f_u:
            return cand, f
        t *= 0.5
    return None


def solve_box_qp(
    H,
    g,
    lb,
    ub,
    warm_start=None,
    max_iter: Optional[int] = None,
    tol: float = KKT_TOL,
) -> QpSolution:
    """Solve the box QP to a projected-gradient residual below ``tol``.

    Raises ConvergenceError carrying the best iterate when ``max_iter``
    (default ``max(500, 10 n)``) is exhausted.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    lb = np.broadcast_to(np.asarray(lb, dtype=float), g.shape)
    ub = np.broadcast_to(np.asarray(ub, dtype=float), g.shape)
    n = g.size
    if max_iter is None:
        max_iter = max(500, 10 * n)

    if warm_start is None:
        u = np.clip(np.zeros(n), lb, ub)
    else:
        u = np.clip(np.asarray(warm_start, dtype=float), lb, ub)
    res = kkt_residual(H, g, lb, ub, u)
    if res < tol:
        return QpSolution(u, 0, res)

    L = max_eigenvalue(H)
    fixed_step = 1.0 / L if L > 0 else 1.0
    best_u, best_res = u, res
    grad = H @ u + g
    f_hist = [objective(H, g, u)]
    alpha = fixed_step
    for it in range(1, max_iter + 1):
        cand = np.clip(u - alpha * grad, lb, ub)
        f_cand = objective(H, g, cand)
        if f_cand > max(f_hist[-NONMONOTONE_MEMORY:]) - 1e-4 * (grad @ (u - cand)):
            cand = np.clip(u - fixed_step * grad, lb, ub)
            f_cand = objective(H, g, cand)
        newton = _newton_on_free_set(H, g, lb, ub, cand, f_cand)
        if newton is not None:
            cand, f_cand = newton

        grad_new = H @ cand + g
        s, y = cand - u, grad_new - grad
        sy = s @ y
        alpha = float(s @ s / sy) if sy > 0 else fixed_step
        u, grad = cand, grad_new
        f_hist.append(f_cand)

        res = kkt_residual(H, g, lb, ub, u)
        if res < best_res:
            best_u, best_res = u, res
        if res < tol:
            return QpSolution(u, it, res)
    raise ConvergenceError(
        f"box QP did not converge in {max_iter} iterations (residual {best_res:.3g})",
        best=best_u,
        residual=best_res,
        iterations=max_iter,
    )
