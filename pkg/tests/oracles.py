"""Independent test oracles.

Everything here is deliberately written against its own finite-difference
operators (not the package's) so that agreement with the library is a
two-sided check.
"""

from __future__ import annotations

import numpy as np


def grad2(u: np.ndarray):
    """Forward differences, zero last column/row (Chambolle's convention)."""
    gh = np.zeros_like(u)
    gv = np.zeros_like(u)
    gh[:, :-1] = u[:, 1:] - u[:, :-1]
    gv[:-1, :] = u[1:, :] - u[:-1, :]
    return gh, gv


def div2(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Discrete divergence, the negative adjoint of :func:`grad2`."""
    h, w = p1.shape
    d = np.zeros_like(p1)
    d[:, 0] += p1[:, 0]
    d[:, 1 : w - 1] += p1[:, 1 : w - 1] - p1[:, 0 : w - 2]
    d[:, w - 1] += -p1[:, w - 2]
    d[0, :] += p2[0, :]
    d[1 : h - 1, :] += p2[1 : h - 1, :] - p2[0 : h - 2, :]
    d[h - 1, :] += -p2[h - 2, :]
    return d


def chambolle_tv_denoise(
    o2d: np.ndarray, lam: float, iters: int = 3000, tau: float = 0.125
) -> np.ndarray:
    """Dual projection algorithm for ``min_x lam/2 ||x-o||^2 + TV(x)``.

    Fixed-point iteration on the dual field with the semi-implicit
    normalization step; ``tau <= 1/8`` guarantees convergence. Returns
    ``o - mu * div p`` with ``mu = 1/lam``.
    """
    mu = 1.0 / lam
    g = o2d / mu
    p1 = np.zeros_like(o2d)
    p2 = np.zeros_like(o2d)
    for _ in range(iters):
        r1, r2 = grad2(div2(p1, p2) - g)
        mag = np.sqrt(r1 * r1 + r2 * r2)
        den = 1.0 + tau * mag
        p1 = (p1 + tau * r1) / den
        p2 = (p2 + tau * r2) / den
    return o2d - mu * div2(p1, p2)


def tv_denoise_cvxpy(o2d: np.ndarray, lam: float) -> np.ndarray:
    """High-accuracy reference for the same TV problem via cvxpy (tiny
    grids only)."""
    import cvxpy as cp

    h, w = o2d.shape
    x = cp.Variable((h, w))
    terms = []
    for r in range(h):
        for c in range(w):
            parts = []
            if c < w - 1:
                parts.append(x[r, c + 1] - x[r, c])
            if r < h - 1:
                parts.append(x[r + 1, c] - x[r, c])
            if parts:
                terms.append(cp.norm(cp.hstack(parts)))
    obj = 0.5 * lam * cp.sum_squares(x - o2d) + cp.sum(terms)
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve(solver=cp.CLARABEL)
    return np.asarray(x.value)


def huber_envelope_l2(u: np.ndarray, gamma: float) -> float:
    """Closed-form Moreau envelope of the Euclidean norm of a 2-vector:
    ``gamma/2 ||u||^2`` inside radius ``1/gamma``, ``||u|| - 1/(2 gamma)``
    outside."""
    r = float(np.hypot(u[0], u[1]))
    if r <= 1.0 / gamma:
        return 0.5 * gamma * r * r
    return r - 0.5 / gamma
