"""Proximity operators and projections used by the primal-dual iteration,
plus brute-force oracles used only by tests and diagnostics.

All closed forms act per pixel on 2-vectors and are nonexpansive.
"""

from __future__ import annotations

import numpy as np

from .directions import AffineFieldOperator, DirectionField
from .grids import Image, VectorField


def _block_soft_raw(u: np.ndarray, n: int, sigma: float, out: np.ndarray) -> np.ndarray:
    """Per-pixel block soft-thresholding with threshold ``sigma``."""
    u1, u2 = u[:n], u[n:]
    norm = np.sqrt(u1 * u1 + u2 * u2)
    scale = 1.0 - sigma / np.maximum(norm, sigma)
    out[:n] = u1 * scale
    out[n:] = u2 * scale
    return out


def _project_ball_raw(u: np.ndarray, n: int, out: np.ndarray) -> np.ndarray:
    """Per-pixel projection onto the unit Euclidean ball of R^2."""
    u1, u2 = u[:n], u[n:]
    norm = np.sqrt(u1 * u1 + u2 * u2)
    den = np.maximum(norm, 1.0)
    out[:n] = u1 / den
    out[n:] = u2 / den
    return out


def prox_l12(u: VectorField, sigma: float) -> VectorField:
    """Proximity operator of ``sigma * ||.||_{1,2}``.

    Each pair maps to ``(1 - sigma/||u_i||)_+ u_i``; a zero pair stays zero
    (the 0/0 in the textbook formula is resolved by its limit).
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    out = np.empty_like(u.data)
    _block_soft_raw(u.data, u.n, float(sigma), out)
    return VectorField(n=u.n, data=out)


def project_linf2_ball(u: VectorField) -> VectorField:
    """Per-pixel projection onto the unit ball; prox of the ball indicator.

    Independent of any step size because the underlying function is an
    indicator.
    """
    out = np.empty_like(u.data)
    _project_ball_raw(u.data, u.n, out)
    return VectorField(n=u.n, data=out)


def prox_consensus_dual(y: VectorField, v: VectorField) -> tuple[VectorField, VectorField]:
    """Prox of the conjugate of the consensus indicator ``iota_{y=v}``.

    Returns ``((y - v)/2, (v - y)/2)``; the two outputs are exact negatives
    of each other, and the map does not depend on the step size.
    """
    if y.n != v.n:
        raise ValueError("field size mismatch")
    d = 0.5 * (y.data - v.data)
    return VectorField(n=y.n, data=d), VectorField(n=y.n, data=-d)


def project_box(x: Image, lo: float = 0.0, hi: float = 1.0) -> Image:
    """Componentwise clamp of an image to ``[lo, hi]``."""
    if lo > hi:
        raise ValueError("lo must be <= hi")
    return Image(width=x.width, height=x.height, data=np.clip(x.data, lo, hi))


def l12_norm(u: VectorField) -> float:
    """Sum over pixels of the Euclidean norms of the 2-vector pairs."""
    n = u.n
    return float(np.sum(np.sqrt(u.data[:n] ** 2 + u.data[n:] ** 2)))


# ---------------------------------------------------------------------------
# test / diagnostic oracles
# ---------------------------------------------------------------------------


def prox_oracle(objective, u, sigma: float, grid: float = 1e-2) -> np.ndarray:
    """Brute-force prox: minimize ``sigma*objective(v) + 0.5*||v - u||^2``.

    ``objective`` must accept an ``(m, d)`` array of candidate points and
    return ``(m,)`` values (``+inf`` encodes indicator constraints). The
    search runs a coarse grid of roughly ``grid`` resolution over a box
    around ``0`` and ``u``, followed by two cyclic golden-section passes per
    coordinate down to ``1e-5``. Only intended for validating closed forms;
    dimension is capped at 4.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    d = u.size
    if d > 4:
        raise ValueError(f"prox_oracle supports dimension <= 4, got {d}")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")

    lo = np.minimum(u, 0.0) - 1.0
    hi = np.maximum(u, 0.0) + 1.0

    def total(points: np.ndarray) -> np.ndarray:
        fid = 0.5 * np.sum((points - u) ** 2, axis=1)
        return sigma * objective(points) + fid

    # coarse grid, capped in size for higher dimensions
    per_axis = int(np.ceil(float(np.max(hi - lo)) / grid)) + 1
    per_axis = min(per_axis, {1: 4001, 2: 401, 3: 101, 4: 41}[d])
    axes = [np.linspace(lo[j], hi[j], per_axis) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = total(pts)
    best = pts[int(np.argmin(vals))].copy()
    step = float(np.max((hi - lo) / (per_axis - 1)))

    # candidate snaps for the common kinks of sparsity objectives
    for cand in (np.zeros(d), u.copy()):
        if total(cand[None, :])[0] < total(best[None, :])[0]:
            best = cand.copy()

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    for _ in range(2):  # two cyclic golden-section refinement passes
        for j in range(d):
            a, b = best[j] - 2.0 * step, best[j] + 2.0 * step
            probe = best.copy()

            def f1(t):
                probe[j] = t
                return float(total(probe[None, :])[0])

            c1 = b - invphi * (b - a)
            c2 = a + invphi * (b - a)
            f_c1, f_c2 = f1(c1), f1(c2)
            while b - a > 1e-5:
                if f_c1 <= f_c2:
                    b, c2, f_c2 = c2, c1, f_c1
                    c1 = b - invphi * (b - a)
                    f_c1 = f1(c1)
                else:
                    a, c1, f_c1 = c1, c2, f_c2
                    c2 = a + invphi * (b - a)
                    f_c2 = f1(c2)
            mid = 0.5 * (a + b)
            if f1(mid) <= total(best[None, :])[0]:
                best[j] = mid
        step = max(step * 0.05, 1e-5)

    for cand in (np.zeros(d), u.copy()):
        if total(cand[None, :])[0] < total(best[None, :])[0]:
            best = cand.copy()
    return best


def moreau_envelope_oracle(
    u: VectorField,
    gamma: float,
    field: DirectionField,
    iters: int = 200000,
    tol: float = 1e-10,
) -> float:
    """Generalized Moreau envelope of the directional seminorm at ``u``.

    Evaluates ``inf_t { phi(t) + gamma/2 ||u - t||^2 }`` where ``phi`` is the
    directional sparsity seminorm. Substituting ``t = A^-* s`` turns the
    inner problem into ``min_s ||s||_{1,2} + gamma/2 ||u - A^-* s||^2``,
    solved by proximal gradient with step ``1/gamma`` (valid since
    ``|||A^-*||| <= 1``). Diagnostic/test oracle only; never on the solve
    path. Monotone by construction, and initialized at ``t = u`` so the
    returned value never exceeds ``phi(u)``.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if u.n != field.n:
        raise ValueError("field/vector size mismatch")
    if gamma == 0.0:
        return 0.0  # quadratic term vanishes; inf_t phi(t) = 0 at t = 0

    n = u.n
    inv_adj = AffineFieldOperator(field, "inverse_adjoint")
    inv = AffineFieldOperator(field, "inverse")
    s = AffineFieldOperator(field, "adjoint").apply_raw(u.data)  # t0 = u
    step = 1.0 / gamma
    buf = np.empty_like(s)
    for _ in range(iters):
        resid = u.data - inv_adj.apply_raw(s)
        z = s + inv.apply_raw(resid)  # s - step * (-gamma * A^-1 resid)
        _block_soft_raw(z, n, step, buf)
        delta = float(np.max(np.abs(buf - s)))
        s, buf = buf, s
        if delta < tol:
            resid = u.data - inv_adj.apply_raw(s)
            value = float(
                np.sum(np.sqrt(s[:n] ** 2 + s[n:] ** 2))
                + 0.5 * gamma * np.dot(resid, resid)
            )
            return value
    raise RuntimeError(
        f"moreau_envelope_oracle: inner solver did not reach {tol:g} "
        f"within {iters} iterations (last change {delta:g})"
    )
