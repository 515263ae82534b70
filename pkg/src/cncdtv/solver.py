"""Convex-non-convex directional TV denoising via primal-dual splitting.

The target problem couples an image block ``x`` with two gradient-space
blocks ``y`` (envelope dual) and ``v`` (directional consensus variable):

    minimize  F(x, y, v) + ||v||_{1,2} + iota_{[0,1]^n}(x)
              + iota_{Dx = A^-* v} + iota_{B_inf,2}(A^-1 gamma (Dx - y))

    F(x, y, v) = lam/2 ||x - o||^2 - gamma/2 ||Dx||^2 + gamma/2 ||y||^2

with ``gamma = rho * lam / 8 < lam/8`` keeping the whole objective convex
despite the non-convex penalty it encodes. The iteration is a primal-dual
splitting with one gradient/projection primal step and three exact dual
proximal steps; see :func:`solve`.

Two interchangeable iteration engines exist: a plain numpy one (reference)
and a fused numba kernel (default when numba is importable). They execute
the same floating-point expression trees and produce identical iterates.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .directions import AffineFieldOperator, DirectionField, mode_matrices
from .grids import (
    Image,
    VectorField,
    _grad_adjoint_raw,
    _grad_raw,
    dtd_max_eigenvalue,
)

DEFAULT_MAX_ITERS = 3000
FEAS_TOL = 1e-6


class DivergenceError(RuntimeError):
    """Raised when an iterate stops being finite."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite iterate detected at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class CncParams:
    """Model parameters: fidelity weight and non-convexity degree.

    ``gamma = rho * lam / 8`` scales the quadratic envelope; ``rho < 1``
    guarantees convexity of the reformulated problem by construction.
    """

    lam: float
    rho: float = 0.0

    def __post_init__(self):
        if not (self.lam > 0):
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")

    @property
    def gamma(self) -> float:
        return self.rho * self.lam / 8.0


class SolverVariant(str, enum.Enum):
    C_TV = "c-tv"
    CNC_TV = "cnc-tv"
    C_DTV = "c-dtv"
    CNC_DTV = "cnc-dtv"

    @property
    def is_cnc(self) -> bool:
        return self in (SolverVariant.CNC_TV, SolverVariant.CNC_DTV)

    @property
    def is_directional(self) -> bool:
        return self in (SolverVariant.C_DTV, SolverVariant.CNC_DTV)


@dataclass
class SolverConfig:
    """Full solve specification.

    ``field`` is required for directional variants and ignored (with the
    identity geometry substituted) for the TV ones. Convex variants force
    ``gamma = 0`` regardless of ``rho``. Step sizes are selected by
    :func:`select_steps` unless both ``tau`` and ``sigma`` are given, in
    which case they must satisfy the step-size rule
    ``1/tau - sigma * B >= lam / 2`` with ``B = 9 + 9 gamma^2``.

    ``tol > 0`` stops the iteration once the relative iterate change drops
    below ``tol``, but never before ``min_iters`` iterations: from a cold
    start the duals are all zero and the first few primal steps are nearly
    stationary, so an unguarded test would fire immediately.
    """

    params: CncParams
    variant: SolverVariant = SolverVariant.C_TV
    field: DirectionField | None = None
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = 0.0
    min_iters: int = 30
    tau: float | None = None
    sigma: float | None = None
    dual_scale: float = 1.0
    engine: str = "auto"

    def gamma(self) -> float:
        if not self.variant.is_cnc:
            if self.params.rho != 0.0:
                warnings.warn(
                    f"variant {self.variant.value} forces rho = 0 "
                    f"(requested rho = {self.params.rho})",
                    stacklevel=2,
                )
            return 0.0
        if self.params.rho == 0.0:
            warnings.warn(
                f"rho = 0 makes {self.variant.value} identical to its convex "
                "counterpart",
                stacklevel=2,
            )
        return self.params.gamma

    def effective_field(self, n: int) -> DirectionField:
        if self.variant.is_directional:
            if self.field is None:
                raise ValueError(f"variant {self.variant.value} requires a direction field")
            if self.field.n != n:
                raise ValueError("direction field size does not match the image")
            return self.field
        return DirectionField.identity(n)

    def steps(self, gamma: float | None = None) -> tuple[float, float]:
        if gamma is None:
            gamma = self.gamma()
        if (self.tau is None) != (self.sigma is None):
            raise ValueError("set both tau and sigma or neither")
        if self.tau is None:
            params = self.params if gamma == self.params.gamma else CncParams(
                self.params.lam, 0.0
            )
            return select_steps(params, self.dual_scale)
        bound = operator_sum_norm_bound(gamma)
        margin = 1.0 / self.tau - self.sigma * bound - self.params.lam / 2.0
        if margin < -1e-9:
            raise ValueError(
                f"step sizes violate the rule: 1/tau - sigma*B - lam/2 = {margin:g} < 0"
            )
        return float(self.tau), float(self.sigma)

    def to_kv(self) -> str:
        """Flat key=value serialization."""
        tau, sigma = (self.tau, self.sigma) if self.tau is not None else (None, None)
        lines = [
            f"lambda={self.params.lam!r}",
            f"rho={self.params.rho!r}",
            f"variant={self.variant.value}",
            f"max_iters={self.max_iters}",
            f"tol={self.tol!r}",
            f"tau={'' if tau is None else repr(tau)}",
            f"sigma={'' if sigma is None else repr(sigma)}",
            f"engine={self.engine}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str, field: DirectionField | None = None) -> "SolverConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            k, _, v = line.partition("=")
            kv[k.strip()] = v.strip()
        params = CncParams(lam=float(kv["lambda"]), rho=float(kv.get("rho", "0")))
        return cls(
            params=params,
            variant=SolverVariant(kv.get("variant", "c-tv")),
            field=field,
            max_iters=int(kv.get("max_iters", DEFAULT_MAX_ITERS)),
            tol=float(kv.get("tol", "0")),
            tau=float(kv["tau"]) if kv.get("tau") else None,
            sigma=float(kv["sigma"]) if kv.get("sigma") else None,
            engine=kv.get("engine", "auto"),
        )


@dataclass(frozen=True)
class SolverState:
    """Primal blocks ``(x, y, v)`` plus the three dual blocks.

    ``w3`` is the consensus dual pair; every state reachable by the solver
    has ``w3[1] = -w3[0]`` exactly (the prox of the consensus conjugate
    produces antisymmetric pairs), and :func:`solve` requires that of
    initial states as well.
    """

    x: Image
    y: VectorField
    v: VectorField
    w1: VectorField
    w2: VectorField
    w3: tuple[VectorField, VectorField]

    @classmethod
    def cold_start(cls, o: Image) -> "SolverState":
        n = o.n
        return cls(
            x=Image(o.width, o.height, np.clip(o.data, 0.0, 1.0)),
            y=VectorField.zeros(n),
            v=VectorField.zeros(n),
            w1=VectorField.zeros(n),
            w2=VectorField.zeros(n),
            w3=(VectorField.zeros(n), VectorField.zeros(n)),
        )

    def z_flat(self) -> np.ndarray:
        """Concatenated primal triple, used for distance diagnostics."""
        return np.concatenate([self.x.data, self.y.data, self.v.data])


@dataclass
class SolverTrace:
    """Per-iteration diagnostics; fields are ``nan`` where not computed."""

    iterations: list = dc_field(default_factory=list)
    objective: list = dc_field(default_factory=list)
    psnr: list = dc_field(default_factory=list)
    rel_change: list = dc_field(default_factory=list)
    dist_to_ref: list = dc_field(default_factory=list)
    iters_run: int = 0

    def record(self, iteration, objective=math.nan, psnr=math.nan,
               rel_change=math.nan, dist_to_ref=math.nan):
        self.iterations.append(iteration)
        self.objective.append(objective)
        self.psnr.append(psnr)
        self.rel_change.append(rel_change)
        self.dist_to_ref.append(dist_to_ref)

    def __len__(self) -> int:
        return len(self.iterations)

    def to_csv(self, path) -> None:
        def fmt(v):
            return "" if (isinstance(v, float) and math.isnan(v)) else str(v)

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "psnr", "rel_change", "dist_to_ref"])
            for i in range(len(self.iterations)):
                w.writerow(
                    [
                        self.iterations[i],
                        fmt(self.objective[i]),
                        fmt(self.psnr[i]),
                        fmt(self.rel_change[i]),
                        fmt(self.dist_to_ref[i]),
                    ]
                )


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def operator_sum_norm_bound(gamma: float) -> float:
    """Analytic bound ``B = 1 + 9 gamma^2 + 8`` on ``|||sum L_i^T L_i|||``."""
    return 9.0 + 9.0 * gamma * gamma


def select_steps(params: CncParams, dual_scale: float = 1.0) -> tuple[float, float]:
    """Step sizes satisfying ``1/tau - sigma B >= lam/2`` with equality.

    ``sigma = dual_scale/sqrt(B)`` (default scale 1 balances the primal and
    dual steps); ``tau`` then saturates the rule with the Lipschitz constant
    of the smooth gradient, which is ``lam`` (the x-block Hessian
    ``lam I - gamma D^T D`` has norm at most ``lam`` whenever
    ``gamma <= lam/8``, and the y-block is ``gamma I``). Any positive
    ``dual_scale`` keeps the convergence guarantee; larger values trade a
    smaller primal step for finer dual resolution, which measurably speeds
    the tail convergence of the consensus blocks in iterate distance.
    """
    if dual_scale <= 0:
        raise ValueError("dual_scale must be > 0")
    bound = operator_sum_norm_bound(params.gamma)
    sigma = dual_scale / math.sqrt(bound)
    tau = 1.0 / (params.lam / 2.0 + sigma * bound)
    return tau, sigma


def _neumann_laplacian_1d(k: int) -> np.ndarray:
    lap = np.zeros((k, k))
    if k == 1:
        return lap
    idx = np.arange(k)
    lap[idx, idx] = 2.0
    lap[0, 0] = lap[-1, -1] = 1.0
    lap[idx[:-1], idx[:-1] + 1] = -1.0
    lap[idx[:-1] + 1, idx[:-1]] = -1.0
    return lap


def dtd_matrix(width: int, height: int) -> np.ndarray:
    """Dense ``D^T D`` (Neumann Laplacian) for small grids."""
    n = width * height
    if n > 4096:
        raise ValueError(f"dense D^T D refused for n={n} > 4096")
    return np.kron(np.eye(height), _neumann_laplacian_1d(width)) + np.kron(
        _neumann_laplacian_1d(height), np.eye(width)
    )


def check_convexity(params: CncParams, width: int, height: int) -> tuple[bool, float]:
    """Positive semidefiniteness of ``H = lam I - gamma D^T D``.

    Uses a dense eigensolve for ``n <= 4096`` and the exact Laplacian
    spectral bound otherwise; returns ``(H >= 0, lambda_min(H))``.
    """
    gamma = params.gamma
    n = width * height
    if n <= 4096:
        h_mat = params.lam * np.eye(n) - gamma * dtd_matrix(width, height)
        lam_min = float(np.linalg.eigvalsh(h_mat)[0])
    else:
        lam_min = params.lam - gamma * dtd_max_eigenvalue(width, height)
    return lam_min >= -1e-12, lam_min


def smooth_value_grad(
    x: Image,
    y: VectorField,
    v: VectorField,
    o: Image,
    params: CncParams,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Smooth term ``F`` and its gradient over the primal triple.

    ``F = lam/2 ||x-o||^2 - gamma/2 ||Dx||^2 + gamma/2 ||y||^2`` and
    ``grad F = (lam (x-o) - gamma D^T D x, gamma y, 0)``.
    """
    if x.n != o.n or y.n != x.n or v.n != x.n:
        raise ValueError("dimension mismatch")
    gamma = params.gamma
    diff = x.data - o.data
    dx = np.zeros(2 * x.n)
    _grad_raw(x.grid(), dx)
    value = (
        0.5 * params.lam * float(np.dot(diff, diff))
        - 0.5 * gamma * float(np.dot(dx, dx))
        + 0.5 * gamma * float(np.dot(y.data, y.data))
    )
    dtdx = np.empty(x.n)
    _grad_adjoint_raw(dx, x.height, x.width, dtdx)
    gx = params.lam * diff - gamma * dtdx
    gy = gamma * y.data
    gv = np.zeros(2 * x.n)
    return value, (gx, gy, gv)


# --- the three linear operators of the splitting, plus exact adjoints ------


def apply_L1(x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Selector of the consensus block: ``L1 (x, y, v) = v``."""
    return v.copy()


def apply_L1_adjoint(w: np.ndarray, n: int):
    return np.zeros(n), np.zeros(2 * n), w.copy()


def apply_L2(
    x: np.ndarray,
    y: np.ndarray,
    v: np.ndarray,
    gamma: float,
    field: DirectionField,
    width: int,
    height: int,
) -> np.ndarray:
    """``L2 (x, y, v) = gamma A^-1 (Dx - y)``."""
    dx = np.zeros(2 * x.size)
    _grad_raw(x.reshape(height, width), dx)
    return gamma * AffineFieldOperator(field, "inverse").apply_raw(dx - y)


def apply_L2_adjoint(
    w: np.ndarray,
    gamma: float,
    field: DirectionField,
    width: int,
    height: int,
):
    aw = AffineFieldOperator(field, "inverse_adjoint").apply_raw(w)
    gx = np.empty(width * height)
    _grad_adjoint_raw(aw, height, width, gx)
    return gamma * gx, -gamma * aw, np.zeros(w.size)


def apply_L3(
    x: np.ndarray,
    y: np.ndarray,
    v: np.ndarray,
    field: DirectionField,
    width: int,
    height: int,
):
    """``L3 (x, y, v) = (Dx, A^-* v)``."""
    dx = np.zeros(2 * x.size)
    _grad_raw(x.reshape(height, width), dx)
    return dx, AffineFieldOperator(field, "inverse_adjoint").apply_raw(v)


def apply_L3_adjoint(
    a: np.ndarray,
    b: np.ndarray,
    field: DirectionField,
    width: int,
    height: int,
):
    gx = np.empty(width * height)
    _grad_adjoint_raw(a, height, width, gx)
    return gx, np.zeros(a.size), AffineFieldOperator(field, "inverse").apply_raw(b)


def splitting_norm_estimate(
    gamma: float,
    field: DirectionField,
    width: int,
    height: int,
    iters: int = 60,
) -> float:
    """Power-iteration estimate of ``|||sum L_i^T L_i|||`` (diagnostic only;
    step-size selection always uses the analytic bound)."""
    n = width * height
    rng = np.random.default_rng(99)
    zx = rng.standard_normal(n)
    zy = rng.standard_normal(2 * n)
    zv = rng.standard_normal(2 * n)
    est = 0.0
    for _ in range(iters):
        nrm = math.sqrt(
            float(np.dot(zx, zx)) + float(np.dot(zy, zy)) + float(np.dot(zv, zv))
        )
        zx, zy, zv = zx / nrm, zy / nrm, zv / nrm
        w1 = apply_L1(zx, zy, zv)
        w2 = apply_L2(zx, zy, zv, gamma, field, width, height)
        a3, b3 = apply_L3(zx, zy, zv, field, width, height)
        t1 = apply_L1_adjoint(w1, n)
        t2 = apply_L2_adjoint(w2, gamma, field, width, height)
        t3 = apply_L3_adjoint(a3, b3, field, width, height)
        nx = t1[0] + t2[0] + t3[0]
        ny = t1[1] + t2[1] + t3[1]
        nv = t1[2] + t2[2] + t3[2]
        est = float(np.dot(zx, nx)) + float(np.dot(zy, ny)) + float(np.dot(zv, nv))
        zx, zy, zv = nx, ny, nv
    return est


# ---------------------------------------------------------------------------
# iteration engines
# ---------------------------------------------------------------------------


class _Work:
    """Preallocated state and scratch for one solve, flat layout."""

    def __init__(self, o: Image, init: SolverState, gamma: float,
                 fld: DirectionField):
        n = o.n
        self.n = n
        self.h, self.w = o.height, o.width
        self.o = o.data.copy()
        self.x = np.clip(init.x.data, 0.0, 1.0)
        self.y = init.y.data.copy()
        self.v = init.v.data.copy()
        self.w1 = init.w1.data.copy()
        self.w2 = init.w2.data.copy()
        w3a, w3b = init.w3
        if np.max(np.abs(w3a.data + w3b.data)) != 0.0:
            raise ValueError(
                "w3 initial pair must be antisymmetric (w3[1] == -w3[0]); "
                "all solver-produced states satisfy this"
            )
        self.s3 = w3a.data.copy()
        self.gamma = gamma
        self.identity = fld.is_identity
        if self.identity:
            zz = np.zeros(n)
            self.mc = np.ones(n)
            self.ms = zz
            self.msoa = zz
            self.mcoa = np.ones(n)
        else:
            c, s, a = np.cos(fld.theta), np.sin(fld.theta), fld.alpha
            self.mc, self.ms = c, s
            self.msoa, self.mcoa = s / a, c / a
        # caches
        self.dxc = np.zeros(2 * n)
        _grad_raw(self.x.reshape(self.h, self.w), self.dxc)
        self.avc = self._apply_inv_adjoint(self.v)
        # output/scratch buffers
        self.xn = np.zeros(n)
        self.yn = np.zeros(2 * n)
        self.vn = np.zeros(2 * n)
        self.avn = np.zeros(2 * n)
        self.dxn = np.zeros(2 * n)
        self.t = np.zeros(2 * n)
        self.aw = np.zeros(2 * n)
        self.q = np.zeros(2 * n)
        self.pb = np.zeros(2 * n)
        self.eb = np.zeros(2 * n)
        self.bb = np.zeros(2 * n)
        self.kb = np.zeros(2 * n)
        self.nb = np.zeros(n)
        self.nb2 = np.zeros(n)
        self.gi = np.zeros(n)

    def _apply_inv_adjoint(self, u: np.ndarray) -> np.ndarray:
        n = self.n
        out = np.empty_like(u)
        if self.identity:
            out[:] = u
            return out
        out[:n] = self.mc * u[:n] - self.msoa * u[n:]
        out[n:] = self.ms * u[:n] + self.mcoa * u[n:]
        return out

    def swap(self):
        self.x, self.xn = self.xn, self.x
        self.y, self.yn = self.yn, self.y
        self.v, self.vn = self.vn, self.v
        self.dxc, self.dxn = self.dxn, self.dxc
        self.avc, self.avn = self.avn, self.avc

    def state(self, width: int, height: int) -> SolverState:
        n = self.n
        return SolverState(
            x=Image(width, height, self.x.copy()),
            y=VectorField(n, self.y.copy()),
            v=VectorField(n, self.v.copy()),
            w1=VectorField(n, self.w1.copy()),
            w2=VectorField(n, self.w2.copy()),
            w3=(VectorField(n, self.s3.copy()), VectorField(n, -self.s3)),
        )


def _step_numpy(wk: _Work, lam: float, tau: float, sig: float) -> tuple[float, float]:
    """One primal-dual iteration; mirrors the numba kernel expression trees."""
    n, h, w = wk.n, wk.h, wk.w
    gam = wk.gamma
    identity = wk.identity
    mc, ms, msoa, mcoa = wk.mc, wk.ms, wk.msoa, wk.mcoa

    def inv_adjoint_into(u, out):  # A^-* u
        np.multiply(mc, u[:n], out=out[:n])
        np.multiply(msoa, u[n:], out=wk.nb)
        out[:n] -= wk.nb
        np.multiply(ms, u[:n], out=out[n:])
        np.multiply(mcoa, u[n:], out=wk.nb)
        out[n:] += wk.nb

    def inverse_into(u, out):  # A^-1 u
        np.multiply(mc, u[:n], out=out[:n])
        np.multiply(ms, u[n:], out=wk.nb)
        out[:n] += wk.nb
        np.multiply(msoa, u[:n], out=out[n:])
        np.negative(out[n:], out=out[n:])
        np.multiply(mcoa, u[n:], out=wk.nb)
        out[n:] += wk.nb

    # --- pass A: pullbacks, y/v primal steps, w1 dual step
    if identity:
        aw = wk.w2
        qv = wk.s3
    else:
        inv_adjoint_into(wk.w2, wk.aw)
        aw = wk.aw
        inverse_into(wk.s3, wk.q)
        qv = wk.q
    if gam > 0.0:
        np.subtract(aw, wk.dxc, out=wk.t)
        wk.t *= gam
        wk.t += wk.s3
        np.subtract(wk.y, aw, out=wk.yn)
        wk.yn *= tau * gam
        np.subtract(wk.y, wk.yn, out=wk.yn)
    else:
        np.copyto(wk.t, wk.s3)
        np.copyto(wk.yn, wk.y)
    np.subtract(wk.w1, qv, out=wk.vn)
    wk.vn *= tau
    np.subtract(wk.v, wk.vn, out=wk.vn)
    if identity:
        np.copyto(wk.avn, wk.vn)
    else:
        inv_adjoint_into(wk.vn, wk.avn)
    np.multiply(wk.vn, 2.0, out=wk.pb)
    wk.pb -= wk.v
    wk.pb *= sig
    wk.pb += wk.w1
    np.multiply(wk.pb[:n], wk.pb[:n], out=wk.nb)
    np.multiply(wk.pb[n:], wk.pb[n:], out=wk.nb2)
    wk.nb += wk.nb2
    np.sqrt(wk.nb, out=wk.nb)
    np.maximum(wk.nb, 1.0, out=wk.nb)
    np.divide(wk.pb[:n], wk.nb, out=wk.w1[:n])
    np.divide(wk.pb[n:], wk.nb, out=wk.w1[n:])

    # --- pass B: gradient adjoint and projected x step
    _grad_adjoint_raw(wk.t, h, w, wk.gi)
    gi2 = wk.gi
    np.subtract(wk.x, wk.o, out=wk.nb)
    wk.nb *= lam
    gi2 += wk.nb
    gi2 *= tau
    np.subtract(wk.x, gi2, out=wk.xn)
    np.clip(wk.xn, 0.0, 1.0, out=wk.xn)

    # --- pass C: gradient cache, w2/w3 dual steps
    _grad_raw(wk.xn.reshape(h, w), wk.dxn)
    np.multiply(wk.dxn, 2.0, out=wk.bb)
    wk.bb -= wk.dxc
    if gam > 0.0:
        np.multiply(wk.yn, 2.0, out=wk.eb)
        wk.eb -= wk.y
        np.subtract(wk.bb, wk.eb, out=wk.eb)
        if identity:
            np.copyto(wk.kb, wk.eb)
        else:
            inverse_into(wk.eb, wk.kb)
        wk.kb *= sig * gam
        wk.kb += wk.w2
        np.multiply(wk.kb[:n], wk.kb[:n], out=wk.nb)
        np.multiply(wk.kb[n:], wk.kb[n:], out=wk.nb2)
        wk.nb += wk.nb2
        np.sqrt(wk.nb, out=wk.nb)
        np.maximum(wk.nb, sig, out=wk.nb)
        np.divide(sig, wk.nb, out=wk.nb)
        np.subtract(1.0, wk.nb, out=wk.nb)
        np.multiply(wk.kb[:n], wk.nb, out=wk.w2[:n])
        np.multiply(wk.kb[n:], wk.nb, out=wk.w2[n:])
    np.multiply(wk.avn, 2.0, out=wk.eb)
    wk.eb -= wk.avc
    np.subtract(wk.bb, wk.eb, out=wk.eb)
    wk.eb *= 0.5 * sig
    wk.s3 += wk.eb

    # --- change accumulators (within-engine deterministic)
    np.subtract(wk.xn, wk.x, out=wk.nb)
    dz2 = float(np.dot(wk.nb, wk.nb))
    np.subtract(wk.vn, wk.v, out=wk.eb)
    dz2 += float(np.dot(wk.eb, wk.eb))
    z2 = float(np.dot(wk.x, wk.x)) + float(np.dot(wk.v, wk.v))
    if gam > 0.0:
        np.subtract(wk.yn, wk.y, out=wk.eb)
        dz2 += float(np.dot(wk.eb, wk.eb))
    z2 += float(np.dot(wk.y, wk.y))
    return dz2, z2


_kernel_step = None


def _load_kernel():
    global _kernel_step
    if _kernel_step is None:
        from ._kernel import pd_step

        _kernel_step = pd_step
    return _kernel_step


def _step_numba(wk: _Work, lam: float, tau: float, sig: float) -> tuple[float, float]:
    n, h, w = wk.n, wk.h, wk.w
    step = _load_kernel()

    def v2(u):
        return u[:n].reshape(h, w), u[n:].reshape(h, w)

    y1, y2 = v2(wk.y)
    v1, v2_ = v2(wk.v)
    w11, w12 = v2(wk.w1)
    w21, w22 = v2(wk.w2)
    s31, s32 = v2(wk.s3)
    dx1, dx2 = v2(wk.dxc)
    av1, av2 = v2(wk.avc)
    yn1, yn2 = v2(wk.yn)
    vn1, vn2 = v2(wk.vn)
    avn1, avn2 = v2(wk.avn)
    dxn1, dxn2 = v2(wk.dxn)
    t1, t2 = v2(wk.t)
    return step(
        wk.x.reshape(h, w),
        wk.o.reshape(h, w),
        y1,
        y2,
        v1,
        v2_,
        w11,
        w12,
        w21,
        w22,
        s31,
        s32,
        dx1,
        dx2,
        av1,
        av2,
        wk.xn.reshape(h, w),
        yn1,
        yn2,
        vn1,
        vn2,
        avn1,
        avn2,
        dxn1,
        dxn2,
        t1,
        t2,
        wk.mc.reshape(h, w),
        wk.ms.reshape(h, w),
        wk.msoa.reshape(h, w),
        wk.mcoa.reshape(h, w),
        lam,
        wk.gamma,
        tau,
        sig,
        wk.identity,
    )


def _resolve_engine(name: str):
    if name == "numpy":
        return _step_numpy
    if name == "numba":
        _load_kernel()
        return _step_numba
    if name == "auto":
        try:
            _load_kernel()
            return _step_numba
        except ImportError:
            return _step_numpy
    raise ValueError(f"unknown engine {name!r}")


# ---------------------------------------------------------------------------
# objective, solve, reformulation check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveReport:
    """Objective value with feasibility diagnostics.

    ``value`` is ``F + ||v||_{1,2}`` when all three constraints hold within
    ``feas_tol``, and ``inf`` otherwise; ``violations`` maps constraint name
    to its measured violation magnitude.
    """

    value: float
    smooth: float
    l12: float
    feasible: bool
    violations: dict


def _objective_raw(
    x: np.ndarray,
    y: np.ndarray,
    v: np.ndarray,
    o: np.ndarray,
    lam: float,
    gamma: float,
    fld: DirectionField,
    width: int,
    height: int,
    feas_tol: float = FEAS_TOL,
) -> ObjectiveReport:
    n = x.size
    dx = np.zeros(2 * n)
    _grad_raw(x.reshape(height, width), dx)
    diff = x - o
    smooth = (
        0.5 * lam * float(np.dot(diff, diff))
        - 0.5 * gamma * float(np.dot(dx, dx))
        + 0.5 * gamma * float(np.dot(y, y))
    )
    l12 = float(np.sum(np.sqrt(v[:n] ** 2 + v[n:] ** 2)))

    consensus = dx - AffineFieldOperator(fld, "inverse_adjoint").apply_raw(v)
    viol_consensus = float(np.max(np.abs(consensus)))
    ball_arg = AffineFieldOperator(fld, "inverse").apply_raw(gamma * (dx - y))
    norms = np.sqrt(ball_arg[:n] ** 2 + ball_arg[n:] ** 2)
    viol_ball = float(max(0.0, np.max(norms) - 1.0))
    viol_box = float(max(0.0, -np.min(x), np.max(x) - 1.0))
    violations = {"consensus": viol_consensus, "ball": viol_ball, "box": viol_box}
    feasible = all(val <= feas_tol for val in violations.values())
    value = smooth + l12 if feasible else math.inf
    return ObjectiveReport(value, smooth, l12, feasible, violations)


def objective_value(
    state: SolverState,
    o: Image,
    config: SolverConfig,
    feas_tol: float = FEAS_TOL,
) -> ObjectiveReport:
    """Objective of the full splitting problem at ``state`` (``inf`` when any
    indicator constraint is violated beyond ``feas_tol``)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gamma = config.gamma()
    fld = config.effective_field(o.n)
    return _objective_raw(
        state.x.data,
        state.y.data,
        state.v.data,
        o.data,
        config.params.lam,
        gamma,
        fld,
        o.width,
        o.height,
        feas_tol,
    )


def solve(
    o: Image,
    config: SolverConfig,
    init: SolverState | None = None,
    clean: Image | None = None,
    ref: SolverState | None = None,
    record_objective: bool = False,
    trace_every: int = 1,
) -> tuple[SolverState, SolverTrace]:
    """Run the primal-dual iteration on observation ``o``.

    Starting from ``init`` (default: ``x = clamp(o)``, every other block
    zero), each iteration takes one projected gradient step on the primal
    triple followed by the three exact dual proximal steps evaluated at the
    extrapolated point ``2 z_{l+1} - z_l``. Runs for ``config.max_iters``
    iterations or until the relative iterate change drops below
    ``config.tol`` (0 disables early stopping).

    ``clean`` enables the PSNR trace column, ``ref`` the relative-distance
    column (against ``ref``'s primal triple); ``trace_every = 0`` disables
    tracing entirely. Raises :class:`DivergenceError` when an iterate stops
    being finite.
    """
    params = config.params
    gamma = config.gamma()
    fld = config.effective_field(o.n)
    ok, lam_min = check_convexity_cheap(params.lam, gamma, o.width, o.height)
    if not ok:
        raise ValueError(f"convexity condition violated: lambda_min(H) = {lam_min:g}")
    tau, sigma = config.steps(gamma)

    if init is None:
        init = SolverState.cold_start(o)
    wk = _Work(o, init, gamma, fld)
    step = _resolve_engine(config.engine)

    trace = SolverTrace()
    ref_z = ref.z_flat() if ref is not None else None
    ref_norm = float(np.linalg.norm(ref_z)) if ref_z is not None else 0.0
    clean_data = clean.data if clean is not None else None

    n = o.n
    for k in range(config.max_iters):
        dz2, z2 = step(wk, params.lam, tau, sigma)
        it = k + 1
        wk.swap()
        if not math.isfinite(dz2 + z2):
            raise DivergenceError(it)
        rel = math.sqrt(dz2 / z2) if z2 > 0.0 else (0.0 if dz2 == 0.0 else math.inf)

        if trace_every and it % trace_every == 0:
            obj = math.nan
            if record_objective:
                obj = _objective_raw(
                    wk.x, wk.y, wk.v, wk.o, params.lam, gamma, fld, o.width, o.height
                ).value
            ps = math.nan
            if clean_data is not None:
                d = wk.x - clean_data
                mse = float(np.dot(d, d)) / n
                ps = 999.0 if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
            dist = math.nan
            if ref_z is not None:
                dx_ = wk.x - ref_z[:n]
                dy_ = wk.y - ref_z[n : 3 * n]
                dv_ = wk.v - ref_z[3 * n :]
                dd = math.sqrt(
                    float(np.dot(dx_, dx_))
                    + float(np.dot(dy_, dy_))
                    + float(np.dot(dv_, dv_))
                )
                dist = dd / ref_norm if ref_norm > 0 else dd
            trace.record(it, objective=obj, psnr=ps, rel_change=rel, dist_to_ref=dist)

        trace.iters_run = it
        if config.tol > 0.0 and it >= config.min_iters and rel < config.tol:
            break

    state = wk.state(o.width, o.height)
    return state, trace


def check_convexity_cheap(
    lam: float, gamma: float, width: int, height: int
) -> tuple[bool, float]:
    """Analytic convexity margin using the exact Laplacian top eigenvalue."""
    lam_min = lam - gamma * dtd_max_eigenvalue(width, height)
    return lam_min >= -1e-12, lam_min


def reformulation_consistency_check(
    x: Image,
    o: Image,
    params: CncParams,
    fld: DirectionField,
    iters: int = 200000,
    tol: float = 1e-13,
) -> float:
    """Gap between the penalty form and its dual-variable reformulation.

    Computes ``J(x)`` (non-convex penalty written via the generalized Moreau
    envelope, evaluated with :func:`cncdtv.prox.moreau_envelope_oracle`) and
    ``min_y J~(x, y)`` (the reformulation minimized over ``y`` with an
    independent per-pixel projected-gradient oracle) and returns the absolute
    difference. Intended for tiny instances (``n <= 16``).
    """
    from .prox import moreau_envelope_oracle

    if x.n > 16:
        raise ValueError("reformulation check is restricted to n <= 16")
    if x.n != o.n or fld.n != x.n:
        raise ValueError("dimension mismatch")
    n = x.n
    gamma = params.gamma
    dx = np.zeros(2 * n)
    _grad_raw(x.grid(), dx)
    diff = x.data - o.data
    fidelity = 0.5 * params.lam * float(np.dot(diff, diff))

    adj = AffineFieldOperator(fld, "adjoint").apply_raw(dx)
    phi = float(np.sum(np.sqrt(adj[:n] ** 2 + adj[n:] ** 2)))

    env = moreau_envelope_oracle(VectorField(n, dx), gamma, fld)
    j_val = fidelity + phi - env

    if gamma == 0.0:
        return abs(j_val - (fidelity + phi))

    # min_y of gamma/2 ||y||^2 subject to gamma (Dx - y)_i in E_i, via the
    # substitution y_i = (Dx)_i - (1/gamma) A p_i with ||p_i|| <= 1 and
    # projected gradient on p (strongly convex, step gamma/alpha_max^2).
    fwd = AffineFieldOperator(fld, "forward")
    adj_op = AffineFieldOperator(fld, "adjoint")
    inv_g = 1.0 / gamma
    p = np.zeros(2 * n)
    step = gamma / float(np.max(fld.alpha)) ** 2
    prev = p.copy()
    for _ in range(iters):
        y_cand = dx - inv_g * fwd.apply_raw(p)
        grad_p = -adj_op.apply_raw(y_cand)
        p = p - step * grad_p
        norms = np.sqrt(p[:n] ** 2 + p[n:] ** 2)
        scale = np.maximum(norms, 1.0)
        p[:n] /= scale
        p[n:] /= scale
        change = float(np.max(np.abs(p - prev)))
        prev = p.copy()
        if change < tol:
            break
    else:
        raise RuntimeError("reformulation check: inner y-minimization stalled")
    y_opt = dx - inv_g * fwd.apply_raw(p)
    quad = 0.5 * gamma * float(np.dot(y_opt, y_opt))
    jt_val = fidelity - 0.5 * gamma * float(np.dot(dx, dx)) + phi + quad
    return abs(j_val - jt_val)
