"""Per-pixel elliptic dual-set geometry and direction estimation.

Each pixel ``i`` carries an expansion factor ``alpha_i >= 1`` and an angle
``theta_i in [-pi/2, pi/2]``. The associated 2x2 transforms are

* forward          ``A  = R(theta) diag(1, alpha)``
* inverse          ``A^-1  = diag(1, 1/alpha) R(-theta)``
* inverse adjoint  ``A^-*  = R(theta) diag(1, 1/alpha)``
* adjoint          ``A^T  = diag(1, alpha) R(-theta)``

The regularizer weighs the component of a per-pixel gradient along the
direction at angle ``theta + pi/2`` by ``alpha``. Feeding the dominant local
*gradient* orientation as ``theta`` therefore puts the heavy weight along the
local contour, which is the configuration that smooths along edges and keeps
jumps across them (see :func:`estimate_directions`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .grids import Image, VectorField

_MODES = ("forward", "inverse", "inverse_adjoint", "adjoint")


@dataclass(frozen=True)
class DirectionField:
    """Per-pixel ellipse parameters ``(alpha_i, theta_i)``."""

    alpha: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        alpha = np.ascontiguousarray(self.alpha, dtype=np.float64)
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if alpha.ndim != 1 or alpha.shape != theta.shape:
            raise ValueError("alpha and theta must be 1D arrays of equal length")
        if alpha.size == 0:
            raise ValueError("empty direction field")
        if np.any(alpha < 1.0):
            raise ValueError("every alpha_i must be >= 1")
        if np.any(np.abs(theta) > np.pi / 2 + 1e-12):
            raise ValueError("every theta_i must lie in [-pi/2, pi/2]")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.alpha.size

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.alpha == 1.0) and np.all(self.theta == 0.0))

    @classmethod
    def identity(cls, n: int) -> "DirectionField":
        return cls(alpha=np.ones(n), theta=np.zeros(n))

    @classmethod
    def constant(cls, n: int, alpha: float, theta: float) -> "DirectionField":
        return cls(alpha=np.full(n, float(alpha)), theta=np.full(n, float(theta)))

    def with_alpha(self, alpha: float) -> "DirectionField":
        """Same angles, spatially constant expansion factor."""
        return DirectionField(alpha=np.full(self.n, float(alpha)), theta=self.theta)


def mode_matrices(field: DirectionField, mode: str):
    """Per-pixel 2x2 entries ``(m11, m12, m21, m22)`` for the given mode."""
    if mode not in _MODES:
        raise ValueError(f"unknown affine mode {mode!r}; expected one of {_MODES}")
    c = np.cos(field.theta)
    s = np.sin(field.theta)
    a = field.alpha
    if mode == "forward":
        return c, -a * s, s, a * c
    if mode == "inverse":
        return c, s, -s / a, c / a
    if mode == "inverse_adjoint":
        return c, -s / a, s, c / a
    return c, s, -a * s, a * c  # adjoint


@dataclass(frozen=True)
class AffineFieldOperator:
    """A direction field together with one of the four application modes."""

    field: DirectionField
    mode: str = "forward"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown affine mode {self.mode!r}")

    def apply_raw(self, u: np.ndarray) -> np.ndarray:
        n = self.field.n
        if u.shape != (2 * n,):
            raise ValueError(f"field has n={n} but input has length {u.size}")
        m11, m12, m21, m22 = mode_matrices(self.field, self.mode)
        u1, u2 = u[:n], u[n:]
        out = np.empty_like(u)
        out[:n] = m11 * u1 + m12 * u2
        out[n:] = m21 * u1 + m22 * u2
        return out

    def apply(self, u: VectorField) -> VectorField:
        return VectorField(n=u.n, data=self.apply_raw(u.data))


def apply_affine(op: AffineFieldOperator, u: VectorField) -> VectorField:
    """Apply the per-pixel 2x2 map selected by ``op.mode`` to ``u``."""
    return op.apply(u)


def affine_norm_bound(field: DirectionField) -> float:
    """Spectral-norm bound for the inverse / inverse-adjoint transforms.

    Both are rotations composed with a contraction along one axis, so their
    norm is ``max_i max(1, 1/alpha_i)``, which is 1 whenever all
    ``alpha_i >= 1``.
    """
    return float(max(1.0, float(np.max(1.0 / field.alpha))))


def dtv_value(u: VectorField, field: DirectionField) -> float:
    """Value of the directional sparsity seminorm at a gradient-space point.

    Per pixel this is the support function of the ellipse, i.e.
    ``||A^T u_i||_2``; with ``alpha = 1, theta = 0`` it reduces to the sum of
    Euclidean norms.
    """
    if u.n != field.n:
        raise ValueError("field/vector size mismatch")
    t = AffineFieldOperator(field, "adjoint").apply_raw(u.data)
    n = u.n
    return float(np.sum(np.sqrt(t[:n] ** 2 + t[n:] ** 2)))


def estimate_directions(
    x: Image,
    sigma_g: float = 1.0,
    rho_st: float = 2.0,
    alpha_global: float = 1.0,
    orientation: str = "gradient",
) -> DirectionField:
    """Structure-tensor direction estimation.

    The image is differentiated with Gaussian-derivative filters at scale
    ``sigma_g`` (replicate boundary, kernels truncated at 3 standard
    deviations); the per-pixel outer product of the gradient is then smoothed
    at scale ``rho_st``. With ``orientation="gradient"`` (the default used by
    the solver pipeline) ``theta_i`` is the orientation of the dominant
    eigenvector - the local gradient direction - which places the heavy
    ``alpha`` penalty along the local contour. ``orientation="level-line"``
    returns the orthogonal angle (smaller-eigenvalue eigenvector) instead.

    Pixels whose tensor is isotropic within ``1e-12`` get ``theta_i = 0``.
    """
    if sigma_g <= 0 or rho_st < 0:
        raise ValueError("sigma_g must be > 0 and rho_st >= 0")
    if alpha_global < 1.0:
        raise ValueError("alpha_global must be >= 1")
    if orientation not in ("gradient", "level-line"):
        raise ValueError(f"unknown orientation {orientation!r}")

    img = x.grid()
    gy = gaussian_filter(img, sigma_g, order=(1, 0), mode="nearest", truncate=3.0)
    gx = gaussian_filter(img, sigma_g, order=(0, 1), mode="nearest", truncate=3.0)

    jxx = gx * gx
    jyy = gy * gy
    jxy = gx * gy
    if rho_st > 0:
        jxx = gaussian_filter(jxx, rho_st, mode="nearest", truncate=3.0)
        jyy = gaussian_filter(jyy, rho_st, mode="nearest", truncate=3.0)
        jxy = gaussian_filter(jxy, rho_st, mode="nearest", truncate=3.0)

    # Orientation of the larger-eigenvalue eigenvector; eigenvalue gap
    # 2*sqrt(((jxx-jyy)/2)^2 + jxy^2) decides the isotropic tie-break.
    half_diff = 0.5 * (jxx - jyy)
    gap = 2.0 * np.sqrt(half_diff**2 + jxy**2)
    theta = 0.5 * np.arctan2(2.0 * jxy, jxx - jyy)
    if orientation == "level-line":
        theta = theta + 0.5 * np.pi
    # wrap to [-pi/2, pi/2) (orientations are defined modulo pi)
    theta = np.mod(theta + 0.5 * np.pi, np.pi) - 0.5 * np.pi
    theta[gap <= 1e-12] = 0.0

    return DirectionField(
        alpha=np.full(x.n, float(alpha_global)), theta=theta.reshape(-1)
    )


def save_direction_csv(path, field: DirectionField) -> None:
    """Write ``i,alpha,theta`` rows (row-major pixel order, radians)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "alpha", "theta"])
        for i in range(field.n):
            w.writerow([i, f"{field.alpha[i]:.12g}", f"{field.theta[i]:.12g}"])


def load_direction_csv(path) -> DirectionField:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != ["i", "alpha", "theta"]:
            raise ValueError(f"{path}: expected header 'i,alpha,theta'")
        alphas, thetas = [], []
        for row in r:
            if not row:
                continue
            alphas.append(float(row[1]))
            thetas.append(float(row[2]))
    return DirectionField(alpha=np.array(alphas), theta=np.array(thetas))
