"""Discrete image gradient operator, its adjoint, and operator-norm estimates.

Images are flattened row-major. The gradient operator ``D`` stacks the
horizontal forward difference (indices ``0..n-1``) on top of the vertical one
(indices ``n..2n-1``), with replicate (Neumann) boundary handling: the last
column of the horizontal part and the last row of the vertical part are zero.
With this convention ``lambda_max(D^T D) < 8`` on every grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Image:
    """Flattened grayscale raster.

    Parameters
    ----------
    width, height : int
        Grid dimensions in pixels.
    data : ndarray
        Row-major flat array of length ``width * height``. Intensities are
        nominally in ``[0, 1]`` but values outside that range are legal
        (noisy observations are not clamped).
    """

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"invalid image dimensions {self.width}x{self.height}")
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.shape != (self.width * self.height,):
            raise ValueError(
                f"image data length {data.size} does not match "
                f"{self.width}x{self.height}"
            )
        if not np.isfinite(data).all():
            raise ValueError("image data contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.width * self.height

    def grid(self) -> np.ndarray:
        """Return a ``(height, width)`` view of the pixel data."""
        return self.data.reshape(self.height, self.width)

    @classmethod
    def from_grid(cls, arr) -> "Image":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2D array, got shape {arr.shape}")
        h, w = arr.shape
        return cls(width=w, height=h, data=arr.reshape(-1))


@dataclass(frozen=True)
class VectorField:
    """Stack of per-pixel 2-vectors.

    ``data`` has length ``2n``; the pair for pixel ``i`` is
    ``(data[i], data[n + i])``.
    """

    n: int
    data: np.ndarray

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"invalid field size n={self.n}")
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.shape != (2 * self.n,):
            raise ValueError(f"field data length {data.size}, expected {2 * self.n}")
        if not np.isfinite(data).all():
            raise ValueError("vector field contains non-finite entries")
        object.__setattr__(self, "data", data)

    def pair(self, i: int) -> tuple[float, float]:
        return float(self.data[i]), float(self.data[self.n + i])

    def first(self) -> np.ndarray:
        """View of the first components (horizontal block)."""
        return self.data[: self.n]

    def second(self) -> np.ndarray:
        """View of the second components (vertical block)."""
        return self.data[self.n :]

    @classmethod
    def zeros(cls, n: int) -> "VectorField":
        return cls(n=n, data=np.zeros(2 * n))


def _grad_raw(x2: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Forward-difference gradient of a (H, W) array into a flat (2n,) array.

    The caller guarantees the zero border entries of ``out`` are already zero.
    """
    h, w = x2.shape
    n = h * w
    dh = out[:n].reshape(h, w)
    dv = out[n:].reshape(h, w)
    np.subtract(x2[:, 1:], x2[:, :-1], out=dh[:, :-1])
    np.subtract(x2[1:, :], x2[:-1, :], out=dv[:-1, :])
    return out


def _grad_adjoint_raw(u: np.ndarray, h: int, w: int, out: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`_grad_raw` into a flat (n,) array."""
    n = h * w
    p = u[:n].reshape(h, w)
    q = u[n:].reshape(h, w)
    g = out.reshape(h, w)
    g[:] = 0.0
    g[:, :-1] -= p[:, :-1]
    g[:, 1:] += p[:, :-1]
    g[:-1, :] -= q[:-1, :]
    g[1:, :] += q[:-1, :]
    return out


def apply_gradient(x: Image) -> VectorField:
    """Apply the discrete gradient ``D`` to an image.

    Forward differences with replicate boundary; the last column of the
    horizontal component and the last row of the vertical component are zero.
    """
    out = np.zeros(2 * x.n)
    _grad_raw(x.grid(), out)
    return VectorField(n=x.n, data=out)


def apply_gradient_adjoint(u: VectorField, width: int, height: int) -> Image:
    """Apply ``D^T``, the exact adjoint of :func:`apply_gradient`."""
    if u.n != width * height:
        raise ValueError(f"field size {u.n} does not match {width}x{height} image")
    out = np.empty(u.n)
    _grad_adjoint_raw(u.data, height, width, out)
    return Image(width=width, height=height, data=out)


def dtd_max_eigenvalue(width: int, height: int) -> float:
    """Exact largest eigenvalue of ``D^T D`` on a ``width x height`` grid.

    ``D^T D`` is the Neumann discrete Laplacian; its spectrum is the sum of
    the 1D spectra ``4 sin^2(k pi / 2K)``, so the maximum is strictly below 8
    on every finite grid.
    """
    ew = 4.0 * np.sin((width - 1) * np.pi / (2.0 * width)) ** 2
    eh = 4.0 * np.sin((height - 1) * np.pi / (2.0 * height)) ** 2
    return float(ew + eh)


def gradient_matrix(width: int, height: int) -> np.ndarray:
    """Dense ``(2n, n)`` matrix of ``D``; intended for small grids in tests
    and the dense convexity check."""
    n = width * height
    if n > 4096:
        raise ValueError(f"dense gradient matrix refused for n={n} > 4096")
    eye = np.eye(n)
    out = np.empty((2 * n, n))
    buf = np.zeros(2 * n)
    for j in range(n):
        buf[:] = 0.0
        _grad_raw(eye[j].reshape(height, width), buf)
        out[:, j] = buf
    return out


def operator_norm_sq(width: int, height: int, iters: int = 100) -> float:
    """Power-iteration estimate of ``|||D|||^2 = lambda_max(D^T D)``.

    The Rayleigh quotient of power iteration on a symmetric PSD operator is
    nondecreasing in the iteration count and converges to the top eigenvalue
    from below, so the estimate never exceeds the analytic bound 8.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n = width * height
    if n == 1:
        return 0.0
    rng = np.random.default_rng(1234)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    buf = np.zeros(2 * n)
    y = np.empty(n)
    est = 0.0
    for _ in range(iters):
        _grad_raw(x.reshape(height, width), buf)
        _grad_adjoint_raw(buf, height, width, y)
        est = float(np.dot(x, y))
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
    return est
