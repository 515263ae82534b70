"""Synthetic test images, Gaussian noise, quality metrics, and PGM I/O.

Reproducibility contract: all randomness is drawn from a Philox4x64
counter-based bit generator keyed by the user seed. Gaussian samples are
produced by an explicit Box-Muller transform of the raw 64-bit stream
(``u = (bits >> 11) * 2^-53``), so noise realizations are stable across
numpy releases and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grids import Image

PSNR_CAP = 999.0


class PgmFormatError(ValueError):
    """Malformed PGM input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class NoiseSpec:
    """Additive i.i.d. zero-mean Gaussian noise description."""

    sigma_e: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be >= 0")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class GeneratorSpec:
    """Synthetic image description.

    ``kind`` is one of ``texture`` (soft-thresholded sinusoidal stripes),
    ``barcode`` (vertical bars of seeded random widths, values {0, 1}), or
    ``geometric`` (anti-aliased filled primitives on a flat background).
    ``options`` carries kind-specific parameters, see the ``_gen_*``
    functions for the supported keys and defaults.
    """

    kind: str
    width: int = 128
    height: int = 128
    seed: int = 0
    options: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("texture", "barcode", "geometric"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("invalid dimensions")


def _philox_uniforms(seed: int, count: int, stream: int = 0) -> np.ndarray:
    """Uniforms in [0, 1) from the raw Philox stream (documented mapping)."""
    bits = np.random.Philox(key=(int(seed) + (stream << 32)) % 2**128).random_raw(count)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def gaussian_field(count: int, sigma: float, seed: int) -> np.ndarray:
    """Box-Muller Gaussians from the Philox stream.

    Pairs ``(u1, u2)`` map to ``r cos(2 pi u2), r sin(2 pi u2)`` with
    ``r = sqrt(-2 ln u1)`` and ``u1`` shifted into ``(0, 1]`` to avoid
    ``log(0)``.
    """
    pairs = (count + 1) // 2
    bits = np.random.Philox(key=int(seed) % 2**128).random_raw(2 * pairs)
    u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)
    u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return sigma * out[:count]


def _gen_texture(spec: GeneratorSpec) -> np.ndarray:
    """Stripes whose level lines run along ``angle_deg``; ``sharpness``
    soft-thresholds the sinusoid toward a square wave."""
    opts = spec.options
    angle = math.radians(float(opts.get("angle_deg", 30.0)))
    period = float(opts.get("period", 12.0))
    sharpness = float(opts.get("sharpness", 2.5))
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    phase0 = float(_philox_uniforms(spec.seed, 1)[0]) * 2.0 * np.pi
    # coordinate along the direction perpendicular to the stripes
    t = -math.sin(angle) * xx + math.cos(angle) * yy
    wave = np.sin(2.0 * np.pi * t / period + phase0)
    return 0.5 + 0.5 * np.tanh(sharpness * wave) / math.tanh(sharpness)


def _gen_barcode(spec: GeneratorSpec) -> np.ndarray:
    opts = spec.options
    min_bar = int(opts.get("min_bar", 3))
    max_bar = int(opts.get("max_bar", 12))
    if not (1 <= min_bar <= max_bar):
        raise ValueError("need 1 <= min_bar <= max_bar")
    u = _philox_uniforms(spec.seed, 4 * spec.width // min_bar + 8)
    widths = (min_bar + np.floor(u * (max_bar - min_bar + 1))).astype(int)
    row = np.empty(spec.width)
    val, pos, k = 1.0, 0, 0
    while pos < spec.width:
        w = int(widths[k % widths.size])
        row[pos : pos + w] = val
        val = 1.0 - val
        pos += w
        k += 1
    return np.tile(row, (spec.height, 1))


def _coverage(mask_fn, height: int, width: int, ss: int = 4) -> np.ndarray:
    """Supersampled coverage of a boolean region for anti-aliased edges."""
    yy, xx = np.mgrid[0 : height * ss, 0 : width * ss].astype(np.float64)
    yy = (yy + 0.5) / ss
    xx = (xx + 0.5) / ss
    m = mask_fn(xx, yy).astype(np.float64)
    return m.reshape(height, ss, width, ss).mean(axis=(1, 3))


def _gen_geometric(spec: GeneratorSpec) -> np.ndarray:
    w, h = spec.width, spec.height
    u = _philox_uniforms(spec.seed, 6)
    jit = (u - 0.5) * 0.06

    img = np.full((h, w), 0.25)

    cx, cy = (0.32 + jit[0]) * w, (0.34 + jit[1]) * h
    rad = 0.20 * min(w, h)
    disc = _coverage(lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= rad**2, h, w)
    img = img * (1.0 - disc) + 0.85 * disc

    x0, x1 = (0.55 + jit[2]) * w, 0.92 * w
    y0, y1 = (0.12 + jit[3]) * h, 0.45 * h
    rect = _coverage(
        lambda x, y: (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1), h, w
    )
    img = img * (1.0 - rect) + 0.55 * rect

    ax, ay = (0.22 + jit[4]) * w, 0.92 * h
    bx, by = 0.62 * w, (0.88 + jit[5]) * h
    cx2, cy2 = 0.42 * w, 0.55 * h

    def tri(x, y):
        d1 = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        d2 = (cx2 - bx) * (y - by) - (cy2 - by) * (x - bx)
        d3 = (ax - cx2) * (y - cy2) - (ay - cy2) * (x - cx2)
        return ((d1 >= 0) & (d2 >= 0) & (d3 >= 0)) | ((d1 <= 0) & (d2 <= 0) & (d3 <= 0))

    t = _coverage(tri, h, w)
    img = img * (1.0 - t) + 0.70 * t
    return np.clip(img, 0.0, 1.0)


def generate(spec: GeneratorSpec) -> Image:
    """Deterministic synthetic image in ``[0, 1]`` of the requested class."""
    gen = {"texture": _gen_texture, "barcode": _gen_barcode, "geometric": _gen_geometric}
    return Image.from_grid(gen[spec.kind](spec))


def add_noise(x: Image, spec: NoiseSpec) -> Image:
    """Add seeded white Gaussian noise; the result is deliberately NOT
    clamped (the data-fidelity term uses the raw observation)."""
    if spec.sigma_e == 0.0:
        return Image(x.width, x.height, x.data.copy())
    noise = gaussian_field(x.n, spec.sigma_e, spec.seed)
    return Image(x.width, x.height, x.data + noise)


def psnr(x: Image, ref: Image) -> float:
    """``10 log10(1 / MSE)`` with peak 1; capped at 999 for identical
    inputs."""
    if x.width != ref.width or x.height != ref.height:
        raise ValueError("dimension mismatch")
    d = x.data - ref.data
    mse = float(np.dot(d, d)) / x.n
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def residual_map(x_hat: Image, x_bar: Image) -> tuple[Image, Image]:
    """Per-pixel absolute error and its max-normalized variant."""
    if x_hat.width != x_bar.width or x_hat.height != x_bar.height:
        raise ValueError("dimension mismatch")
    err = np.abs(x_hat.data - x_bar.data)
    peak = float(np.max(err))
    normed = err / peak if peak > 0 else err.copy()
    return (
        Image(x_hat.width, x_hat.height, err),
        Image(x_hat.width, x_hat.height, normed),
    )


# ---------------------------------------------------------------------------
# PGM (portable graymap, binary P5) I/O; .npy passthrough for lossless floats
# ---------------------------------------------------------------------------


def write_image(path, x: Image) -> None:
    """Write 16-bit binary PGM (maxval 65535, linear map of [0, 1]).

    Values outside ``[0, 1]`` are clamped; paths ending in ``.npy`` store
    the raw float array instead (lossless, used for observations that may
    leave the unit range).
    """
    path = str(path)
    if path.endswith(".npy"):
        np.save(path, x.grid())
        return
    q = np.clip(np.rint(np.clip(x.data, 0.0, 1.0) * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{x.width} {x.height}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        break
    if pos >= len(buf):
        raise PgmFormatError("unexpected end of header", pos)
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_image(path) -> Image:
    """Read a binary P5 PGM (8- or 16-bit) or a ``.npy`` float image."""
    path = str(path)
    if path.endswith(".npy"):
        arr = np.load(path)
        return Image.from_grid(arr)
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise PgmFormatError(f"unsupported magic {magic!r} (want P5)", 0)
    try:
        tok, pos = _read_token(buf, pos)
        width = int(tok)
        tok, pos = _read_token(buf, pos)
        height = int(tok)
        tok, pos = _read_token(buf, pos)
        maxval = int(tok)
    except ValueError as exc:
        raise PgmFormatError(f"bad header field: {exc}", pos) from None
    if width <= 0 or height <= 0:
        raise PgmFormatError(f"bad dimensions {width}x{height}", pos)
    if not (0 < maxval < 65536):
        raise PgmFormatError(f"maxval {maxval} out of range", pos)
    pos += 1  # single whitespace byte after maxval
    n = width * height
    itemsize = 1 if maxval < 256 else 2
    need = n * itemsize
    raw = buf[pos : pos + need]
    if len(raw) < need:
        raise PgmFormatError(
            f"truncated pixel data: need {need} bytes, have {len(raw)}",
            pos + len(raw),
        )
    dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
    vals = np.frombuffer(raw, dtype=dtype).astype(np.float64) / float(maxval)
    if np.max(vals) > 1.0:
        raise PgmFormatError("pixel value exceeds declared maxval", pos)
    return Image(width=width, height=height, data=vals)
