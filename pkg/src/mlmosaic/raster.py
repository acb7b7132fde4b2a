"""Grayscale rasters: file I/O, bilinear sampling, gradients, and pyramids.

Intensities are float64 in the nominal range [0, 1]. Sampling outside the
pixel grid is reported as "outside" (``None`` / a False mask entry) rather
than raised, which is how the limited field of view of each camera enters
every downstream computation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    MalformedHeaderError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)

# Levels below this edge length carry too little texture to constrain an
# affine fit; pyramids never go smaller.
PYRAMID_MIN_DIM = 32

_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Raster:
    """A grayscale image with a validity domain given by its extent.

    ``data`` is row-major with shape (height, width). ``origin`` places
    pixel (0, 0) in the raster's own coordinate frame: pixel (ix, iy) sits
    at coordinates ``(origin[0] + ix, origin[1] + iy)``. Plain images use
    the default (0, 0); composited panoramas carry their grid offset here.

    Rasters are immutable after construction and safe to share.
    """

    data: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"raster data must be 2-D and nonempty, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("raster intensities must all be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Raster({self.width}x{self.height}, origin={self.origin})"


@dataclass(frozen=True, eq=False)
class GradientField:
    """Per-pixel spatial derivatives of a raster, same dimensions as it."""

    gx: Raster
    gy: Raster


@dataclass(frozen=True, eq=False)
class Pyramid:
    """Coarse-to-fine stack of rasters; level 0 is full resolution and each
    level shrinks the previous one by ``factor`` (dimensions rounded up)."""

    levels: tuple[Raster, ...]
    factor: int = 2

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("pyramid needs at least one level")

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k) -> Raster:
        return self.levels[k]


# ---------------------------------------------------------------------------
# file I/O


def load_image(path: str | Path) -> Raster:
    """Load a binary PGM (P5, maxval 255) or an 8-bit PNG as a raster.

    Stored byte values v map to intensities v/255. Color PNG input is
    reduced to luminance with weights (0.299, 0.587, 0.114).
    """
    blob = Path(path).read_bytes()
    if blob[:2] == b"P5":
        return Raster(_decode_pgm(blob))
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        return Raster(_decode_png(blob))
    raise MalformedHeaderError(f"{path}: not a P5 PGM or PNG file")


def save_image(r: Raster, path: str | Path) -> None:
    """Write a raster as binary PGM, clamping to [0, 1] and rounding
    half-up to 8 bits, so save/load round-trips within 1/510 per pixel."""
    q = np.floor(np.clip(r.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{r.width} {r.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def _decode_pgm(blob: bytes) -> np.ndarray:
    tokens = []
    pos = 2  # past magic
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            nl = blob.find(b"\n", pos)
            if nl < 0:
                raise MalformedHeaderError("PGM header comment runs past end of file")
            pos = nl + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise MalformedHeaderError("PGM header ended before width/height/maxval")
        tokens.append(blob[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeaderError(f"non-numeric PGM header fields: {tokens}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 PGM supported, got {maxval}")
    pos += 1  # exactly one whitespace byte separates header from payload
    payload = blob[pos : pos + width * height]
    if len(payload) < width * height:
        raise TruncatedPayloadError(
            f"PGM payload holds {len(payload)} bytes, header promises {width * height}"
        )
    pix = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pix.astype(np.float64) / 255.0


def _decode_png(blob: bytes) -> np.ndarray:
    from PIL import Image

    img = Image.open(io.BytesIO(blob))
    if img.mode == "P":
        img = img.convert("RGB")
    if img.mode not in ("L", "LA", "RGB", "RGBA"):
        raise UnsupportedFormatError(f"unsupported PNG mode {img.mode!r} (8-bit only)")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        if img.mode == "LA":
            arr = arr[:, :, 0]
        else:
            arr = arr[:, :, :3] @ _LUMA_WEIGHTS
    return arr / 255.0


# ---------------------------------------------------------------------------
# sampling


def sample_bilinear(r: Raster, x: float, y: float) -> float | None:
    """Bilinear intensity at pixel coordinates (x, y), or None when the
    point falls outside [0, width-1] x [0, height-1].

    Coordinates here are pixel indices; callers dealing with offset frames
    subtract ``r.origin`` first.
    """
    vals, valid = sample_bilinear_many(r, np.array([x], float), np.array([y], float))
    return float(vals[0]) if valid[0] else None


def sample_bilinear_many(
    r: Raster, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling.

    Returns (values, valid): values are well-defined only where valid is
    True; invalid entries hold arbitrary finite numbers.
    """
    data = r.data
    h, w = data.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)

    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0

    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy, valid


# ---------------------------------------------------------------------------
# gradients and pyramids


def spatial_gradient(r: Raster) -> GradientField:
    """Central-difference derivatives in the interior, one-sided on the
    border, so every pixel carries a usable (if less accurate) gradient."""
    if r.width < 2 or r.height < 2:
        raise ValueError(f"gradient needs at least 2x2, got {r.width}x{r.height}")
    d = r.data
    gx = np.empty_like(d)
    gy = np.empty_like(d)
    gx[:, 1:-1] = (d[:, 2:] - d[:, :-2]) / 2.0
    gx[:, 0] = d[:, 1] - d[:, 0]
    gx[:, -1] = d[:, -1] - d[:, -2]
    gy[1:-1, :] = (d[2:, :] - d[:-2, :]) / 2.0
    gy[0, :] = d[1, :] - d[0, :]
    gy[-1, :] = d[-1, :] - d[-2, :]
    return GradientField(gx=Raster(gx, r.origin), gy=Raster(gy, r.origin))


def _binomial_filter_axis(a: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (2, 2)
    p = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    sl = [slice(None), slice(None)]
    for i, wgt in enumerate(_BINOMIAL5):
        sl[axis] = slice(i, i + a.shape[axis])
        out += wgt * p[tuple(sl)]
    return out


def binomial_blur(r: Raster, passes: int = 1) -> Raster:
    """Repeatedly apply the separable 5-tap binomial kernel (border
    replicated). Each pass adds unit variance, so k passes smooth at
    roughly sigma = sqrt(k) pixels."""
    d = r.data
    for _ in range(passes):
        d = _binomial_filter_axis(_binomial_filter_axis(d, 0), 1)
    return Raster(d, r.origin)


def downsample(r: Raster) -> Raster:
    """Binomial blur then decimation by 2 keeping even-indexed pixels;
    output dimensions are ceil(input / 2)."""
    if r.width < 2 or r.height < 2:
        raise ValueError(f"downsample needs at least 2x2, got {r.width}x{r.height}")
    blurred = _binomial_filter_axis(_binomial_filter_axis(r.data, 0), 1)
    return Raster(blurred[::2, ::2], (r.origin[0] / 2.0, r.origin[1] / 2.0))


def build_pyramid(r: Raster, max_levels: int) -> Pyramid:
    """Repeated downsampling until max_levels is reached or the next level
    would fall below the minimum edge length."""
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")
    levels = [r]
    while len(levels) < max_levels:
        cur = levels[-1]
        next_w = -(-cur.width // 2)
        next_h = -(-cur.height // 2)
        if next_w < PYRAMID_MIN_DIM or next_h < PYRAMID_MIN_DIM:
            break
        levels.append(downsample(cur))
    return Pyramid(levels=tuple(levels))
