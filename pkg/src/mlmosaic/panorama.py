"""Reference-frame grid, composited panorama, weights, and the global cost.

All frames are tied to one reference coordinate system through per-frame
motions (reference -> image). On a finite integer grid in that system:

* the weight map counts, per pixel, how many frames observe it;
* the panorama estimate averages the observing frames' samples, which is
  the exact minimizer of the summed squared deviation between frames and
  panorama;
* the global cost sums, over all frame pairs and their overlap, the
  squared difference of co-registered samples divided by the weight.

The last two are linked by the identity (checked in the test suite): the
summed squared deviation from the average equals half the pairwise cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import motion
from .motion import ModelKind, MotionParams
from .raster import Raster, sample_bilinear_many, save_image


@dataclass(frozen=True)
class RefGrid:
    """Inclusive integer pixel bounds in reference coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"empty grid {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.arange(self.x_min, self.x_max + 1, dtype=np.float64)
        ys = np.arange(self.y_min, self.y_max + 1, dtype=np.float64)
        return np.meshgrid(xs, ys)


@dataclass
class Registration:
    """Per-frame motions plus the gauge anchor.

    The global cost is unchanged when every motion is composed with a
    common warp, so one frame (the anchor) is pinned to the identity; it is
    never updated and comparisons against ground truth are made in its
    frame.
    """

    kind: ModelKind
    params: list[MotionParams]
    anchor: int = 0

    def __post_init__(self):
        if len(self.params) < 1:
            raise ValueError("registration needs at least one frame")
        if not 0 <= self.anchor < len(self.params):
            raise ValueError(f"anchor {self.anchor} out of range")
        for i, p in enumerate(self.params):
            if p.kind is not self.kind:
                raise ValueError(f"frame {i} has kind {p.kind.value}, expected {self.kind.value}")
        if not motion.is_identity(self.params[self.anchor]):
            raise ValueError(f"anchor frame {self.anchor} must carry the exact identity")

    def __len__(self):
        return len(self.params)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "anchor": self.anchor,
            "params": [[float(v) for v in p.theta] for p in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Registration":
        kind = ModelKind.from_string(d["kind"])
        params = [MotionParams(kind, np.asarray(t, dtype=np.float64)) for t in d["params"]]
        return cls(kind=kind, params=params, anchor=int(d.get("anchor", 0)))


@dataclass
class PanoramaEstimate:
    """Composited panorama plus per-pixel observation counts.

    ``image`` carries the grid offset in its origin. Pixels with weight 0
    are undefined; their stored intensity is 0 but they are excluded from
    every sum by the weight mask, never by a sentinel value.
    """

    image: Raster
    weights: np.ndarray  # int32, same shape as image

    @property
    def defined(self) -> np.ndarray:
        return self.weights >= 1


def compute_bounds(images: list[Raster], reg: Registration, margin: int = 0) -> RefGrid:
    """Smallest integer grid containing every frame's corners mapped into
    reference coordinates, expanded by ``margin`` and rounded outward."""
    pts = []
    for img, p in zip(images, reg.params):
        inv = motion.invert(p)
        w, h = img.width, img.height
        ox, oy = img.origin
        for cx, cy in ((0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)):
            pts.append(motion.map_point(inv, (ox + cx, oy + cy)))
    pts = np.asarray(pts)
    return RefGrid(
        x_min=int(np.floor(pts[:, 0].min())) - margin,
        y_min=int(np.floor(pts[:, 1].min())) - margin,
        x_max=int(np.ceil(pts[:, 0].max())) + margin,
        y_max=int(np.ceil(pts[:, 1].max())) + margin,
    )


def warp_to_grid(img: Raster, p: MotionParams, grid: RefGrid) -> tuple[np.ndarray, np.ndarray]:
    """Sample one frame over the whole grid. Returns (values, observed)."""
    X, Y = grid.coords()
    u, v = motion.map_points(p, X, Y)
    return sample_bilinear_many(img, u - img.origin[0], v - img.origin[1])


def _sample_all(images, reg, grid):
    samples = np.empty((len(images), grid.height, grid.width))
    masks = np.empty((len(images), grid.height, grid.width), dtype=bool)
    for i, (img, p) in enumerate(zip(images, reg.params)):
        samples[i], masks[i] = warp_to_grid(img, p, grid)
    return samples, masks


def weight_map(images: list[Raster], reg: Registration, grid: RefGrid) -> np.ndarray:
    """Per grid pixel, the number of frames whose warped sample exists."""
    _, masks = _sample_all(images, reg, grid)
    return masks.sum(axis=0, dtype=np.int32)


def estimate_panorama(images: list[Raster], reg: Registration, grid: RefGrid) -> PanoramaEstimate:
    """Average the observing frames at every grid pixel."""
    samples, masks = _sample_all(images, reg, grid)
    w = masks.sum(axis=0, dtype=np.int32)
    total = np.where(masks, samples, 0.0).sum(axis=0)
    img = np.zeros_like(total)
    np.divide(total, w, out=img, where=w > 0)
    return PanoramaEstimate(
        image=Raster(img, origin=(float(grid.x_min), float(grid.y_min))),
        weights=w,
    )


def ml_cost(images: list[Raster], reg: Registration, grid: RefGrid) -> float:
    """Global registration cost: over ordered frame pairs (i, j), i != j,
    the squared sample difference on their overlap divided by the weight.
    Identical frames and motions give exactly zero."""
    samples, masks = _sample_all(images, reg, grid)
    w = masks.sum(axis=0, dtype=np.int32)
    n = len(images)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            both = masks[i] & masks[j]
            if not both.any():
                continue
            diff = samples[i][both] - samples[j][both]
            total += float(np.sum(diff * diff / w[both]))
    return 2.0 * total  # unordered pairs counted once above


def render(pe: PanoramaEstimate, path: str | Path, weights_path: str | Path | None = None) -> None:
    """Write the panorama as PGM (undefined pixels as 0) and the weights as
    a second PGM scaled to use the full byte range."""
    path = Path(path)
    img = np.where(pe.defined, pe.image.data, 0.0)
    save_image(Raster(img, pe.image.origin), path)
    if weights_path is None:
        weights_path = path.with_name(path.stem + "_weights.pgm")
    w_max = int(pe.weights.max())
    if w_max > 0:
        scaled = pe.weights.astype(np.float64) / w_max
    else:
        scaled = np.zeros_like(pe.weights, dtype=np.float64)
    save_image(Raster(scaled), weights_path)
