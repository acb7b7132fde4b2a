"""Ground-truth experiment factory and evaluation metrics.

Input frames are synthesized by warping crops out of a known source image
and adding i.i.d. Gaussian noise, so the true registration is available
exactly. Textures standing in for photographs are generated from seeded
band-limited noise. Accuracy is reported as per-frame corner displacement
(max distance, in pixels, between frame corners placed by the true and the
estimated motions), parameter RMSE, and panorama PSNR against the source.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import motion
from .errors import ConfigError
from .motion import ModelKind, MotionParams
from .panorama import Registration, compute_bounds, estimate_panorama, ml_cost
from .raster import Raster, load_image, save_image

PSNR_CAP_DB = 120.0  # reported instead of infinity for an exact match


def make_texture(
    width: int,
    height: int,
    seed: int,
    scales: tuple[float, ...] = (1.0, 4.0, 16.0),
    weights: tuple[float, ...] = (0.2, 0.4, 0.4),
    low: float = 0.1,
    high: float = 0.9,
) -> Raster:
    """Seeded multi-scale random texture normalized into [low, high].

    Each octave is white noise smoothed at the given sigma; mixing a few
    octaves gives photograph-like structure, while a single large scale and
    a narrow [low, high] range gives the low-texture, low-contrast regime.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    for sigma, w in zip(scales, weights):
        img += w * ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma, mode="reflect")
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return Raster(np.full((height, width), (low + high) / 2.0))
    return Raster(low + (img - lo) / (hi - lo) * (high - low))


@dataclass(frozen=True)
class ChainSpec:
    """Generator for a chain trajectory: frame k sits near k * step, with
    uniform positional jitter and (affine only) linear-part jitter. Frame 0
    is always exactly at the origin with identity linear part."""

    step: tuple[float, float]
    jitter: float = 0.0
    affine_jitter: float = 0.0


@dataclass
class SynthConfig:
    source: Raster
    n_frames: int
    frame_size: tuple[int, int]
    kind: ModelKind
    trajectory: list[MotionParams] | ChainSpec
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        w, h = self.frame_size
        if w < 1 or h < 1:
            raise ConfigError(f"bad frame size {self.frame_size}")
        if not 0.0 <= self.noise_sigma < 0.5:
            raise ConfigError(f"noise sigma {self.noise_sigma} outside [0, 0.5)")


@dataclass
class SynthDataset:
    frames: list[Raster]
    truth: Registration
    config: SynthConfig


def resolve_trajectory(cfg: SynthConfig) -> list[MotionParams]:
    """Expand a ChainSpec (or validate an explicit list) into per-frame true
    motions (reference -> frame), frame 0 exactly identity."""
    if isinstance(cfg.trajectory, ChainSpec):
        spec = cfg.trajectory
        # distinct stream from the per-frame noise seeds (seed, frame index)
        rng = np.random.default_rng([cfg.seed, 2**32])
        thetas = [motion.identity(cfg.kind)]
        for k in range(1, cfg.n_frames):
            pos = np.array([k * spec.step[0], k * spec.step[1]])
            pos += spec.jitter * rng.uniform(-1.0, 1.0, size=2)
            if cfg.kind is ModelKind.TRANSLATION:
                pose = MotionParams(cfg.kind, pos)
            else:
                lin = np.eye(2) + spec.affine_jitter * rng.uniform(-1.0, 1.0, size=(2, 2))
                pose = MotionParams(
                    cfg.kind, np.array([lin[0, 0], lin[0, 1], lin[1, 0], lin[1, 1], pos[0], pos[1]])
                )
            thetas.append(motion.invert(pose))
        return thetas
    thetas = list(cfg.trajectory)
    if len(thetas) != cfg.n_frames:
        raise ConfigError(f"trajectory lists {len(thetas)} motions for {cfg.n_frames} frames")
    for i, t in enumerate(thetas):
        if t.kind is not cfg.kind:
            raise ConfigError(f"trajectory motion {i} has kind {t.kind.value}")
    if not motion.is_identity(thetas[0]):
        raise ConfigError("frame 0 is the anchor and must carry the identity motion")
    return thetas


def _frame_footprint(theta: MotionParams, w: int, h: int) -> np.ndarray:
    """Reference-frame corners of a w x h frame under the true motion."""
    inv = motion.invert(theta)
    return np.array(
        [motion.map_point(inv, c) for c in ((0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1))]
    )


def generate(cfg: SynthConfig) -> SynthDataset:
    """Sample every frame out of the source and add per-frame seeded noise.

    Deterministic: the frame-i noise stream is seeded by (seed, i), so
    adding frames never reshuffles earlier ones. Raises ConfigError naming
    the first frame whose footprint leaves the source.
    """
    thetas = resolve_trajectory(cfg)
    w, h = cfg.frame_size
    src = cfg.source
    frames = []
    for i, theta in enumerate(thetas):
        corners = _frame_footprint(theta, w, h)
        if (
            corners[:, 0].min() < 0
            or corners[:, 1].min() < 0
            or corners[:, 0].max() > src.width - 1
            or corners[:, 1].max() > src.height - 1
        ):
            raise ConfigError(f"frame {i} footprint leaves the source image")
        xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        inv = motion.invert(theta)
        u, v = motion.map_points(inv, xs, ys)
        vals, ok = _sample(src, u, v)
        if not ok.all():
            raise ConfigError(f"frame {i} samples outside the source image")
        if cfg.noise_sigma > 0:
            rng = np.random.default_rng([cfg.seed, i])
            vals = vals + cfg.noise_sigma * rng.standard_normal(vals.shape)
        frames.append(Raster(np.clip(vals, 0.0, 1.0)))
    truth = Registration(kind=cfg.kind, params=thetas, anchor=0)
    return SynthDataset(frames=frames, truth=truth, config=cfg)


def _sample(src: Raster, u, v):
    from .raster import sample_bilinear_many

    return sample_bilinear_many(src, u - src.origin[0], v - src.origin[1])


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    corner_error_px: list[float]
    param_rmse: list[float]
    psnr_db: float
    ml_cost: float

    def to_dict(self) -> dict:
        return {
            "corner_error_px": [float(v) for v in self.corner_error_px],
            "param_rmse": [float(v) for v in self.param_rmse],
            "psnr_db": float(self.psnr_db),
            "ml_cost": float(self.ml_cost),
        }


def corner_error(est: MotionParams, truth: MotionParams, width: int, height: int) -> float:
    """Max distance between frame corners placed by the two motions."""
    pts_est = _frame_footprint(est, width, height)
    pts_true = _frame_footprint(truth, width, height)
    return float(np.max(np.linalg.norm(pts_est - pts_true, axis=1)))


def evaluate(
    est: Registration, truth: Registration, images: list[Raster], source: Raster
) -> EvalReport:
    """Score an estimated registration against the ground truth.

    Both registrations must cover the same frames with the same model and
    share their anchor, which pins the common gauge; reference coordinates
    then coincide with source pixels, so the recomposited panorama is
    compared to the source directly on the pixels it defines.
    """
    if len(est.params) != len(truth.params) or len(est.params) != len(images):
        raise ValueError(
            f"frame count mismatch: {len(est.params)} estimated, "
            f"{len(truth.params)} true, {len(images)} images"
        )
    if est.kind is not truth.kind:
        raise ValueError(f"model mismatch: {est.kind.value} vs {truth.kind.value}")
    if est.anchor != truth.anchor:
        raise ValueError(f"anchor mismatch: {est.anchor} vs {truth.anchor}")

    corners = []
    rmses = []
    for img, pe_, pt_ in zip(images, est.params, truth.params):
        corners.append(corner_error(pe_, pt_, img.width, img.height))
        rmses.append(float(np.sqrt(np.mean((pe_.theta - pt_.theta) ** 2))))

    grid = compute_bounds(images, est, margin=0)
    pano = estimate_panorama(images, est, grid)
    XS, YS = np.meshgrid(
        np.arange(grid.x_min, grid.x_max + 1), np.arange(grid.y_min, grid.y_max + 1)
    )
    in_src = (XS >= 0) & (XS <= source.width - 1) & (YS >= 0) & (YS <= source.height - 1)
    use = pano.defined & in_src
    if use.any():
        src_vals = source.data[YS[use], XS[use]]
        mse = float(np.mean((pano.image.data[use] - src_vals) ** 2))
    else:
        mse = 1.0
    psnr = 10.0 * math.log10(1.0 / max(mse, 1e-12))
    return EvalReport(
        corner_error_px=corners,
        param_rmse=rmses,
        psnr_db=min(psnr, PSNR_CAP_DB),
        ml_cost=ml_cost(images, est, grid),
    )


# ---------------------------------------------------------------------------
# dataset persistence


def save_dataset(ds: SynthDataset, outdir: str | Path, source_ref: str | None = None) -> None:
    """Write frames as frame_XXX.pgm plus truth.json and config.json."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(ds.frames):
        save_image(fr, outdir / f"frame_{i:03d}.pgm")
    (outdir / "truth.json").write_text(json.dumps(ds.truth.to_dict(), sort_keys=True, indent=2) + "\n")
    cfg = ds.config
    echo = {
        "source": source_ref,
        "n_frames": cfg.n_frames,
        "frame_size": list(cfg.frame_size),
        "kind": cfg.kind.value,
        "noise_sigma": cfg.noise_sigma,
        "seed": cfg.seed,
        "trajectory": [[float(v) for v in t.theta] for t in ds.truth.params],
    }
    (outdir / "config.json").write_text(json.dumps(echo, sort_keys=True, indent=2) + "\n")


def load_frames(directory: str | Path) -> list[Raster]:
    """Load frame_*.pgm (or, failing that, any .pgm/.png) in sorted order."""
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.pgm"))
    if not paths:
        paths = sorted(p for p in directory.iterdir() if p.suffix in (".pgm", ".png"))
    if not paths:
        raise ConfigError(f"no frames found in {directory}")
    return [load_image(p) for p in paths]
