import numpy as np
import pytest

from mlmosaic import motion
from mlmosaic.motion import ModelKind, MotionParams
from mlmosaic.panorama import Registration, compute_bounds
from mlmosaic.raster import Raster
from mlmosaic.synth import make_texture


def random_instance(seed, n_frames=3, size=64, kind=ModelKind.AFFINE, smooth=False):
    """Random frames plus a random valid registration (anchor 0 at identity);
    the frames are unrelated images, which is all the cost identities need."""
    rng = np.random.default_rng(seed)
    if smooth:
        images = [
            make_texture(size, size, seed=int(rng.integers(2**31)), scales=(6.0, 18.0), weights=(0.4, 0.6))
            for _ in range(n_frames)
        ]
    else:
        images = [Raster(rng.random((size, size))) for _ in range(n_frames)]
    params = [motion.identity(kind)]
    for _ in range(n_frames - 1):
        if kind is ModelKind.AFFINE:
            lin = np.eye(2) + rng.uniform(-0.12, 0.12, size=(2, 2))
            t = rng.uniform(-10, 10, size=2)
            params.append(
                MotionParams(kind, np.array([lin[0, 0], lin[0, 1], lin[1, 0], lin[1, 1], t[0], t[1]]))
            )
        else:
            params.append(MotionParams(kind, rng.uniform(-10, 10, size=2)))
    reg = Registration(kind=kind, params=params, anchor=0)
    grid = compute_bounds(images, reg, margin=2)
    return images, reg, grid


def crop(r: Raster, x0: int, y0: int, w: int, h: int) -> Raster:
    return Raster(r.data[y0 : y0 + h, x0 : x0 + w])


def smooth_field(width: int, height: int, shift=(0.0, 0.0)) -> Raster:
    """Band-limited analytic intensity surface evaluated on a shifted grid;
    shifting by s makes image(x) == unshifted(x - s) exactly, with no
    resampling error."""
    X, Y = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    x = X - shift[0]
    y = Y - shift[1]
    f = (
        0.5
        + 0.18 * np.sin(2 * np.pi * x / 23.0) * np.cos(2 * np.pi * y / 17.0)
        + 0.14 * np.cos(2 * np.pi * (x + 0.7 * y) / 31.0)
        + 0.10 * np.sin(2 * np.pi * y / 13.0 + 1.1)
        + 0.05 * np.cos(2 * np.pi * (x - y) / 41.0)
    )
    return Raster(np.clip(f, 0.0, 1.0))


@pytest.fixture(scope="session")
def photo() -> Raster:
    """Photo-like multi-scale texture used where tests call for crops of a
    real picture."""
    return make_texture(512, 512, seed=11, scales=(1.5, 6.0, 24.0), weights=(0.2, 0.4, 0.4))


@pytest.fixture(scope="session")
def blurry_photo() -> Raster:
    """Large-scale structure only; wide convergence basin for big motions."""
    return make_texture(512, 512, seed=29, scales=(6.0, 24.0, 64.0), weights=(0.15, 0.45, 0.4))


@pytest.fixture(scope="session")
def soft_photo() -> Raster:
    """Low-texture, low-contrast source (heavily smoothed, compressed range)."""
    return make_texture(
        512, 512, seed=23, scales=(12.0, 48.0), weights=(0.35, 0.65), low=0.35, high=0.65
    )
