"""Featureless registration of an image pair.

Given images I and I' and a motion model, estimate the parameters theta
minimizing the squared intensity difference I(x) - I'(m(theta, x)). The
residual is summed over the *adaptive window*: the largest set of pixels of
I whose warped position falls inside I'. That window is recomputed from the
current estimate at every iteration, so no prior knowledge of the overlap
is needed; an optional fixed centered window is provided as a baseline.

Updates come from damped Gauss-Newton normal equations, wrapped in a
step-halving safeguard so the windowed mean squared residual never
increases, and run coarse-to-fine over an image pyramid to tolerate large
initial misalignment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import motion
from .errors import (
    InsufficientOverlapError,
    RegistrationFailureError,
    SingularTransformError,
)
from .motion import MotionParams
from .raster import (
    GradientField,
    Raster,
    build_pyramid,
    sample_bilinear_many,
    spatial_gradient,
)

log = logging.getLogger(__name__)


@dataclass
class RegisterOptions:
    """Knobs for pairwise registration.

    ``max_iters_fine`` applies at full resolution; coarser pyramid levels
    use ``max_iters_coarse`` since only a rough estimate is needed there.
    ``fixed_window``, when set, restricts the residual to a centered square
    of that side length instead of the full adaptive window (the square is
    halved along with the images at coarser levels).
    """

    max_levels: int = 4
    max_iters_fine: int = 50
    max_iters_coarse: int = 10
    min_update_norm: float = 1e-4
    damping: float = 1e-6
    min_overlap_pixels: int = 256
    fixed_window: int | None = None
    max_halvings: int = 8

    def __post_init__(self):
        if self.max_levels < 1 or self.max_iters_fine < 1 or self.max_iters_coarse < 1:
            raise ValueError("counts must be >= 1")
        if self.min_update_norm <= 0:
            raise ValueError("min_update_norm must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if self.min_overlap_pixels < 1:
            raise ValueError("min_overlap_pixels must be >= 1")


@dataclass
class PairResult:
    params: MotionParams
    final_cost: float
    iterations: list[int]
    overlap_pixels: int
    # (level, cost before, cost after) for every accepted safeguarded step,
    # both measured on the window the step was accepted against.
    accepted_steps: list[tuple[int, float, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# residual evaluation


def _grid_coords(img: Raster) -> tuple[np.ndarray, np.ndarray]:
    ox, oy = img.origin
    xs = ox + np.arange(img.width, dtype=np.float64)
    ys = oy + np.arange(img.height, dtype=np.float64)
    return np.meshgrid(xs, ys)


def _fixed_window_mask(img: Raster, side: int) -> np.ndarray:
    m = np.zeros(img.shape, dtype=bool)
    side_x = min(side, img.width)
    side_y = min(side, img.height)
    x0 = (img.width - side_x) // 2
    y0 = (img.height - side_y) // 2
    m[y0 : y0 + side_y, x0 : x0 + side_x] = True
    return m


def _window_eval(
    img: Raster,
    other: Raster,
    theta: MotionParams,
    mask: np.ndarray | None = None,
    fixed_window: int | None = None,
):
    """Evaluate residuals of img against other warped by theta.

    Returns (X, Y, U, V, err, ok): full-image arrays of grid coordinates in
    img's frame, warped sampling positions in other's pixel frame, the
    residual, and the window membership mask.
    """
    X, Y = _grid_coords(img)
    U, V = motion.map_points(theta, X, Y)
    U = U - other.origin[0]
    V = V - other.origin[1]
    vals, ok = sample_bilinear_many(other, U, V)
    if mask is not None:
        ok = ok & mask
    if fixed_window is not None:
        ok = ok & _fixed_window_mask(img, fixed_window)
    return X, Y, U, V, img.data - vals, ok


def adaptive_window(I: Raster, Iprime: Raster, theta: MotionParams) -> np.ndarray:
    """Grid points of I whose warp lands inside I', as an (N, 2) array of
    (x, y) coordinates in I's frame. May be empty."""
    X, Y, _, _, _, ok = _window_eval(I, Iprime, theta)
    return np.column_stack([X[ok], Y[ok]])


def residual(I: Raster, Iprime: Raster, theta: MotionParams, x) -> float | None:
    """I(x) - I'(m(theta, x)) at a single point of I's frame, or None when
    the warped sample does not exist."""
    px, py = float(x[0]) - I.origin[0], float(x[1]) - I.origin[1]
    own, own_ok = sample_bilinear_many(I, np.array([px]), np.array([py]))
    u = motion.map_point(theta, (float(x[0]), float(x[1])))
    warped, ok = sample_bilinear_many(
        Iprime, np.array([u[0] - Iprime.origin[0]]), np.array([u[1] - Iprime.origin[1]])
    )
    if not (own_ok[0] and ok[0]):
        return None
    return float(own[0] - warped[0])


def window_cost(
    I: Raster,
    Iprime: Raster,
    theta: MotionParams,
    fixed_window: int | None = None,
    mask: np.ndarray | None = None,
) -> tuple[float, int]:
    """Mean squared residual over the current window and its pixel count.

    The mean (not the sum) is the comparable quantity: the window size
    changes with theta, and sums would favor smaller overlaps.
    """
    _, _, _, _, err, ok = _window_eval(I, Iprime, theta, mask, fixed_window)
    n = int(ok.sum())
    if n == 0:
        return np.inf, 0
    return float(np.mean(err[ok] ** 2)), n


def normal_equations(
    I: Raster,
    Iprime: Raster,
    theta: MotionParams,
    grad: GradientField | None = None,
    mask: np.ndarray | None = None,
    fixed_window: int | None = None,
):
    """Accumulate the Gauss-Newton system over the window.

    Returns (A, b, count, mean_sq) with A = sum of grad_e grad_e^T and
    b = sum of e * grad_e; the update solves (A + damping*I) d = -b. The
    residual gradient is -(dm/dtheta) . (grad I' at the warped position),
    with I''s gradient computed once on its own grid and sampled
    bilinearly.
    """
    if grad is None:
        grad = spatial_gradient(Iprime)
    X, Y, U, V, err, ok = _window_eval(I, Iprime, theta, mask, fixed_window)
    n = int(ok.sum())
    dof = theta.kind.dof
    if n == 0:
        return np.zeros((dof, dof)), np.zeros(dof), 0, np.inf
    u, v = U[ok], V[ok]
    gx, _ = sample_bilinear_many(grad.gx, u, v)
    gy, _ = sample_bilinear_many(grad.gy, u, v)
    e = err[ok]
    if theta.kind is motion.ModelKind.TRANSLATION:
        D = np.column_stack([-gx, -gy])
    else:
        x, y = X[ok], Y[ok]
        D = np.column_stack([-x * gx, -y * gx, -x * gy, -y * gy, -gx, -gy])
    A = D.T @ D
    b = D.T @ e
    return A, b, n, float(np.mean(e**2))


def solve_step(A: np.ndarray, b: np.ndarray, damping: float) -> np.ndarray:
    """Solve the damped system (A + damping*I) d = -b."""
    sys = A + damping * np.eye(A.shape[0])
    try:
        return np.linalg.solve(sys, -b)
    except np.linalg.LinAlgError as exc:
        raise InsufficientOverlapError(f"normal system is singular: {exc}") from exc


def gauss_newton_step(
    I: Raster,
    Iprime: Raster,
    theta0: MotionParams,
    opts: RegisterOptions,
    grad: GradientField | None = None,
) -> np.ndarray:
    """One undamped-window Gauss-Newton update vector at theta0."""
    A, b, n, _ = normal_equations(I, Iprime, theta0, grad, fixed_window=opts.fixed_window)
    if n < opts.min_overlap_pixels:
        raise InsufficientOverlapError(
            f"window has {n} pixels, need {opts.min_overlap_pixels}"
        )
    if not (np.isfinite(A).all() and np.isfinite(b).all()):
        raise ValueError("normal system contains non-finite entries")
    return solve_step(A, b, opts.damping)


# ---------------------------------------------------------------------------
# full pairwise registration


def _cost_on_pixels(
    img: Raster, other: Raster, theta: MotionParams, X, Y, ok
) -> tuple[float, int]:
    """Candidate cost over a previously chosen window; pixels whose warp
    leaves `other` under the candidate drop out of the mean."""
    U, V = motion.map_points(theta, X[ok], Y[ok])
    vals, still = sample_bilinear_many(other, U - other.origin[0], V - other.origin[1])
    n = int(still.sum())
    if n == 0:
        return np.inf, 0
    e = img.data[ok][still] - vals[still]
    return float(np.mean(e**2)), n


def register_pair(
    I: Raster, Iprime: Raster, theta_init: MotionParams, opts: RegisterOptions
) -> PairResult:
    """Coarse-to-fine safeguarded Gauss-Newton registration of I' to I.

    At each pyramid level the update is solved on the adaptive window and
    accepted only if (after up to ``max_halvings`` halvings) it lowers the
    windowed mean squared residual; the level ends when the accepted update
    norm falls below ``min_update_norm`` or the iteration cap is hit.
    Raises RegistrationFailureError when no level ever reaches
    ``min_overlap_pixels`` evaluable pixels.
    """
    pyr_i = build_pyramid(I, opts.max_levels)
    pyr_p = build_pyramid(Iprime, opts.max_levels)
    n_levels = min(len(pyr_i), len(pyr_p))

    theta = theta_init
    for _ in range(n_levels - 1):
        theta = motion.rescale(theta, 0.5)

    iterations: list[int] = []
    accepted: list[tuple[int, float, float]] = []
    any_level_ran = False

    for level in range(n_levels - 1, -1, -1):
        img, other = pyr_i[level], pyr_p[level]
        grad = spatial_gradient(other)
        fixed = None
        if opts.fixed_window is not None:
            fixed = max(2, int(round(opts.fixed_window / 2**level)))
        cap = opts.max_iters_fine if level == 0 else opts.max_iters_coarse
        iters = 0

        for _ in range(cap):
            X, Y, U, V, err, ok = _window_eval(img, other, theta, None, fixed)
            n = int(ok.sum())
            if n < opts.min_overlap_pixels:
                log.debug("level %d: window %d below floor, stopping level", level, n)
                break
            cost0 = float(np.mean(err[ok] ** 2))
            u, v = U[ok], V[ok]
            gx, _ = sample_bilinear_many(grad.gx, u, v)
            gy, _ = sample_bilinear_many(grad.gy, u, v)
            if theta.kind is motion.ModelKind.TRANSLATION:
                D = np.column_stack([-gx, -gy])
            else:
                x, y = X[ok], Y[ok]
                D = np.column_stack([-x * gx, -y * gx, -x * gy, -y * gy, -gx, -gy])
            A = D.T @ D
            b = D.T @ err[ok]
            if not (np.isfinite(A).all() and np.isfinite(b).all()):
                raise ValueError("normal system contains non-finite entries")
            delta = solve_step(A, b, opts.damping)
            iters += 1
            any_level_ran = True

            applied = None
            for t in range(opts.max_halvings + 1):
                step = delta / 2**t
                try:
                    cand = MotionParams(theta.kind, theta.theta + step)
                except SingularTransformError:
                    continue
                cost_c, n_c = _cost_on_pixels(img, other, cand, X, Y, ok)
                if n_c >= opts.min_overlap_pixels and cost_c < cost0:
                    applied = (cand, step, cost_c)
                    break
            if applied is None:
                log.debug("level %d: no decreasing step, stopping level", level)
                break
            theta, step, cost_c = applied
            accepted.append((level, cost0, cost_c))
            if float(np.linalg.norm(step)) < opts.min_update_norm:
                break

        iterations.append(iters)
        if level > 0:
            theta = motion.rescale(theta, 2.0)

    final_cost, overlap = window_cost(I, Iprime, theta, opts.fixed_window)
    if not any_level_ran or overlap < opts.min_overlap_pixels:
        raise RegistrationFailureError(
            f"registration failed: final overlap {overlap} pixels "
            f"(floor {opts.min_overlap_pixels})"
        )
    return PairResult(
        params=theta,
        final_cost=final_cost,
        iterations=iterations,
        overlap_pixels=overlap,
        accepted_steps=accepted,
    )
