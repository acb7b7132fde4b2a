"""Global multi-frame refinement of a registration.

Pairwise chaining drifts: an error in one link displaces every later frame.
Refinement repairs this by descending the global cost directly. One frame
at a time (the anchor stays fixed), a Gauss-Newton update is solved against
the current composited panorama:

    (Gamma + damping*I) d = -gamma
    Gamma = sum over R_q of grad grad^T
    gamma = sum over R_q of grad * (panorama - frame sample)
    grad  = -(dm/dtheta) . (frame gradient at the warped position)

where R_q is the set of grid pixels the frame observes. This system is the
same one pairwise registration would build for aligning the frame to the
panorama image, which is what makes the cyclic scheme cheap. Every frame
update is re-scored against the exact global cost with step halving, so the
per-level cost sequence is non-increasing by construction, and the whole
cycle runs coarse-to-fine so large propagated errors are corrected at low
resolution first.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import motion
from .errors import InsufficientOverlapError, RegistrationFailureError
from .motion import ModelKind, MotionParams
from .pairwise import RegisterOptions, register_pair, solve_step
from .panorama import RefGrid, Registration, compute_bounds, warp_to_grid
from .raster import Raster, build_pyramid, sample_bilinear_many, spatial_gradient

log = logging.getLogger(__name__)


@dataclass
class MlmOptions:
    max_sweeps: int = 20
    sweep_tol: float = 1e-5  # stop a level when the relative cost drop per sweep falls below
    damping: float = 1e-6
    max_levels: int = 3
    min_update_norm: float = 1e-4
    max_halvings: int = 8
    grid_margin: int = 2

    def __post_init__(self):
        if self.max_sweeps < 1 or self.max_levels < 1:
            raise ValueError("counts must be >= 1")
        if self.sweep_tol <= 0 or self.min_update_norm <= 0:
            raise ValueError("tolerances must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")


@dataclass
class SweepRecord:
    level: int
    sweep: int
    ml_cost: float
    max_update_norm: float
    frames_skipped: int
    frame_update_norms: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "level": self.level,
                "sweep": self.sweep,
                "ml_cost": self.ml_cost,
                "max_update_norm": self.max_update_norm,
                "frames_skipped": self.frames_skipped,
            },
            sort_keys=True,
        )


@dataclass
class MlmTrace:
    """Convergence record: one entry per sweep, cost measured on the grid
    of the resolution level it ran at. Within a level the cost sequence is
    non-increasing; sums at different levels cover different pixel counts
    and are not comparable across level boundaries."""

    records: list[SweepRecord] = field(default_factory=list)
    level_schedule: list[int] = field(default_factory=list)
    terminations: list[tuple[int, str]] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


# ---------------------------------------------------------------------------
# sequential initialization


def chain_pairwise(
    kind: ModelKind, pairwise: list[MotionParams], anchor: int = 0
) -> Registration:
    """Turn consecutive-pair motions (frame k -> frame k+1) into per-frame
    reference motions by composition outward from the anchor."""
    n = len(pairwise) + 1
    if not 0 <= anchor < n:
        raise ValueError(f"anchor {anchor} out of range for {n} frames")
    thetas: list[MotionParams | None] = [None] * n
    thetas[anchor] = motion.identity(kind)
    for k in range(anchor + 1, n):
        thetas[k] = motion.compose(pairwise[k - 1], thetas[k - 1])
    for k in range(anchor - 1, -1, -1):
        thetas[k] = motion.compose(motion.invert(pairwise[k]), thetas[k + 1])
    return Registration(kind=kind, params=thetas, anchor=anchor)


def sequential_init(
    images: list[Raster],
    kind: ModelKind,
    opts: RegisterOptions,
    anchor: int = 0,
) -> Registration:
    """Register consecutive frames pairwise and chain the results.

    Raises RegistrationFailureError naming the failing frame if any pair
    cannot be registered.
    """
    if len(images) < 1:
        raise ValueError("need at least one image")
    pairs = []
    for k in range(len(images) - 1):
        try:
            res = register_pair(images[k], images[k + 1], motion.identity(kind), opts)
        except RegistrationFailureError as exc:
            raise RegistrationFailureError(
                f"sequential init failed at pair {k} -> {k + 1}: {exc}", frame_index=k + 1
            ) from exc
        pairs.append(res.params)
    return chain_pairwise(kind, pairs, anchor)


# ---------------------------------------------------------------------------
# coordinatewise updates


class _Workspace:
    """Cached per-frame samples of all frames on one grid.

    The global cost is evaluated from scratch on every call, always with
    the same accumulation order, so accept/reject comparisons during
    refinement are exact and the recorded cost sequence is monotone by
    construction rather than within floating-point drift.
    """

    def __init__(self, images: list[Raster], thetas: list[MotionParams], grid: RefGrid):
        self.images = images
        self.thetas = list(thetas)
        self.grid = grid
        self.grads = [spatial_gradient(im) for im in images]
        n = len(images)
        self.S = np.empty((n, grid.height, grid.width))
        self.M = np.empty((n, grid.height, grid.width), dtype=bool)
        for i in range(n):
            self.S[i], self.M[i] = warp_to_grid(images[i], thetas[i], grid)

    def resample(self, q: int, theta: MotionParams):
        return warp_to_grid(self.images[q], theta, self.grid)

    def set_frame(self, q: int, theta: MotionParams, s: np.ndarray, m: np.ndarray):
        self.thetas[q] = theta
        self.S[q] = s
        self.M[q] = m

    def cost(self, q: int | None = None, s=None, m=None) -> float:
        """Pairwise global cost, optionally with frame q's samples replaced."""
        acc = np.zeros(self.S.shape[1:])
        acc_sq = np.zeros_like(acc)
        w = np.zeros(acc.shape, dtype=np.int32)
        for i in range(len(self.images)):
            si = s if i == q else self.S[i]
            mi = m if i == q else self.M[i]
            acc += np.where(mi, si, 0.0)
            acc_sq += np.where(mi, si * si, 0.0)
            w += mi
        seen = w > 0
        # sum over pairs of (s_i - s_j)^2 / w  ==  2 * sum of (s_i - mean)^2
        return float(2.0 * np.sum(acc_sq[seen] - acc[seen] ** 2 / w[seen]))

    def frame_system(self, q: int):
        """Normal system (Gamma, gamma, pixel count) for frame q against
        the panorama built from the current samples."""
        theta = self.thetas[q]
        img = self.images[q]
        X, Y = self.grid.coords()
        ok = self.M[q]
        n_q = int(ok.sum())
        dof = theta.kind.dof
        if n_q == 0:
            return np.zeros((dof, dof)), np.zeros(dof), 0

        acc = np.where(self.M, self.S, 0.0).sum(axis=0)
        w = self.M.sum(axis=0)
        pano = acc[ok] / w[ok]  # w >= 1 wherever frame q observes
        resid = pano - self.S[q][ok]

        u, v = motion.map_points(theta, X[ok], Y[ok])
        u -= img.origin[0]
        v -= img.origin[1]
        gx, _ = sample_bilinear_many(self.grads[q].gx, u, v)
        gy, _ = sample_bilinear_many(self.grads[q].gy, u, v)
        if theta.kind is ModelKind.TRANSLATION:
            D = np.column_stack([-gx, -gy])
        else:
            x, y = X[ok], Y[ok]
            D = np.column_stack([-x * gx, -y * gx, -x * gy, -y * gy, -gx, -gy])
        return D.T @ D, D.T @ resid, n_q


def frame_system(images: list[Raster], reg: Registration, q: int, grid: RefGrid):
    """Public accumulation of (Gamma, gamma) for one frame; see module
    docstring for the definitions."""
    ws = _Workspace(images, reg.params, grid)
    gamma_mat, gamma_vec, n_q = ws.frame_system(q)
    return gamma_mat, gamma_vec, n_q


def coordinate_update(
    images: list[Raster],
    reg: Registration,
    q: int,
    grid: RefGrid,
    damping: float = 1e-6,
) -> np.ndarray:
    """Solve one frame's update against the panorama of the current state."""
    if q == reg.anchor:
        raise ValueError("the anchor frame is the gauge and is never updated")
    gamma_mat, gamma_vec, n_q = frame_system(images, reg, q, grid)
    if n_q == 0:
        raise InsufficientOverlapError(f"frame {q} observes no grid pixel")
    return solve_step(gamma_mat, gamma_vec, damping)


# ---------------------------------------------------------------------------
# cyclic refinement


def refine(
    images: list[Raster], reg0: Registration, opts: MlmOptions | None = None
) -> tuple[Registration, MlmTrace]:
    """Cyclically refine all non-anchor frames, coarse-to-fine.

    Each frame update is accepted only if (after up to ``max_halvings``
    halvings) it strictly lowers the global cost on the current level's
    grid; failing frames are skipped for the sweep, never fatal. Sweeps at
    a level stop on ``sweep_tol`` relative decrease or ``max_sweeps``.
    """
    if opts is None:
        opts = MlmOptions()
    if len(images) != len(reg0.params):
        raise ValueError(f"{len(images)} images but {len(reg0.params)} motions")

    trace = MlmTrace()
    pyramids = [build_pyramid(im, opts.max_levels) for im in images]
    n_levels = min(len(p) for p in pyramids)

    thetas = list(reg0.params)
    for _ in range(n_levels - 1):
        thetas = [motion.rescale(t, 0.5) for t in thetas]

    n = len(images)
    movable = [q for q in range(n) if q != reg0.anchor]

    for level in range(n_levels - 1, -1, -1):
        imgs = [pyramids[i][level] for i in range(n)]
        reg_level = Registration(kind=reg0.kind, params=thetas, anchor=reg0.anchor)
        grid = compute_bounds(imgs, reg_level, margin=opts.grid_margin)
        ws = _Workspace(imgs, thetas, grid)
        cur = ws.cost()
        prev = cur
        reason = "max_sweeps"
        trace.level_schedule.append(level)

        for sweep in range(1, opts.max_sweeps + 1):
            skipped = 0
            norms: list[float] = []
            for q in movable:
                gamma_mat, gamma_vec, n_q = ws.frame_system(q)
                if n_q == 0:
                    log.debug("level %d sweep %d: frame %d observes nothing", level, sweep, q)
                    skipped += 1
                    continue
                try:
                    delta = solve_step(gamma_mat, gamma_vec, opts.damping)
                except InsufficientOverlapError:
                    skipped += 1
                    continue
                if not np.isfinite(delta).all():
                    skipped += 1
                    continue
                if float(np.linalg.norm(delta)) < opts.min_update_norm:
                    norms.append(0.0)
                    continue

                applied = None
                for t in range(opts.max_halvings + 1):
                    step = delta / 2**t
                    try:
                        cand = MotionParams(ws.thetas[q].kind, ws.thetas[q].theta + step)
                    except Exception:
                        continue
                    s_c, m_c = ws.resample(q, cand)
                    if not m_c.any():
                        continue
                    cost_c = ws.cost(q, s_c, m_c)
                    if cost_c < cur:
                        applied = (cand, s_c, m_c, cost_c, float(np.linalg.norm(step)))
                        break
                if applied is None:
                    log.debug("level %d sweep %d: frame %d update rejected", level, sweep, q)
                    skipped += 1
                    continue
                cand, s_c, m_c, cost_c, norm = applied
                ws.set_frame(q, cand, s_c, m_c)
                cur = cost_c
                norms.append(norm)

            trace.records.append(
                SweepRecord(
                    level=level,
                    sweep=sweep,
                    ml_cost=cur,
                    max_update_norm=max(norms, default=0.0),
                    frames_skipped=skipped,
                    frame_update_norms=norms,
                )
            )
            if prev <= 0.0:
                reason = "converged"
                break
            if (prev - cur) < opts.sweep_tol * prev:
                reason = "sweep_tol"
                break
            prev = cur

        trace.terminations.append((level, reason))
        thetas = list(ws.thetas)
        if level > 0:
            thetas = [motion.rescale(t, 2.0) for t in thetas]

    result = Registration(kind=reg0.kind, params=thetas, anchor=reg0.anchor)
    return result, trace
