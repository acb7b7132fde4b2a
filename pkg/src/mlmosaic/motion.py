"""Parametric 2-D coordinate mappings and their algebra.

A motion maps reference (panorama) coordinates to image coordinates as
``x_img = A @ x_ref + t``. Two parameterizations are supported:

* translation, theta = (tx, ty), A fixed to the identity;
* affine, theta = (a11, a12, a21, a22, tx, ty) with A = [[a11, a12],
  [a21, a22]].

The parameter ordering above is a package-wide convention; all serialized
output uses it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import SingularTransformError

# Below this |det A| the mapping is treated as non-invertible: overlap
# regions degenerate and the normal systems built on them lose rank.
DET_FLOOR = 1e-6


class ModelKind(enum.Enum):
    TRANSLATION = "translation"
    AFFINE = "affine"

    @property
    def dof(self) -> int:
        return 2 if self is ModelKind.TRANSLATION else 6

    @classmethod
    def from_string(cls, s: str) -> "ModelKind":
        try:
            return cls(s.lower())
        except ValueError:
            raise ValueError(f"unknown motion model {s!r}; use 'translation' or 'affine'") from None


@dataclass(frozen=True, eq=False)
class MotionParams:
    kind: ModelKind
    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64, copy=True).reshape(-1)
        if th.size != self.kind.dof:
            raise ValueError(f"{self.kind.value} motion needs {self.kind.dof} parameters, got {th.size}")
        if not np.isfinite(th).all():
            raise ValueError("motion parameters must be finite")
        if self.kind is ModelKind.AFFINE:
            det = th[0] * th[3] - th[1] * th[2]
            if abs(det) < DET_FLOOR:
                raise SingularTransformError(f"affine linear part has |det| = {abs(det):.3g} < {DET_FLOOR}")
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)

    @property
    def linear(self) -> np.ndarray:
        """The 2x2 linear part A."""
        if self.kind is ModelKind.TRANSLATION:
            return np.eye(2)
        t = self.theta
        return np.array([[t[0], t[1]], [t[2], t[3]]])

    @property
    def translation(self) -> np.ndarray:
        return self.theta[-2:].copy()

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "theta": [float(v) for v in self.theta]}

    @classmethod
    def from_dict(cls, d: dict) -> "MotionParams":
        return cls(ModelKind.from_string(d["kind"]), np.asarray(d["theta"], dtype=np.float64))

    def __repr__(self):
        return f"MotionParams({self.kind.value}, {np.array2string(self.theta, precision=6)})"


def identity(kind: ModelKind) -> MotionParams:
    if kind is ModelKind.TRANSLATION:
        return MotionParams(kind, np.zeros(2))
    return MotionParams(kind, np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))


def is_identity(p: MotionParams, tol: float = 0.0) -> bool:
    ref = identity(p.kind).theta
    if tol == 0.0:
        return bool(np.all(p.theta == ref))
    return bool(np.all(np.abs(p.theta - ref) <= tol))


def map_point(p: MotionParams, x0) -> np.ndarray:
    """Apply the mapping to a single point; returns array (x, y)."""
    x, y = float(x0[0]), float(x0[1])
    u, v = map_points(p, np.array([x]), np.array([y]))
    return np.array([u[0], v[0]])


def map_points(p: MotionParams, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized mapping of coordinate arrays."""
    t = p.theta
    if p.kind is ModelKind.TRANSLATION:
        return xs + t[0], ys + t[1]
    return t[0] * xs + t[1] * ys + t[4], t[2] * xs + t[3] * ys + t[5]


def jacobian(p: MotionParams, x0) -> np.ndarray:
    """Derivative of the mapped point with respect to theta, shape (dof, 2)."""
    if p.kind is ModelKind.TRANSLATION:
        return np.eye(2)
    x, y = float(x0[0]), float(x0[1])
    return np.array(
        [
            [x, 0.0],
            [y, 0.0],
            [0.0, x],
            [0.0, y],
            [1.0, 0.0],
            [0.0, 1.0],
        ]
    )


def compose(outer: MotionParams, inner: MotionParams) -> MotionParams:
    """Mapping equal to applying ``inner`` first, then ``outer``."""
    if outer.kind is not inner.kind:
        raise ValueError(f"cannot compose {outer.kind.value} with {inner.kind.value}")
    if outer.kind is ModelKind.TRANSLATION:
        return MotionParams(outer.kind, outer.theta + inner.theta)
    A = outer.linear @ inner.linear
    t = outer.linear @ inner.translation + outer.translation
    return MotionParams(outer.kind, np.array([A[0, 0], A[0, 1], A[1, 0], A[1, 1], t[0], t[1]]))


def invert(p: MotionParams) -> MotionParams:
    if p.kind is ModelKind.TRANSLATION:
        return MotionParams(p.kind, -p.theta)
    t = p.theta
    det = t[0] * t[3] - t[1] * t[2]
    if abs(det) < DET_FLOOR:
        raise SingularTransformError(f"cannot invert affine with |det| = {abs(det):.3g}")
    inv = np.array([[t[3], -t[1]], [-t[2], t[0]]]) / det
    ti = -inv @ p.translation
    return MotionParams(p.kind, np.array([inv[0, 0], inv[0, 1], inv[1, 0], inv[1, 1], ti[0], ti[1]]))


def rescale(p: MotionParams, factor: float) -> MotionParams:
    """Express the mapping in coordinates scaled by ``factor`` (2 moves one
    pyramid level finer, 0.5 one level coarser). Translation components
    scale; the linear part is unchanged."""
    if factor <= 0.0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    th = p.theta.copy()
    th[-2:] *= factor
    return MotionParams(p.kind, th)
