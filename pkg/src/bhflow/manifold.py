"""Embedded target manifolds.

Two targets are supported, both with exact closed-form geometry:

* the unit sphere ``S^{L-1}`` inside ``R^L``;
* a flat linear subspace spanned by the first ``n`` coordinate axes.

All operations are pure and vectorized: a "point" argument may be a
single vector of shape ``(L,)`` or any array whose last axis has length
``L``; frame-valued results gain a frame axis just before the last one.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NearSingularPoint, NonTangentInput, PointOffManifold

TANGENCY_TOL = 1e-10


class TargetKind(Enum):
    UNIT_SPHERE = "unit_sphere"
    FLAT_SUBSPACE = "flat_subspace"


@dataclass(frozen=True)
class TargetManifold:
    """Target ``N`` embedded in ``R^L``.

    For ``UNIT_SPHERE`` the subspace dimension ``n`` equals ``L - 1``.
    For ``FLAT_SUBSPACE`` the target is ``span(e_1 .. e_n)``.
    """

    kind: TargetKind
    L: int
    n: int
    projection_tolerance: float = 1e-12

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("ambient dimension must be >= 1")
        if self.kind is TargetKind.UNIT_SPHERE:
            if self.n != self.L - 1:
                raise ValueError("sphere dimension must be L - 1")
        else:
            if not 0 < self.n < self.L:
                raise ValueError("subspace dimension must satisfy 0 < n < L")

    @property
    def codim(self) -> int:
        return self.L - self.n

    @property
    def is_flat(self) -> bool:
        return self.kind is TargetKind.FLAT_SUBSPACE


def unit_sphere(L: int) -> TargetManifold:
    return TargetManifold(TargetKind.UNIT_SPHERE, L, L - 1)


def flat_subspace(L: int, n: int) -> TargetManifold:
    return TargetManifold(TargetKind.FLAT_SUBSPACE, L, n)


def _check_on_manifold(m: TargetManifold, y: np.ndarray, tol: float | None = None):
    # default guard sits at the constrained-field invariant (1e-10), not at
    # the projection tolerance, so boundary data valid to 1e-10 passes
    if tol is None:
        tol = max(m.projection_tolerance, 1e-10)
    if m.kind is TargetKind.UNIT_SPHERE:
        defect = np.abs(np.linalg.norm(y, axis=-1) - 1.0)
    else:
        defect = np.abs(y[..., m.n:]).max(axis=-1) if m.codim else 0.0
    if np.max(defect) > tol:
        raise PointOffManifold(
            f"point off target by {float(np.max(defect)):.3e} (tol {tol:.1e})"
        )


def project(m: TargetManifold, p: np.ndarray) -> np.ndarray:
    """Nearest-point projection onto the target.

    Raises ``NearSingularPoint`` for sphere targets when ``|p|`` falls
    below ``10 * projection_tolerance``: the step that produced such a
    point was too large to be meaningful.
    """
    p = np.asarray(p, dtype=float)
    if m.kind is TargetKind.UNIT_SPHERE:
        norms = np.linalg.norm(p, axis=-1)
        if np.min(norms) < 10.0 * m.projection_tolerance:
            raise NearSingularPoint(
                f"|p| = {float(np.min(norms)):.3e} too close to the origin"
            )
        return p / norms[..., None]
    out = p.copy()
    out[..., m.n:] = 0.0
    return out


def normal_frame(m: TargetManifold, y: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the normal space at ``y``, shape ``(..., codim, L)``."""
    y = np.asarray(y, dtype=float)
    _check_on_manifold(m, y)
    if m.kind is TargetKind.UNIT_SPHERE:
        return y[..., None, :]
    frame = np.zeros(y.shape[:-1] + (m.codim, m.L))
    for i in range(m.codim):
        frame[..., i, m.n + i] = 1.0
    return frame


def normal_frame_differential(m: TargetManifold, y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Directional derivative of each frame vector, shape ``(..., codim, L)``.

    The sphere's outward normal is the identity map, so its differential
    is the identity; a flat subspace has a constant frame.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    _check_on_manifold(m, y)
    if m.kind is TargetKind.UNIT_SPHERE:
        return X[..., None, :]
    return np.zeros(np.broadcast(y, X).shape[:-1] + (m.codim, m.L))


def tangential_project(m: TargetManifold, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Remove the normal components of ``v`` at the base point ``y``."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_on_manifold(m, y)
    if m.kind is TargetKind.UNIT_SPHERE:
        return v - np.sum(v * y, axis=-1)[..., None] * y
    out = np.broadcast_to(v, np.broadcast(y, v).shape).copy()
    out[..., m.n:] = 0.0
    return out


def second_fundamental_form(
    m: TargetManifold, y: np.ndarray, X: np.ndarray, Y: np.ndarray
) -> np.ndarray:
    """Normal-valued bilinear form measuring how the target curves.

    Normalized so that it equals the second derivative at 0 of
    ``t -> project(y + t X)``; on the sphere this is ``-<X, Y> y``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _check_on_manifold(m, y)
    for name, vec in (("X", X), ("Y", Y)):
        leak = _normal_leak(m, y, vec)
        if leak > TANGENCY_TOL:
            raise NonTangentInput(
                f"{name} has normal component {leak:.3e} (tol {TANGENCY_TOL:.1e})"
            )
    if m.kind is TargetKind.UNIT_SPHERE:
        return -np.sum(X * Y, axis=-1)[..., None] * y
    return np.zeros(np.broadcast(y, X, Y).shape[:-1] + (m.L,))


def _normal_leak(m: TargetManifold, y: np.ndarray, v: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.linalg.norm(v, axis=-1))))
    if m.kind is TargetKind.UNIT_SPHERE:
        return float(np.max(np.abs(np.sum(v * y, axis=-1)))) / scale
    if m.codim == 0:
        return 0.0
    return float(np.max(np.abs(v[..., m.n:]))) / scale
