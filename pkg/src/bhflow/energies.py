"""Discrete energy densities and local energies.

Everything here is read-only over fields.  The Hessian norm sums all
``d^2`` composed central second differences, not just the laplacian,
because the concentration functional needs the full second-derivative
tensor; higher derivative tensors compose central first differences
recursively.  On clamped grids a composition of order ``k`` is valid on
physical nodes at least ``k - 2`` rows inside the box (two ghost layers
feed the first two compositions).
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyBall
from .grid import Field, Grid, Topology, _central, ball_nodes, laplacian

__all__ = [
    "energy_f2",
    "grad_sq_phys",
    "hessian_sq_phys",
    "deriv_sq_phys",
    "invalid_rim",
    "local_energy",
    "global_energy",
    "max_local_energy",
]


def energy_f2(u: Field) -> float:
    """Integral of ``|laplacian u|^2`` over the domain."""
    lap = laplacian(u)
    dens = np.sum(lap.phys**2, axis=-1)
    return float(np.sum(dens * u.grid.quad_weights()))


def grad_sq_phys(u: Field) -> np.ndarray:
    """``|grad u|^2`` at physical nodes."""
    u.require_ghosts()
    per = u.grid.topology is Topology.PERIODIC
    acc = np.zeros((u.grid.n,) * u.grid.d)
    for a in range(u.grid.d):
        da = _central(u.values, a, u.grid.h, per)
        acc += np.sum(da[u.grid.phys] ** 2, axis=-1)
    return acc


def hessian_sq_phys(u: Field) -> np.ndarray:
    """Squared Frobenius norm of the full Hessian at physical nodes."""
    return deriv_sq_phys(u, 2)


def deriv_sq_phys(u: Field, order: int) -> np.ndarray:
    """Sum of squares of all composed derivatives of the given order.

    Entries on the invalid rim (see ``invalid_rim``) are filled with the
    value 0 and must not be consumed there on clamped grids.
    """
    u.require_ghosts()
    grid = u.grid
    per = grid.topology is Topology.PERIODIC
    acc = np.zeros((grid.n,) * grid.d)

    def descend(vals: np.ndarray, remaining: int):
        if remaining == 0:
            acc[...] += np.sum(vals[grid.phys] ** 2, axis=-1)
            return
        for a in range(grid.d):
            descend(_central(vals, a, grid.h, per), remaining - 1)

    descend(u.values, order)
    return acc


def invalid_rim(grid: Grid, order: int) -> int:
    """Physical-node rows next to the box faces where an ``order``-fold
    composition is not supported by the two ghost layers."""
    if grid.topology is Topology.PERIODIC:
        return 0
    return max(0, order - grid.pad)


def _rim_mask(grid: Grid, rim: int) -> np.ndarray:
    """True on physical nodes at least ``rim`` rows away from every face."""
    ok = np.ones((grid.n,) * grid.d, dtype=bool)
    if rim == 0:
        return ok
    for a in range(grid.d):
        idx = [slice(None)] * grid.d
        idx[a] = slice(0, rim)
        ok[tuple(idx)] = False
        idx[a] = slice(grid.n - rim, grid.n)
        ok[tuple(idx)] = False
    return ok


def local_energy(u: Field, x0, R: float) -> float:
    """Concentration functional on the closed ball: Hessian mass plus the
    square root of the quartic gradient mass, both restricted to nodes
    inside the ball (plain restriction at the boundary)."""
    mask = ball_nodes(u.grid, x0, R)
    w = u.grid.quad_weights()
    t_hess = float(np.sum(mask * w * hessian_sq_phys(u)))
    t_grad4 = float(np.sum(mask * w * grad_sq_phys(u) ** 2))
    return t_hess + np.sqrt(max(t_grad4, 0.0))


def global_energy(u: Field) -> float:
    """Concentration functional over the whole domain (dominates every
    ball value by node-set inclusion)."""
    w = u.grid.quad_weights()
    t_hess = float(np.sum(w * hessian_sq_phys(u)))
    t_grad4 = float(np.sum(w * grad_sq_phys(u) ** 2))
    return t_hess + np.sqrt(max(t_grad4, 0.0))


def ball_sums(u: Field, R: float):
    """Per-center ball sums of the two energy densities, via zero-padded
    convolution with the ball stencil.  Returns ``(hess, grad4)`` arrays
    over all physical centers."""
    from scipy.ndimage import convolve

    grid = u.grid
    w = grid.quad_weights()
    dens_h = w * hessian_sq_phys(u)
    dens_g = w * grad_sq_phys(u) ** 2
    kernel = _ball_kernel(grid, R)
    hess = convolve(dens_h, kernel, mode="constant", cval=0.0)
    grad4 = convolve(dens_g, kernel, mode="constant", cval=0.0)
    return hess, grad4


def _ball_kernel(grid: Grid, R: float) -> np.ndarray:
    reach = int(np.floor(R / grid.h + 1e-9))
    axes = [np.arange(-reach, reach + 1) * grid.h] * grid.d
    mesh = np.meshgrid(*axes, indexing="ij")
    dist2 = sum(x**2 for x in mesh)
    kernel = (dist2 <= R * R * (1.0 + 1e-12) + 1e-300).astype(float)
    if not kernel.any():
        raise EmptyBall(f"radius {R} below grid resolution")
    return kernel


def max_local_energy(u: Field, R: float) -> float:
    hess, grad4 = ball_sums(u, R)
    return float(np.max(hess + np.sqrt(np.maximum(grad4, 0.0))))
