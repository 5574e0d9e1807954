"""Seeded random fields and analytic samples used as initial data.

A random field is a band-limited trigonometric sum with coefficients
drawn from a seeded generator, damped by a polynomial boundary window on
clamped grids, and projected onto the target nodewise.  The result is a
deterministic function of (seed, grid, spec): two calls with the same
inputs produce bitwise-identical fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from itertools import product

import numpy as np

from . import manifold as mf
from .grid import Field, Grid, Topology, apply_boundary, constant_boundary


@dataclass
class RandomFieldSpec:
    seed: int
    band_limit: int = 4
    amplitude: float = 1.0
    boundary_decay_order: int = 2
    offset: np.ndarray | None = None  # defaults to the last coordinate axis

    def __post_init__(self):
        if self.band_limit < 1:
            raise ValueError("band_limit must be >= 1")
        if self.boundary_decay_order < 2:
            raise ValueError("boundary decay order must be >= 2")


def _default_offset(L: int) -> np.ndarray:
    e = np.zeros(L)
    e[-1] = 1.0
    return e


def boundary_window(grid: Grid, order: int) -> np.ndarray:
    """Separable polynomial window vanishing to the given order at every
    face, normalized to 1 at the domain center.  Identity on periodic
    grids."""
    if grid.topology is Topology.PERIODIC:
        return np.ones((grid.n,) * grid.d)
    x = grid.axis_coords()
    w1 = (4.0 * x * (1.0 - x)) ** order
    w = np.ones((grid.n,) * grid.d)
    for a in range(grid.d):
        shape = [1] * grid.d
        shape[a] = grid.n
        w = w * w1.reshape(shape)
    return w


def trig_sum_values(
    spec: RandomFieldSpec, grid: Grid, L: int, rng: np.random.Generator
) -> np.ndarray:
    """The raw band-limited sum at physical nodes, shape ``(n,)*d + (L,)``.

    One cosine and one sine coefficient vector per wavevector in
    ``{0..band_limit}^d`` (zero mode gets only the cosine), drawn in a
    fixed lexicographic order so the construction is reproducible."""
    coords = grid.node_coords()
    out = np.zeros((grid.n,) * grid.d + (L,))
    norm = (spec.band_limit + 1) ** (grid.d / 2.0)
    for k in product(range(spec.band_limit + 1), repeat=grid.d):
        kv = np.asarray(k, dtype=float)
        phase = 2.0 * np.pi * np.tensordot(coords, kv, axes=([-1], [0]))
        c_cos = rng.standard_normal(L) / norm
        out += np.cos(phase)[..., None] * c_cos
        if any(k):
            c_sin = rng.standard_normal(L) / norm
            out += np.sin(phase)[..., None] * c_sin
    return out


def generate_random_field(
    spec: RandomFieldSpec, grid: Grid, m: mf.TargetManifold
) -> Field:
    """Seeded band-limited field, boundary-damped and projected onto the
    target.  ``amplitude = 0`` yields the constant map at the projected
    offset point."""
    offset = spec.offset if spec.offset is not None else _default_offset(m.L)
    offset = np.asarray(offset, dtype=float)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    raw = trig_sum_values(spec, grid, m.L, rng)
    window = boundary_window(grid, spec.boundary_decay_order)
    phys = offset + spec.amplitude * window[..., None] * raw
    vals = np.zeros(grid.shape + (m.L,))
    vals[grid.phys] = mf.project(m, phys)
    u = Field(grid, vals, ghosts_valid=(grid.pad == 0))
    if grid.topology is Topology.BOX_CLAMPED:
        u = apply_boundary(u, constant_boundary(grid, mf.project(m, offset)))
    return u


def gaussian_bump_fn(center, width: float, amplitude: float, L: int, axis: int = 0):
    """Analytic radial bump ``A exp(-|x-c|^2 / (2 w^2))`` worn on one
    ambient component; usable as a ``field_from_function`` integrand and
    by quadrature oracles."""
    c = np.asarray(center, dtype=float)

    def fn(x):
        rho2 = np.sum((x - c) ** 2, axis=-1)
        out = np.zeros(x.shape[:-1] + (L,))
        out[..., axis] = amplitude * np.exp(-rho2 / (2.0 * width**2))
        return out

    return fn
