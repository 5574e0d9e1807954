"""Structured-lattice discretization of the unit box or torus.

A ``Grid`` covers ``[0, 1]^d`` with ``n`` nodes per axis.  Clamped box
grids store two ghost layers per face so that the composed bilaplacian
stencil reaches every physical node; periodic grids wrap around and
carry no ghosts.  ``Field`` values are ``R^L``-valued node data laid out
as ``(*spatial, L)`` arrays in C order, the canonical node ordering used
by every reduction and by the snapshot format.

Operator conventions:

* first derivatives are second-order central differences;
* the laplacian is the compact ``2d + 1``-point stencil;
* the bilaplacian is the laplacian applied twice (13-point in 2D);
* quadrature is the trapezoid-weighted ``h^d`` sum (plain ``h^d`` sum on
  periodic grids), exact on constants.

On box grids an operator output is only meaningful at physical nodes;
the ghost region of the returned field is zeroed and flagged stale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import EmptyBall, StaleGhosts, TopologyMismatch

PAD = 2  # ghost layers per face on clamped grids


class Topology(Enum):
    BOX_CLAMPED = "box"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Grid:
    """Uniform lattice on the unit box or torus.

    ``n`` counts physical nodes per axis: a box grid spans the closed
    interval with spacing ``1/(n-1)``, a periodic grid has spacing
    ``1/n`` with node ``n`` identified with node 0.
    """

    d: int
    n: int
    topology: Topology

    def __post_init__(self):
        if not 1 <= self.d <= 4:
            raise ValueError("spatial dimension must lie in 1..4")
        if self.n < 8:
            raise ValueError("need at least 8 nodes per axis")

    @property
    def h(self) -> float:
        if self.topology is Topology.BOX_CLAMPED:
            return 1.0 / (self.n - 1)
        return 1.0 / self.n

    @property
    def pad(self) -> int:
        return PAD if self.topology is Topology.BOX_CLAMPED else 0

    @property
    def shape(self) -> tuple[int, ...]:
        """Storage shape of one scalar component, ghosts included."""
        return (self.n + 2 * self.pad,) * self.d

    @property
    def phys(self) -> tuple[slice, ...]:
        """Slices selecting the physical nodes out of the storage array."""
        if self.pad == 0:
            return (slice(None),) * self.d
        return (slice(self.pad, self.pad + self.n),) * self.d

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def node_coords(self) -> np.ndarray:
        """Physical node coordinates, shape ``(*spatial, d)``."""
        axes = np.meshgrid(*([self.axis_coords()] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def quad_weights(self) -> np.ndarray:
        return _quad_weights(self.d, self.n, self.topology)


@lru_cache(maxsize=None)
def _quad_weights(d: int, n: int, topology: Topology) -> np.ndarray:
    if topology is Topology.PERIODIC:
        w = np.full((n,) * d, (1.0 / n) ** d)
        w.flags.writeable = False
        return w
    h = 1.0 / (n - 1)
    w1 = np.ones(n)
    w1[0] = w1[-1] = 0.5
    w = np.ones((n,) * d)
    for a in range(d):
        shape = [1] * d
        shape[a] = n
        w = w * w1.reshape(shape)
    w *= h**d
    w.flags.writeable = False
    return w


@dataclass
class Field:
    """``R^L``-valued node data on a grid.

    ``values`` has shape ``grid.shape + (L,)``.  ``ghosts_valid`` tracks
    whether the ghost layers are consistent with some boundary data; it
    is always true on periodic grids.
    """

    grid: Grid
    values: np.ndarray
    ghosts_valid: bool = field(default=True)

    def __post_init__(self):
        expected = self.grid.shape
        if self.values.shape[:-1] != expected:
            raise ValueError(
                f"values shape {self.values.shape[:-1]} != grid shape {expected}"
            )
        if self.grid.pad == 0:
            self.ghosts_valid = True

    @property
    def L(self) -> int:
        return self.values.shape[-1]

    @property
    def phys(self) -> np.ndarray:
        """View of the physical-node values, shape ``(n,)*d + (L,)``."""
        return self.values[self.grid.phys]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.ghosts_valid)

    def require_ghosts(self):
        if self.grid.pad and not self.ghosts_valid:
            raise StaleGhosts("apply_boundary before differentiating this field")


@dataclass
class VectorField:
    """One field per spatial axis, stacked on a leading axis."""

    grid: Grid
    values: np.ndarray  # (d, *spatial, L)

    @property
    def L(self) -> int:
        return self.values.shape[-1]

    def component(self, a: int) -> np.ndarray:
        return self.values[a]


def field_from_function(grid: Grid, fn, L: int) -> Field:
    """Sample ``fn(x) -> R^L`` at physical nodes; ghosts start zeroed."""
    vals = np.zeros(grid.shape + (L,))
    vals[grid.phys] = np.asarray(fn(grid.node_coords()), dtype=float)
    return Field(grid, vals, ghosts_valid=(grid.pad == 0))


def constant_field(grid: Grid, point: np.ndarray) -> Field:
    point = np.asarray(point, dtype=float)
    vals = np.tile(point, grid.shape + (1,))
    return Field(grid, vals, ghosts_valid=True)


# --- boundary data ----------------------------------------------------------


@dataclass
class BoundaryData:
    """Clamped Dirichlet pair: trace ``g`` and outward normal slope ``h``.

    Faces are keyed by ``(axis, side)`` with ``side`` 0 at coordinate 0
    and 1 at coordinate 1.  Each face carries an ``(n,)*(d-1) + (L,)``
    array over the full face lattice, edges included; adjacent faces
    must agree on shared edge nodes.
    """

    g: dict[tuple[int, int], np.ndarray]
    h_normal: dict[tuple[int, int], np.ndarray]

    def validate(self, grid: Grid, manifold=None):
        from . import manifold as mf

        for key in _faces(grid):
            if key not in self.g or key not in self.h_normal:
                raise ValueError(f"missing boundary data for face {key}")
        if manifold is not None:
            for key in _faces(grid):
                mf._check_on_manifold(manifold, self.g[key], tol=1e-10)
                leak = mf._normal_leak(manifold, self.g[key], self.h_normal[key])
                if leak > 1e-8:
                    raise ValueError(
                        f"h_normal not tangential on face {key}: leak {leak:.2e}"
                    )
        _check_edge_compatibility(grid, self.g)


def _faces(grid: Grid) -> list[tuple[int, int]]:
    return [(a, s) for a in range(grid.d) for s in (0, 1)]


def _check_edge_compatibility(grid: Grid, g: dict):
    for (a1, s1), arr1 in g.items():
        for (a2, s2), arr2 in g.items():
            if a1 >= a2:
                continue
            # restrict face (a1,s1) to its edge with face (a2,s2) and vice versa
            idx1 = [slice(None)] * (grid.d - 1)
            idx1[a2 - 1] = -1 if s2 else 0
            idx2 = [slice(None)] * (grid.d - 1)
            idx2[a1] = -1 if s1 else 0
            if not np.array_equal(arr1[tuple(idx1)], arr2[tuple(idx2)]):
                raise ValueError(
                    f"faces {(a1, s1)} and {(a2, s2)} disagree on their shared edge"
                )


def constant_boundary(grid: Grid, point: np.ndarray) -> BoundaryData:
    """Constant trace with zero normal slope on every face."""
    point = np.asarray(point, dtype=float)
    face_shape = (grid.n,) * (grid.d - 1)
    g = {}
    hn = {}
    for key in _faces(grid):
        g[key] = np.tile(point, face_shape + (1,))
        hn[key] = np.zeros(face_shape + (point.size,))
    return BoundaryData(g, hn)


def boundary_from_functions(grid: Grid, trace_fn, slope_fn, L: int) -> BoundaryData:
    """Sample analytic trace and outward-normal-slope functions per face.

    ``trace_fn(x)`` and ``slope_fn(x, axis, side)`` take coordinate
    arrays of shape ``(..., d)``.
    """
    coords = grid.node_coords()
    g = {}
    hn = {}
    for (a, s) in _faces(grid):
        idx = [slice(None)] * grid.d
        idx[a] = -1 if s else 0
        face_x = coords[tuple(idx)]
        g[(a, s)] = np.asarray(trace_fn(face_x), dtype=float).reshape(
            face_x.shape[:-1] + (L,)
        )
        hn[(a, s)] = np.asarray(slope_fn(face_x, a, s), dtype=float).reshape(
            face_x.shape[:-1] + (L,)
        )
    return BoundaryData(g, hn)


def apply_boundary(u: Field, bc: BoundaryData) -> Field:
    """Write the trace onto the face nodes and rebuild both ghost layers.

    Ghosts extend each face by reflection about its boundary node with
    the prescribed outward slope: ``ghost_k = interior_k + 2 k h * h_n``,
    which makes the centered normal-derivative stencil return ``h_n``
    exactly and reproduces affine fields to machine precision.  Ghost
    nodes outside several faces at once (edge and corner blocks) average
    the extrapolations of the adjacent faces.
    """
    grid = u.grid
    if grid.topology is not Topology.BOX_CLAMPED:
        raise TopologyMismatch("apply_boundary only applies to clamped box grids")
    out = u.values.copy()
    _fill_ghosts(out, grid, bc)
    return Field(grid, out, ghosts_valid=True)


@lru_cache(maxsize=None)
def _ghost_plan(grid: Grid):
    """Precomputed block slices for the homogeneous ghost fill: for every
    ghost block (outside ``m`` axes) the destination, its mirror sources,
    and the averaging count."""
    from itertools import combinations, product

    d, n, p = grid.d, grid.n, grid.pad
    phys = slice(p, p + n)
    ghost_rng = {0: slice(0, p), 1: slice(p + n, n + 2 * p)}
    mirror_rng = {0: slice(p + 1, p + 1 + p), 1: slice(n - 1, n - 1 + p)}
    boundary = []
    for a in range(d):
        for s in (0, 1):
            idx = [phys] * d + [slice(None)]
            idx[a] = p + (n - 1) if s else p
            boundary.append(tuple(idx))
    blocks = []
    for m in range(1, d + 1):
        for axes in combinations(range(d), m):
            for sides in product((0, 1), repeat=m):
                block = [phys] * d + [slice(None)]
                for a, s in zip(axes, sides):
                    block[a] = ghost_rng[s]
                sources = []
                for a, s in zip(axes, sides):
                    src = list(block)
                    src[a] = mirror_rng[s]
                    sources.append((tuple(src), a))
                blocks.append((tuple(block), tuple(sources), m))
    return tuple(boundary), tuple(blocks)


def _fill_ghosts_homogeneous(arr: np.ndarray, grid: Grid):
    """Fast path of ``_fill_ghosts`` for zero trace and zero slope."""
    boundary, blocks = _ghost_plan(grid)
    for idx in boundary:
        arr[idx] = 0.0
    for block, sources, m in blocks:
        accum = None
        for src, a in sources:
            cand = np.flip(arr[src], axis=a)
            accum = cand if accum is None else accum + cand
        arr[block] = accum if m == 1 else accum / m


def _fill_ghosts(arr: np.ndarray, grid: Grid, bc: BoundaryData | None):
    """In-place boundary write + ghost fill; ``bc=None`` means the
    homogeneous clamped pair (zero trace, zero slope).

    The storage partitions per axis into (ghost0 | physical | ghost1)
    blocks.  Blocks outside exactly ``m`` axes are filled in sweep ``m``
    by averaging, over each outside axis, the mirror of the block one
    sweep earlier plus the prescribed-slope term ``2 k h * h_n``; the
    sources of sweep ``m`` are therefore always already final.
    """
    from itertools import combinations, product

    if bc is None:
        _fill_ghosts_homogeneous(arr, grid)
        return

    d, n, h, p = grid.d, grid.n, grid.h, grid.pad
    size = n + 2 * p
    phys = slice(p, p + n)
    ghost_rng = {0: slice(0, p), 1: slice(p + n, size)}
    mirror_rng = {0: slice(p + 1, p + 1 + p), 1: slice(n - 1, n - 1 + p)}
    # slope factors 2*k*h per ghost layer, in ascending storage order
    factors = {0: np.array([4.0 * h, 2.0 * h]), 1: np.array([2.0 * h, 4.0 * h])}

    # boundary trace
    for a in range(d):
        for s in (0, 1):
            idx = [phys] * d + [slice(None)]
            idx[a] = p + (n - 1) if s else p
            if bc is None:
                arr[tuple(idx)] = 0.0
            else:
                arr[tuple(idx)] = bc.g[(a, s)]

    slopes = None
    if bc is not None:
        pads = [(p, p)] * (d - 1) + [(0, 0)]
        slopes = {
            key: np.pad(bc.h_normal[key], pads, mode="edge") for key in _faces(grid)
        }

    for m in range(1, d + 1):
        for axes in combinations(range(d), m):
            for sides in product((0, 1), repeat=m):
                block = [phys] * d + [slice(None)]
                for a, s in zip(axes, sides):
                    block[a] = ghost_rng[s]
                accum = None
                for a, s in zip(axes, sides):
                    src = list(block)
                    src[a] = mirror_rng[s]
                    cand = np.flip(arr[tuple(src)], axis=a)
                    if slopes is not None:
                        tang = tuple(block[ax] for ax in range(d) if ax != a)
                        slope = slopes[(a, s)][tang + (slice(None),)]
                        slope = np.expand_dims(slope, axis=a)
                        fac_shape = [1] * (d + 1)
                        fac_shape[a] = p
                        cand = cand + factors[s].reshape(fac_shape) * slope
                    accum = cand if accum is None else accum + cand
                arr[tuple(block)] = accum / m


# --- difference operators ---------------------------------------------------


def _central(values: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)
    out = np.zeros_like(values)
    inner = [slice(None)] * values.ndim
    plus = [slice(None)] * values.ndim
    minus = [slice(None)] * values.ndim
    inner[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(0, -2)
    out[tuple(inner)] = (values[tuple(plus)] - values[tuple(minus)]) / (2.0 * h)
    return out


def _second(values: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (
            np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)
        ) / (h * h)
    out = np.zeros_like(values)
    inner = [slice(None)] * values.ndim
    plus = [slice(None)] * values.ndim
    minus = [slice(None)] * values.ndim
    inner[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(0, -2)
    out[tuple(inner)] = (
        values[tuple(plus)] - 2.0 * values[tuple(inner)] + values[tuple(minus)]
    ) / (h * h)
    return out


def _laplacian_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    per = grid.topology is Topology.PERIODIC
    out = _second(values, 0, grid.h, per)
    for a in range(1, grid.d):
        out += _second(values, a, grid.h, per)
    return out


@lru_cache(maxsize=None)
def _lap_slices(d: int):
    m1 = tuple(slice(1, -1) for _ in range(d))
    per_axis = []
    for a in range(d):
        plus = list(m1)
        plus[a] = slice(2, None)
        minus = list(m1)
        minus[a] = slice(0, -2)
        per_axis.append((tuple(plus), tuple(minus)))
    return m1, tuple(per_axis)


def _lap_into(values: np.ndarray, grid: Grid, out: np.ndarray):
    """Compact laplacian written into the margin-1 box of a preallocated
    array whose border ring the caller keeps zeroed (box grids only)."""
    m1, per_axis = _lap_slices(grid.d)
    acc = None
    for plus, minus in per_axis:
        term = values[plus] + values[minus]
        acc = term if acc is None else acc + term
    acc -= (2.0 * grid.d) * values[m1]
    acc /= grid.h * grid.h
    out[m1] = acc


def _zero_nonphysical(values: np.ndarray, grid: Grid) -> np.ndarray:
    if grid.pad == 0:
        return values
    keep = values[grid.phys].copy()
    values[...] = 0.0
    values[grid.phys] = keep
    return values


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{what} produced non-finite entries")


def gradient(u: Field) -> VectorField:
    """Componentwise central difference along each axis; exact on affine
    fields."""
    u.require_ghosts()
    per = u.grid.topology is Topology.PERIODIC
    comps = [
        _zero_nonphysical(_central(u.values, a, u.grid.h, per), u.grid)
        for a in range(u.grid.d)
    ]
    out = np.stack(comps, axis=0)
    _check_finite(out, "gradient")
    return VectorField(u.grid, out)


def laplacian(u: Field) -> Field:
    """Compact ``2d+1``-point laplacian; exact on quadratics."""
    u.require_ghosts()
    vals = _zero_nonphysical(_laplacian_values(u.values, u.grid), u.grid)
    _check_finite(vals, "laplacian")
    return Field(u.grid, vals, ghosts_valid=(u.grid.pad == 0))


def bilaplacian(u: Field) -> Field:
    """Laplacian applied twice; annihilates cubics exactly."""
    u.require_ghosts()
    once = _laplacian_values(u.values, u.grid)
    twice = _zero_nonphysical(_laplacian_values(once, u.grid), u.grid)
    _check_finite(twice, "bilaplacian")
    return Field(u.grid, twice, ghosts_valid=(u.grid.pad == 0))


def divergence(V: VectorField) -> Field:
    """Central difference of component ``k`` along axis ``k``, summed."""
    grid = V.grid
    per = grid.topology is Topology.PERIODIC
    out = _central(V.values[0], 0, grid.h, per)
    for a in range(1, grid.d):
        out += _central(V.values[a], a, grid.h, per)
    out = _zero_nonphysical(out, grid)
    _check_finite(out, "divergence")
    return Field(grid, out, ghosts_valid=(grid.pad == 0))


# --- quadrature and balls ---------------------------------------------------


def integrate_values(grid: Grid, scalar_phys: np.ndarray) -> float:
    """Quadrature of a scalar sampled at physical nodes (shape ``(n,)*d``)."""
    if scalar_phys.shape != (grid.n,) * grid.d:
        raise ValueError("expected physical-node scalar samples")
    return float(np.sum(scalar_phys * grid.quad_weights()))


def integrate(f: Field) -> float:
    """Quadrature of a scalar field (``L == 1``)."""
    if f.L != 1:
        raise ValueError("integrate expects a scalar field; reduce components first")
    return integrate_values(f.grid, f.phys[..., 0])


def ball_nodes(grid: Grid, x0: np.ndarray, R: float) -> np.ndarray:
    """Boolean mask over physical nodes with ``|x - x0| <= R``.

    Distances are Euclidean in box coordinates; the closed ball is
    intersected with the closed box (periodic grids are treated through
    their fundamental domain, without wrap-around).
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (grid.d,):
        raise ValueError(f"center must have shape ({grid.d},)")
    coords = grid.node_coords()
    dist2 = np.sum((coords - x0) ** 2, axis=-1)
    mask = dist2 <= R * R * (1.0 + 1e-12) + 1e-300
    if not mask.any():
        raise EmptyBall(f"no node within distance {R} of {x0}")
    return mask
