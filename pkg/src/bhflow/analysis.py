"""Measurements over fields and trajectories.

Everything proved about the flow is recast here as something a test can
evaluate: energy ledgers, the dissipation identity, local-energy
concentration detection, blow-up rescaling, the small-energy gap
experiment, interpolation-inequality probes, and the quantization audit.
All operations are read-only over immutable snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manifold as mf
from .energies import (
    ball_sums,
    deriv_sq_phys,
    energy_f2,
    global_energy,
    grad_sq_phys,
    hessian_sq_phys,
    invalid_rim,
    local_energy,
    _rim_mask,
)
from .errors import (
    DegenerateRHS,
    NonTangentDirection,
    RadiusBelowResolution,
)
from .flow import Trajectory, bilaplacian, nonlinearity_f, tension
from .grid import Field, Grid, Topology, ball_nodes, integrate_values

__all__ = [
    "AnalysisConfig",
    "BlowupCandidate",
    "energy_f2",
    "energy_e2",
    "local_energy",
    "global_energy",
    "energy_identity_residual",
    "gradient_consistency",
    "interpolation_probe",
    "detect_concentration",
    "cluster_exceedances",
    "blowup_extract",
    "biharmonic_residual",
    "quantization_check",
    "gap_experiment",
]

RESCALE_WINDOW_NODES = 33
RESCALE_WINDOW_HALFWIDTH = 2.0  # in rescaled coordinates


@dataclass(frozen=True)
class AnalysisConfig:
    """Concentration thresholds.  The constants exist but carry no values
    in the theory; these defaults are declared tuning parameters."""

    epsilon1: float = 0.05
    epsilon0: float = 0.02
    C0: int = 16
    R_detect: float = 0.0  # 0 means "8 grid spacings", resolved at use
    probe_count: int = 100

    def __post_init__(self):
        if not 0 < self.epsilon0 <= self.epsilon1:
            raise ValueError("need 0 < epsilon0 <= epsilon1")
        if self.C0 < 1:
            raise ValueError("covering constant C0 must be >= 1")

    def detect_radius(self, grid: Grid) -> float:
        r = self.R_detect if self.R_detect > 0 else 8.0 * grid.h
        if r < 2.0 * grid.h:
            raise ValueError("detection radius below 2h is noise")
        return r


@dataclass
class BlowupCandidate:
    """A concentration event with its rescaled neighborhood.

    ``rescaled_field`` lives on a standard 33-node box grid; grid
    coordinate ``xi`` maps to the physical point
    ``center + radius * halfwidth * (2 xi - 1)``.
    """

    center: tuple
    time: float
    radius: float
    rescaled_field: Field
    local_energy_at_extraction: float
    boundary_distance_ratio: float
    window_halfwidth: float = RESCALE_WINDOW_HALFWIDTH


# --- energies and residuals ---------------------------------------------------


def energy_e2(u: Field, m: mf.TargetManifold) -> float:
    """Integral of the squared tension field."""
    tau = tension(u, m)
    dens = np.sum(tau.phys**2, axis=-1)
    return float(np.sum(dens * u.grid.quad_weights()))


def energy_identity_residual(traj: Trajectory | object) -> float:
    """Defect of the dissipation identity, relative to the initial energy.

    The ledger accumulates ``2 int int |u_t|^2`` already, so the exact
    flow satisfies ``dissipation + f2(T) - f2(0) = 0`` and everything
    reported here is discretization error.
    """
    ledger = traj.ledger
    defect = abs(ledger.dissipation + ledger.f2_last - ledger.f2_initial)
    return defect / max(ledger.f2_initial, np.finfo(float).eps)


def biharmonic_residual(u: Field, m: mf.TargetManifold) -> float:
    """Discrete L2 norm of the tangential part of ``bilap(u) + f(u)``.

    The constrained critical-point condition lives in the tangent
    spaces, so the normal component (pure discretization leakage of an
    identity) is projected out.
    """
    r = bilaplacian(u).phys + nonlinearity_f(u, m).phys
    rt = mf.tangential_project(m, u.phys, r)
    dens = np.sum(rt * rt, axis=-1)
    return float(np.sqrt(integrate_values(u.grid, dens)))


def gradient_consistency(
    u: Field,
    m: mf.TargetManifold,
    phi: Field,
    eps_fd: float,
) -> float:
    """Relative gap between the centered difference of the bending energy
    along a projected perturbation and the assembled first variation
    ``2 int <bilap u + f(u), phi>``.

    ``phi`` must be tangential along ``u`` and vanish on the boundary
    band that feeds the ghost closure (three node rows on clamped
    grids), so no boundary terms appear in the discrete integration by
    parts.
    """
    grid = u.grid
    leak = mf._normal_leak(m, u.phys, phi.phys)
    if leak > 1e-8:
        raise NonTangentDirection(f"phi has normal leakage {leak:.2e}")
    if grid.topology is Topology.BOX_CLAMPED:
        band = _rim_mask(grid, 3)
        off = np.max(np.abs(phi.phys[~band])) if (~band).any() else 0.0
        if off > 0.0:
            raise NonTangentDirection(
                "phi must vanish on the three boundary node rows"
            )

    if float(np.max(np.abs(phi.phys))) == 0.0:
        return 0.0

    def f2_of(sign: float) -> float:
        vals = u.values + sign * eps_fd * phi.values
        pert = Field(grid, vals.copy(), ghosts_valid=u.ghosts_valid)
        pert.values[grid.phys] = mf.project(m, vals[grid.phys])
        return energy_f2(pert)

    fd = (f2_of(+1.0) - f2_of(-1.0)) / (2.0 * eps_fd)
    pairing = np.sum(
        (bilaplacian(u).phys + nonlinearity_f(u, m).phys) * phi.phys, axis=-1
    )
    analytic = 2.0 * integrate_values(grid, pairing)
    return abs(fd - analytic) / max(abs(analytic), np.finfo(float).tiny)


# --- interpolation-inequality probes ------------------------------------------

_INEQUALITIES = ("ine4", "ine5", "ine6", "ine7")


def interpolation_probe(u: Field, R: float, which: str, x0=None) -> float:
    """Empirical constant LHS/RHS of one interpolation inequality on the
    ball of radius ``R`` (constants stripped from the right side).

    Raises ``DegenerateRHS`` when the right side vanishes against a
    nonzero left side, which would falsify the inequality.
    """
    if which not in _INEQUALITIES:
        raise ValueError(f"unknown inequality {which!r}")
    grid = u.grid
    if x0 is None:
        x0 = np.full(grid.d, 0.5)
    mask = ball_nodes(grid, x0, R)
    rim = invalid_rim(grid, 4)
    if rim and not bool(np.all(_rim_mask(grid, rim)[mask])):
        raise ValueError(
            "ball touches the boundary rim where fourth derivatives are"
            " not resolvable; shrink R or use a periodic grid"
        )
    w = grid.quad_weights()

    def mass(dens: np.ndarray) -> float:
        return float(np.sum(mask * w * dens))

    g1 = grad_sq_phys(u)
    d2 = deriv_sq_phys(u, 2)
    d3 = deriv_sq_phys(u, 3)
    d4 = deriv_sq_phys(u, 4)

    i_g4 = mass(g1**2)
    i_g8 = mass(g1**4)
    i_d2 = mass(d2)
    i_d2sq = mass(d2**2)
    i_d3 = mass(d3)
    i_d3sq = mass(d3**2)
    i_d4 = mass(d4)

    if which == "ine4":
        lhs = i_d3
        rhs = R**2 * i_d4 + i_d2 / R**2
    elif which == "ine5":
        lhs = np.sqrt(i_d3sq)
        rhs = i_d4 + i_d2 / R**4
    elif which == "ine6":
        lhs = i_d2sq
        rhs = i_d2 * (i_d4 + i_d2 / R**4)
    else:  # ine7
        lhs = i_g8
        rhs = i_g4 * (i_d2 * (i_d4 + i_d2 / R**4) + i_g4 / R**4)

    if rhs == 0.0:
        if lhs > 1e-14:
            raise DegenerateRHS(f"{which}: RHS = 0 while LHS = {lhs:.3e}")
        return 0.0
    return lhs / rhs


# --- concentration detection and blow-up --------------------------------------


def detect_concentration(u: Field, cfg: AnalysisConfig) -> list[tuple[tuple, float]]:
    """All node centers whose ball energy exceeds the threshold, sorted
    by energy descending with lexicographic node order breaking ties."""
    grid = u.grid
    R = cfg.detect_radius(grid)
    hess, grad4 = ball_sums(u, R)
    E = hess + np.sqrt(np.maximum(grad4, 0.0))
    exceed = np.argwhere(E > cfg.epsilon1)
    if exceed.size == 0:
        return []
    coords = grid.node_coords()
    entries = []
    for idx in map(tuple, exceed):
        entries.append((tuple(float(c) for c in coords[idx]), float(E[idx]), idx))
    entries.sort(key=lambda e: (-e[1], e[2]))
    return [(c, val) for c, val, _ in entries]


def cluster_exceedances(
    hits: list[tuple[tuple, float]], radius: float
) -> list[tuple[tuple, float]]:
    """Greedy clustering of detector output: strongest hit absorbs every
    weaker hit within ``radius``; deterministic by construction."""
    clusters: list[tuple[np.ndarray, float]] = []
    for center, energy in hits:
        c = np.asarray(center)
        if any(np.linalg.norm(c - kc) <= radius for kc, _ in clusters):
            continue
        clusters.append((c, energy))
    return [(tuple(float(x) for x in c), e) for c, e in clusters]


def _event_field(traj, event) -> tuple[Field, float]:
    if isinstance(traj, Field):
        return traj, float(event.get("t", 0.0))
    t = float(event["t"])
    best = min(traj.snapshots, key=lambda s: abs(s.t - t))
    return best.u, best.t


def blowup_extract(traj, event: dict, cfg: AnalysisConfig) -> BlowupCandidate:
    """Select the concentration radius and rescale the neighborhood.

    The radius solves ``E(u; B_r(center)) = epsilon1 / C0`` by bisection
    on the exactly monotone discrete ball energy; the window is then
    resampled by multilinear interpolation onto the fixed 33-node
    rescaled lattice so candidates are comparable across events.
    """
    from scipy.interpolate import RegularGridInterpolator

    u, t = _event_field(traj, event)
    grid = u.grid
    x0 = np.asarray(event["center"], dtype=float)
    target = cfg.epsilon1 / cfg.C0

    r_lo = 2.0 * grid.h
    r_hi = float(np.sqrt(grid.d))  # box diameter

    # the bisection evaluates the ball energy many times; fix the
    # densities once and reuse them
    w = grid.quad_weights()
    dens_h = w * hessian_sq_phys(u)
    dens_g = w * grad_sq_phys(u) ** 2
    dist2 = np.sum((grid.node_coords() - x0) ** 2, axis=-1)

    def E(r: float) -> float:
        mask = dist2 <= r * r * (1.0 + 1e-12) + 1e-300
        return float(np.sum(dens_h, where=mask)) + np.sqrt(
            max(float(np.sum(dens_g, where=mask)), 0.0)
        )

    e_lo, e_hi = E(r_lo), E(r_hi)
    if e_hi < target:
        raise RadiusBelowResolution(
            f"no candidate: ball energy peaks at {e_hi:.3e} < target {target:.3e}"
        )
    if e_lo > target:
        raise RadiusBelowResolution(
            f"selection radius below 2h: E(2h) = {e_lo:.3e} > target {target:.3e}"
        )

    best_r, best_e = (r_lo, e_lo) if abs(e_lo - target) < abs(e_hi - target) else (
        r_hi,
        e_hi,
    )
    lo, hi = r_lo, r_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        e_mid = E(mid)
        if abs(e_mid - target) < abs(best_e - target):
            best_r, best_e = mid, e_mid
        if e_mid < target:
            lo = mid
        else:
            hi = mid
    if abs(best_e - target) > 0.05 * target:
        raise RadiusBelowResolution(
            f"selection equation unattainable: closest E = {best_e:.3e}"
            f" vs target {target:.3e}"
        )

    radius = best_r
    axes = [grid.axis_coords()] * grid.d
    interp = RegularGridInterpolator(axes, u.phys, method="linear")
    wgrid = Grid(grid.d, RESCALE_WINDOW_NODES, Topology.BOX_CLAMPED)
    xi = wgrid.node_coords()  # in [0,1]^d
    pts = x0 + radius * RESCALE_WINDOW_HALFWIDTH * (2.0 * xi - 1.0)
    pts = np.clip(pts, 0.0, 1.0)
    vals = np.zeros(wgrid.shape + (u.L,))
    vals[wgrid.phys] = interp(pts.reshape(-1, grid.d)).reshape(
        (wgrid.n,) * grid.d + (u.L,)
    )
    rescaled = Field(wgrid, vals, ghosts_valid=False)

    dist_boundary = float(min(np.min(x0), np.min(1.0 - x0)))
    return BlowupCandidate(
        center=tuple(float(c) for c in x0),
        time=t,
        radius=radius,
        rescaled_field=rescaled,
        local_energy_at_extraction=best_e,
        boundary_distance_ratio=dist_boundary / radius,
    )


# --- audits and experiments ---------------------------------------------------


def quantization_check(events: list[dict], f2_initial: float, cfg: AnalysisConfig) -> dict:
    """Count audit: the number of singular events cannot exceed the
    initial energy divided by the per-event quantum.  Per-event drops
    below the quantum are flagged as warnings, not failures, because the
    discrete flow only approximates the exact drop."""
    quantum = cfg.epsilon0**2
    k_bound = int(np.floor(f2_initial / quantum))
    k_observed = len(events)
    drops = []
    for ev in events:
        drop = float(ev.get("f2_before", np.nan)) - float(ev.get("f2_after", np.nan))
        drops.append({"drop": drop, "meets_quantum": bool(drop >= quantum)})
    return {
        "K_observed": k_observed,
        "K_bound": k_bound,
        "ok": k_observed <= k_bound,
        "per_event_drop": drops,
    }


def gap_experiment(
    config,
    m: mf.TargetManifold,
    bc,
    amplitude: float,
    u0: Field | None = None,
) -> dict:
    """Flow a small perturbation of a constant map with constant trace and
    zero slope until the bending energy dies or time runs out."""
    from .flow import FlowParams, initial_state, step_imex
    from .sampling import RandomFieldSpec, generate_random_field

    grid = Grid(config.grid_d, config.grid_n, Topology(config.grid_topology))
    params = FlowParams(
        c_cfl=config.flow_c_cfl,
        tol_cg=config.flow_tol_cg,
        tol_energy_rel=config.flow_tol_energy,
    )
    const_point = np.asarray(next(iter(bc.g.values())), dtype=float).reshape(-1, m.L)[0]
    if u0 is None:
        spec = RandomFieldSpec(
            seed=config.seed,
            band_limit=config.init_band_limit,
            amplitude=amplitude,
            boundary_decay_order=max(2, config.init_decay_order),
            offset=const_point,
        )
        u0 = generate_random_field(spec, grid, m)

    initial_e = global_energy(u0)
    dt0 = config.flow_dt_init if config.flow_dt_init > 0 else params.dt_max(grid)
    state = initial_state(u0, bc, min(dt0, params.dt_max(grid)))
    while state.t < config.flow_T_final and state.ledger.f2_last >= 1e-12:
        state = step_imex(state, m, bc, params)

    dev = float(np.max(np.linalg.norm(state.u.phys - const_point, axis=-1)))
    return {
        "converged_to_constant": bool(state.ledger.f2_last < 1e-12),
        "final_sup_deviation": dev,
        "f2_final": state.ledger.f2_last,
        "initial_concentration_energy": initial_e,
        "steps": state.step_index,
        "state": state,
    }
