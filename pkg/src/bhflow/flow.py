"""Time integration of the constrained fourth-order gradient flow.

The semi-discrete equation is ``u_t = -bilap(u) - f(u)`` for maps into
an embedded target, integrated by an IMEX scheme: the stiff bilaplacian
is treated implicitly, the constraint coupling ``f`` explicitly, and the
constraint itself is restored after each step by nearest-point
projection.  On clamped boxes the implicit solve is a conjugate-gradient
iteration over the interior unknowns with the two-ghost-layer closure;
on periodic grids it is exact division by the stencil symbol in Fourier
space.

Steps are accepted only if the bending energy does not increase beyond a
declared discretization budget; a rejected step is retried with half the
step size.  All stepping is a deterministic function of the state, which
is what makes split runs resumable bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from . import manifold as mf
from .energies import energy_f2
from .errors import (
    IncompatibleInitialData,
    NearSingularPoint,
    NoConvergence,
    SingularityStop,
    StepRejected,
    TopologyMismatch,
)
from .grid import (
    BoundaryData,
    Field,
    Grid,
    Topology,
    _central,
    _faces,
    _fill_ghosts,
    _lap_into,
    _laplacian_values,
    _zero_nonphysical,
    apply_boundary,
    bilaplacian,
    integrate_values,
    laplacian,
)


@dataclass
class FlowParams:
    """Knobs of the integrator, all with conservative defaults."""

    c_cfl: float = 0.5
    tol_cg: float = 1e-8
    tol_energy_rel: float = 1e-8
    max_halvings: int = 40
    cg_max_iter: int | None = None

    def dt_max(self, grid: Grid) -> float:
        return self.c_cfl * grid.h**4


@dataclass
class EnergyLedger:
    """Cumulative energy bookkeeping along a trajectory.

    ``dissipation`` accumulates ``2 * dt * int |u_t|^2`` over accepted
    steps, so for an exact solution ``dissipation + f2(T) - f2(0) = 0``.
    """

    f2_initial: float
    f2_history: list[tuple[float, float]] = dfield(default_factory=list)
    dissipation: float = 0.0
    event_log: list[dict] = dfield(default_factory=list)

    @property
    def f2_last(self) -> float:
        return self.f2_history[-1][1]


@dataclass
class FlowState:
    u: Field
    t: float
    dt: float
    step_index: int
    ledger: EnergyLedger


@dataclass
class Trajectory:
    snapshots: list[FlowState]
    final: FlowState
    ledger: EnergyLedger
    singular_stop: dict | None = None

    @property
    def events(self) -> list[dict]:
        return self.ledger.event_log


# --- spatial operators of the flow -------------------------------------------


def tension(u: Field, m: mf.TargetManifold) -> Field:
    """First-order tension field: laplacian plus the curvature term.

    The curvature term uses the tangential parts of the first
    derivatives (discretization leaks a small normal component, which is
    projected out first).  Sign constraint: the result must vanish on
    geodesic maps, and the stored bilinear form is oriented as the
    second derivative of the projection curve, so it enters negated.
    """
    u.require_ghosts()
    grid = u.grid
    lap = laplacian(u)
    out = np.zeros_like(u.values)
    out[grid.phys] = lap.phys
    if not m.is_flat:
        y = u.phys
        per = grid.topology is Topology.PERIODIC
        for a in range(grid.d):
            da = _central(u.values, a, grid.h, per)[grid.phys]
            ta = mf.tangential_project(m, y, da)
            out[grid.phys] -= mf.second_fundamental_form(m, y, ta, ta)
    return Field(grid, out, ghosts_valid=(grid.pad == 0))


def nonlinearity_f(u: Field, m: mf.TargetManifold) -> Field:
    """Normal-bundle coupling of the fourth-order flow.

    Composed from the module operators as
    ``sum_i (lap<grad u, dnu_i grad u> + div<lap u, dnu_i grad u>
    + <grad lap u, dnu_i grad u>) nu_i(u)``; identically zero for flat
    targets.  Needs both ghost layers (third derivatives appear).
    """
    u.require_ghosts()
    grid = u.grid
    out = np.zeros_like(u.values)
    if m.is_flat:
        return Field(grid, out, ghosts_valid=(grid.pad == 0))

    # sphere target: the frame is the position itself and its
    # differential is the identity
    per = grid.topology is Topology.PERIODIC
    h = grid.h
    grads = [_central(u.values, a, h, per) for a in range(grid.d)]
    lap = _laplacian_values(u.values, grid)

    s = np.zeros(u.values.shape[:-1])
    for ga in grads:
        s += np.sum(ga * ga, axis=-1)
    lap_s = _laplacian_values(s, grid)[grid.phys]

    div_v = np.zeros(u.values.shape[:-1])
    for a, ga in enumerate(grads):
        div_v += _central(np.sum(lap * ga, axis=-1), a, h, per)
    div_v = div_v[grid.phys]

    third = np.zeros((grid.n,) * grid.d)
    for a, ga in enumerate(grads):
        third += np.sum(_central(lap, a, h, per) * ga, axis=-1)[grid.phys]

    scalar = lap_s + div_v + third
    out[grid.phys] = scalar[..., None] * u.phys
    return Field(grid, out, ghosts_valid=(grid.pad == 0))


def rhs(u: Field, m: mf.TargetManifold) -> Field:
    """Right side of ``u_t = -bilap(u) - f(u)``."""
    grid = u.grid
    vals = -bilaplacian(u).values - nonlinearity_f(u, m).values
    vals = _zero_nonphysical(vals, grid)
    return Field(grid, vals, ghosts_valid=(grid.pad == 0))


# --- implicit solves ----------------------------------------------------------


def _laplacian_symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues of the compact laplacian stencil on the periodic grid,
    one per Fourier mode, shape ``grid.shape``."""
    n, h = grid.n, grid.h
    lam1 = -(4.0 / (h * h)) * np.sin(np.pi * np.arange(n) / n) ** 2
    lam = np.zeros((n,) * grid.d)
    for a in range(grid.d):
        shape = [1] * grid.d
        shape[a] = n
        lam = lam + lam1.reshape(shape)
    return lam


def solve_periodic_bilaplacian(rhs_field: Field, dt: float) -> Field:
    """Exact solve of ``(I + dt bilap) w = rhs`` by symbol division."""
    grid = rhs_field.grid
    if grid.topology is not Topology.PERIODIC:
        raise TopologyMismatch("symbol division needs a periodic grid")
    lam = _laplacian_symbol(grid)
    denom = 1.0 + dt * lam * lam
    axes = tuple(range(grid.d))
    hat = np.fft.fftn(rhs_field.values, axes=axes)
    hat /= denom[..., None]
    vals = np.real(np.fft.ifftn(hat, axes=axes))
    return Field(grid, vals, ghosts_valid=True)


def _interior(grid: Grid) -> tuple[slice, ...]:
    p, n = grid.pad, grid.n
    return (slice(p + 1, p + n - 1),) * grid.d


def solve_clamped_bilaplacian(
    rhs_field: Field,
    bc: BoundaryData,
    dt: float,
    tol: float,
    max_iter: int | None = None,
) -> Field:
    """Solve ``(I + dt bilap) w = rhs`` on the interior unknowns.

    The boundary trace and ghost closure of the solution come from
    ``bc``; the homogeneous part of the operator (zero trace, zero
    slope, mirrored ghosts) is symmetric positive definite, so plain
    conjugate gradients apply.  The returned field satisfies ``bc``.
    """
    grid = rhs_field.grid
    if grid.topology is not Topology.BOX_CLAMPED:
        raise TopologyMismatch("use solve_periodic_bilaplacian on periodic grids")
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if dt == 0.0:
        return apply_boundary(rhs_field, bc)

    inner = _interior(grid) + (slice(None),)

    # lift by a field satisfying bc exactly; when rhs is "previous state
    # minus explicit terms" the reduced right side is O(dt), so the
    # iteration starts nearly converged
    lift = rhs_field.values.copy()
    _fill_ghosts(lift, grid, bc)
    bilap_lift = _laplacian_values(_laplacian_values(lift, grid), grid)
    b = rhs_field.values[inner] - dt * bilap_lift[inner] - lift[inner]

    buf = np.zeros_like(rhs_field.values)
    once = np.zeros_like(rhs_field.values)
    twice = np.zeros_like(rhs_field.values)

    def apply_op(x: np.ndarray) -> np.ndarray:
        # buf's interior, boundary, and ghosts are all rewritten below;
        # the border rings of once/twice stay zero and are never read
        buf[inner] = x
        _fill_ghosts(buf, grid, None)
        _lap_into(buf, grid, once)
        _lap_into(once, grid, twice)
        return x + dt * twice[inner]

    n_unknowns = (grid.n - 2) ** grid.d * rhs_field.L
    if max_iter is None:
        max_iter = max(100, int(10 * np.sqrt(n_unknowns)))

    # the convergence target is relative to the full right side, per the
    # solve contract; the reduction does not change the residual
    ref_norm = float(np.sqrt(np.sum(rhs_field.values[inner] ** 2)))
    target = tol * ref_norm if ref_norm > 0.0 else tol
    x = np.zeros_like(b)
    r = b.copy()
    rs_old = float(np.sum(r * r))
    if np.sqrt(rs_old) > target:
        p_vec = r.copy()
        converged = False
        for it in range(max_iter):
            Ap = apply_op(p_vec)
            alpha = rs_old / float(np.sum(p_vec * Ap))
            x += alpha * p_vec
            r -= alpha * Ap
            rs_new = float(np.sum(r * r))
            if np.sqrt(rs_new) <= target:
                converged = True
                break
            p_vec = r + (rs_new / rs_old) * p_vec
            rs_old = rs_new
        if not converged:
            raise NoConvergence(max_iter, float(np.sqrt(rs_new) / max(ref_norm, 1e-300)))

    out = lift
    out[inner] += x
    w = Field(grid, out, ghosts_valid=False)
    return apply_boundary(w, bc)


# --- stepping -----------------------------------------------------------------


def initial_state(
    u0: Field,
    bc: BoundaryData | None,
    dt: float,
    t0: float = 0.0,
    step_index: int = 0,
    ledger: EnergyLedger | None = None,
) -> FlowState:
    """Wrap an on-target initial field, checking trace compatibility."""
    grid = u0.grid
    if grid.topology is Topology.BOX_CLAMPED:
        if bc is None:
            raise ValueError("clamped grids need boundary data")
        for (a, s) in _faces(grid):
            idx = [slice(None)] * grid.d
            idx[a] = -1 if s else 0
            gap = np.max(np.abs(u0.phys[tuple(idx)] - bc.g[(a, s)]))
            if gap > 1e-8:
                raise IncompatibleInitialData(
                    f"initial trace differs from g on face {(a, s)} by {gap:.2e}"
                )
        u0 = apply_boundary(u0, bc)
    if ledger is None:
        f2 = energy_f2(u0)
        ledger = EnergyLedger(f2_initial=f2, f2_history=[(t0, f2)])
    return FlowState(u=u0, t=t0, dt=dt, step_index=step_index, ledger=ledger)


def _attempt_step(
    state: FlowState,
    m: mf.TargetManifold,
    bc: BoundaryData | None,
    dt: float,
    params: FlowParams,
):
    """One trial step at a fixed dt.  Returns
    ``(field, f2_new, int_ut2, accepted)``."""
    u = state.u
    grid = u.grid
    fvals = nonlinearity_f(u, m).values
    explicit = Field(grid, u.values - dt * fvals, ghosts_valid=u.ghosts_valid)

    if grid.topology is Topology.PERIODIC:
        u_star = solve_periodic_bilaplacian(explicit, dt)
    else:
        u_star = solve_clamped_bilaplacian(
            explicit, bc, dt, params.tol_cg, max_iter=params.cg_max_iter
        )

    try:
        proj = mf.project(m, u_star.phys)
    except NearSingularPoint:
        norms = np.linalg.norm(u_star.phys, axis=-1)
        node = np.unravel_index(int(np.argmin(norms)), norms.shape)
        raise SingularityStop(node, state.t)

    vals = np.zeros_like(u.values)
    vals[grid.phys] = proj
    u_new = Field(grid, vals, ghosts_valid=(grid.pad == 0))
    if grid.topology is Topology.BOX_CLAMPED:
        u_new = apply_boundary(u_new, bc)

    f2_new = energy_f2(u_new)
    ut = (u_new.phys - u.phys) / dt
    int_ut2 = integrate_values(grid, np.sum(ut * ut, axis=-1))
    tol_e = params.tol_energy_rel * state.ledger.f2_initial + 100.0 * dt * dt * int_ut2
    accepted = f2_new <= state.ledger.f2_last + tol_e
    return u_new, f2_new, int_ut2, accepted


def step_imex(
    state: FlowState,
    m: mf.TargetManifold,
    bc: BoundaryData | None = None,
    params: FlowParams | None = None,
) -> FlowState:
    """Advance one accepted step, halving dt on energy-increase rejections."""
    params = params or FlowParams()
    dt = min(state.dt, params.dt_max(state.u.grid))
    for _ in range(params.max_halvings + 1):
        u_new, f2_new, int_ut2, ok = _attempt_step(state, m, bc, dt, params)
        if ok:
            ledger = state.ledger
            ledger.f2_history.append((state.t + dt, f2_new))
            ledger.dissipation += 2.0 * dt * int_ut2
            return FlowState(
                u=u_new,
                t=state.t + dt,
                dt=dt,
                step_index=state.step_index + 1,
                ledger=ledger,
            )
        dt *= 0.5
    raise StepRejected(dt, state.ledger.f2_last, f2_new)


def run(
    config,
    m: mf.TargetManifold,
    bc: BoundaryData | None,
    u0: Field | None = None,
    on_snapshot=None,
    state0: FlowState | None = None,
) -> Trajectory:
    """Iterate the stepper until ``T_final`` or a singular stop.

    Snapshots (state copies) are kept every ``snapshot_stride`` accepted
    steps; at each snapshot the concentration detector runs and new
    events are appended to the ledger.  ``on_snapshot(state)`` lets the
    storage layer stream CSV rows without coupling the integrator to it.
    Passing ``state0`` resumes a loaded snapshot in place of fresh
    initial data.
    """
    from .analysis import AnalysisConfig
    from .sampling import RandomFieldSpec, generate_random_field

    grid = Grid(config.grid_d, config.grid_n, Topology(config.grid_topology))
    params = FlowParams(
        c_cfl=config.flow_c_cfl,
        tol_cg=config.flow_tol_cg,
        tol_energy_rel=config.flow_tol_energy,
    )
    if state0 is not None:
        u_resume = state0.u
        if grid.topology is Topology.BOX_CLAMPED and not u_resume.ghosts_valid:
            u_resume = apply_boundary(u_resume, bc)
        state = FlowState(
            u=u_resume,
            t=state0.t,
            dt=min(state0.dt, params.dt_max(grid)),
            step_index=state0.step_index,
            ledger=state0.ledger,
        )
    else:
        if u0 is None:
            spec = RandomFieldSpec(
                seed=config.seed,
                band_limit=config.init_band_limit,
                amplitude=config.init_amplitude,
                boundary_decay_order=config.init_decay_order,
            )
            u0 = generate_random_field(spec, grid, m)

        dt0 = config.flow_dt_init if config.flow_dt_init > 0 else params.dt_max(grid)
        dt0 = min(dt0, params.dt_max(grid))
        state = initial_state(u0, bc, dt0)
    acfg = AnalysisConfig(
        epsilon1=config.analysis_epsilon1,
        epsilon0=config.analysis_epsilon0,
        C0=config.analysis_C0,
        R_detect=(
            config.analysis_R_detect
            if config.analysis_R_detect > 0
            else 8.0 * grid.h
        ),
    )

    snapshots = [_copy_state(state)]
    stride = max(1, config.io_snapshot_stride)
    singular = None
    if on_snapshot is not None:
        on_snapshot(state)

    while state.t < config.flow_T_final * (1.0 - 1e-12):
        try:
            state = step_imex(state, m, bc, params)
        except SingularityStop as stop:
            singular = {"node": stop.node, "t": stop.t}
            break
        if state.step_index % stride == 0 or state.t >= config.flow_T_final:
            _record_events(state, acfg)
            snapshots.append(_copy_state(state))
            if on_snapshot is not None:
                on_snapshot(state)

    return Trajectory(
        snapshots=snapshots,
        final=state,
        ledger=state.ledger,
        singular_stop=singular,
    )


def _copy_state(state: FlowState) -> FlowState:
    return FlowState(
        u=state.u.copy(),
        t=state.t,
        dt=state.dt,
        step_index=state.step_index,
        ledger=state.ledger,
    )


def _record_events(state: FlowState, acfg):
    from .analysis import cluster_exceedances, detect_concentration

    hits = detect_concentration(state.u, acfg)
    if not hits:
        return
    clusters = cluster_exceedances(hits, 2.0 * acfg.R_detect)
    log = state.ledger.event_log
    for center, energy in clusters:
        near = [
            ev
            for ev in log
            if np.linalg.norm(np.asarray(ev["center"]) - np.asarray(center))
            <= 2.0 * acfg.R_detect
        ]
        if near:
            for ev in near:
                ev["E"] = max(ev["E"], energy)
                ev["f2_after"] = state.ledger.f2_last
            continue
        log.append(
            {
                "t": state.t,
                "center": tuple(float(c) for c in center),
                "E": float(energy),
                "f2_before": state.ledger.f2_history[-2][1]
                if len(state.ledger.f2_history) > 1
                else state.ledger.f2_initial,
                "f2_after": state.ledger.f2_last,
                "status": "detected",
            }
        )


def stability_probe(
    u0: Field,
    v0: Field,
    m: mf.TargetManifold,
    bc: BoundaryData | None,
    T: float,
    dt: float | None = None,
    params: FlowParams | None = None,
) -> dict:
    """Co-evolve two initial fields under a shared dt schedule.

    Reports the supremum over sampled times of the squared L2 distance
    and its ratio to the initial one (1 by convention when the initial
    fields coincide).  Both trajectories always use the same dt: if
    either rejects a step, both halve.
    """
    params = params or FlowParams()
    grid = u0.grid
    dt = min(dt or params.dt_max(grid), params.dt_max(grid))
    su = initial_state(u0, bc, dt)
    sv = initial_state(v0, bc, dt)

    def dist2(a: FlowState, b: FlowState) -> float:
        diff = a.u.phys - b.u.phys
        return integrate_values(grid, np.sum(diff * diff, axis=-1))

    d0 = dist2(su, sv)
    sup = d0
    samples = [(0.0, d0)]
    t = 0.0
    while t < T * (1.0 - 1e-12):
        for _ in range(params.max_halvings + 1):
            nu, f2u, iu, oku = _attempt_step(su, m, bc, dt, params)
            nv, f2v, iv, okv = _attempt_step(sv, m, bc, dt, params)
            if oku and okv:
                break
            dt *= 0.5
        else:
            raise StepRejected(dt, su.ledger.f2_last, f2u)
        for s, (nf, f2, ii) in ((su, (nu, f2u, iu)), (sv, (nv, f2v, iv))):
            s.ledger.f2_history.append((s.t + dt, f2))
            s.ledger.dissipation += 2.0 * dt * ii
            s.u = nf
            s.t += dt
            s.step_index += 1
        t = su.t
        d = dist2(su, sv)
        sup = max(sup, d)
        samples.append((t, d))

    growth = 1.0 if d0 == 0.0 else sup / d0
    return {"sup_dist2": sup, "growth_factor": growth, "samples": samples}
