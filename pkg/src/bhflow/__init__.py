"""bhflow: a numerical laboratory for the constrained fourth-order heat
flow of maps from a box or torus into an embedded target manifold."""

from .analysis import (
    AnalysisConfig,
    BlowupCandidate,
    biharmonic_residual,
    blowup_extract,
    detect_concentration,
    energy_e2,
    energy_f2,
    energy_identity_residual,
    gap_experiment,
    global_energy,
    gradient_consistency,
    interpolation_probe,
    local_energy,
    quantization_check,
)
from .config import RunConfig, parse_config, serialize_config
from .flow import (
    EnergyLedger,
    FlowParams,
    FlowState,
    Trajectory,
    nonlinearity_f,
    rhs,
    run,
    solve_clamped_bilaplacian,
    solve_periodic_bilaplacian,
    stability_probe,
    step_imex,
    tension,
)
from .grid import (
    BoundaryData,
    Field,
    Grid,
    Topology,
    VectorField,
    apply_boundary,
    ball_nodes,
    bilaplacian,
    constant_boundary,
    constant_field,
    divergence,
    field_from_function,
    gradient,
    integrate,
    laplacian,
)
from .manifold import (
    TargetKind,
    TargetManifold,
    flat_subspace,
    normal_frame,
    normal_frame_differential,
    project,
    second_fundamental_form,
    tangential_project,
    unit_sphere,
)
from .sampling import RandomFieldSpec, generate_random_field
from .storage import read_snapshot, write_snapshot

__version__ = "0.1.0"
