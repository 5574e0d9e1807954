"""Flat key=value run configuration.

The format is UTF-8 text, one ``key = value`` pair per line, ``#``
comments, blank lines ignored.  Unknown keys are rejected outright so a
typo cannot silently fall back to a default.  ``serialize`` then
``parse`` is the identity on configs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConstraintViolation, ParseError, UnknownKey

EXPERIMENTS = (
    "run",
    "gap",
    "linear_validate",
    "probe_inequalities",
    "blowup",
    "stability",
)

_MISSING = object()


@dataclass
class RunConfig:
    # mandatory
    target_kind: str = None
    target_L: int = None
    grid_d: int = None
    grid_n: int = None
    grid_topology: str = None
    flow_T_final: float = None
    io_out_dir: str = None
    seed: int = None
    # optional with defaults
    experiment: str = "run"
    target_n: int = 0  # subspace dimension; 0 means "L - 1"
    flow_dt_init: float = 0.0  # 0 means the CFL bound c_cfl * h^4
    flow_c_cfl: float = 0.5
    flow_tol_cg: float = 1e-8
    flow_tol_energy: float = 1e-8  # relative budget on f2(u0)
    analysis_epsilon1: float = 0.05
    analysis_epsilon0: float = 0.02
    analysis_C0: int = 16
    analysis_R_detect: float = 0.0  # 0 means 8 grid spacings
    io_snapshot_stride: int = 100
    init_amplitude: float = 0.1
    init_band_limit: int = 4
    init_decay_order: int = 2
    stability_delta: float = 1e-6


# config-file key -> dataclass field, parser
_SCHEMA: dict[str, tuple[str, type]] = {
    "experiment": ("experiment", str),
    "target.kind": ("target_kind", str),
    "target.L": ("target_L", int),
    "target.n": ("target_n", int),
    "grid.d": ("grid_d", int),
    "grid.n": ("grid_n", int),
    "grid.topology": ("grid_topology", str),
    "flow.T_final": ("flow_T_final", float),
    "flow.dt_init": ("flow_dt_init", float),
    "flow.c_cfl": ("flow_c_cfl", float),
    "flow.tol_cg": ("flow_tol_cg", float),
    "flow.tol_energy": ("flow_tol_energy", float),
    "analysis.epsilon1": ("analysis_epsilon1", float),
    "analysis.epsilon0": ("analysis_epsilon0", float),
    "analysis.C0": ("analysis_C0", int),
    "analysis.R_detect": ("analysis_R_detect", float),
    "io.snapshot_stride": ("io_snapshot_stride", int),
    "io.out_dir": ("io_out_dir", str),
    "seed": ("seed", int),
    "init.amplitude": ("init_amplitude", float),
    "init.band_limit": ("init_band_limit", int),
    "init.decay_order": ("init_decay_order", int),
    "stability.delta": ("stability_delta", float),
}

_MANDATORY = (
    "target.kind",
    "target.L",
    "grid.d",
    "grid.n",
    "grid.topology",
    "flow.T_final",
    "io.out_dir",
    "seed",
)

_FIELD_TO_KEY = {f: k for k, (f, _) in _SCHEMA.items()}


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration."""
    seen: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, raw, "expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise UnknownKey(key)
        field_name, typ = _SCHEMA[key]
        try:
            seen[field_name] = typ(value)
        except ValueError:
            raise ParseError(lineno, raw, f"cannot parse {value!r} as {typ.__name__}")

    missing = [k for k in _MANDATORY if _SCHEMA[k][0] not in seen]
    if missing:
        raise ConstraintViolation(", ".join(missing), "mandatory key(s) missing")

    cfg = RunConfig(**seen)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    def bad(field: str, reason: str):
        raise ConstraintViolation(_FIELD_TO_KEY.get(field, field), reason)

    if cfg.experiment not in EXPERIMENTS:
        bad("experiment", f"must be one of {EXPERIMENTS}")
    if cfg.target_kind not in ("unit_sphere", "flat_subspace"):
        bad("target_kind", "must be unit_sphere or flat_subspace")
    if cfg.target_L < 1:
        bad("target_L", "must be positive")
    if cfg.target_kind == "flat_subspace":
        n = cfg.target_n if cfg.target_n else cfg.target_L - 1
        if not 0 < n < cfg.target_L:
            bad("target_n", "must satisfy 0 < n < L")
    if not 1 <= cfg.grid_d <= 4:
        bad("grid_d", "dimension must lie in 1..4")
    if cfg.grid_n < 8:
        bad("grid_n", "need at least 8 nodes per axis")
    if cfg.grid_topology not in ("box", "periodic"):
        bad("grid_topology", "must be box or periodic")
    if cfg.flow_T_final < 0:
        bad("flow_T_final", "must be nonnegative")
    if cfg.flow_dt_init < 0:
        bad("flow_dt_init", "must be nonnegative")
    if cfg.flow_c_cfl <= 0:
        bad("flow_c_cfl", "must be positive")
    if cfg.flow_tol_cg <= 0:
        bad("flow_tol_cg", "must be positive")
    if cfg.flow_tol_energy < 0:
        bad("flow_tol_energy", "must be nonnegative")
    if not 0 < cfg.analysis_epsilon0 <= cfg.analysis_epsilon1:
        bad("analysis_epsilon0", "need 0 < epsilon0 <= epsilon1")
    if cfg.analysis_C0 < 1:
        bad("analysis_C0", "must be >= 1")
    if cfg.analysis_R_detect < 0:
        bad("analysis_R_detect", "must be nonnegative (0 selects 8h)")
    if cfg.io_snapshot_stride < 1:
        bad("io_snapshot_stride", "must be >= 1")
    if cfg.init_band_limit < 1:
        bad("init_band_limit", "must be >= 1")
    if cfg.init_decay_order < 2:
        bad("init_decay_order", "must be >= 2")
    if cfg.init_amplitude < 0:
        bad("init_amplitude", "must be nonnegative")
    if cfg.stability_delta <= 0:
        bad("stability_delta", "must be positive")


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, (field_name, _) in _SCHEMA.items():
        value = getattr(cfg, field_name)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def target_from_config(cfg: RunConfig):
    from . import manifold as mf

    if cfg.target_kind == "unit_sphere":
        return mf.unit_sphere(cfg.target_L)
    n = cfg.target_n if cfg.target_n else cfg.target_L - 1
    return mf.flat_subspace(cfg.target_L, n)
