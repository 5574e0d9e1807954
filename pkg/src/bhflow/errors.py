"""Exception types shared across the package.

The hierarchy mirrors the failure surfaces of the CLI: configuration
problems exit with code 2, numerical failures with 3, storage/I-O
problems with 4.
"""


class BhflowError(Exception):
    """Base class for all package-specific errors."""


# --- configuration ---------------------------------------------------------

class ConfigError(BhflowError):
    pass


class ParseError(ConfigError):
    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {reason}: {line!r}")


class UnknownKey(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown config key: {name!r}")


class ConstraintViolation(ConfigError):
    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(f"config field {field!r}: {reason}")


# --- manifold --------------------------------------------------------------

class ManifoldError(BhflowError):
    pass


class NearSingularPoint(ManifoldError):
    """Projection requested too close to the singular locus (sphere center)."""


class PointOffManifold(ManifoldError):
    pass


class NonTangentInput(ManifoldError):
    pass


# --- grid ------------------------------------------------------------------

class GridError(BhflowError):
    pass


class TopologyMismatch(GridError):
    pass


class StaleGhosts(GridError):
    """Ghost layers were not refreshed since the field was last mutated."""


class EmptyBall(GridError):
    pass


# --- numerics --------------------------------------------------------------

class NumericalError(BhflowError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"iterative solve stalled after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class StepRejected(NumericalError):
    """Energy-increase rejection could not be cured by time-step halving."""

    def __init__(self, dt: float, f2_old: float, f2_new: float):
        self.dt = dt
        self.f2_old = f2_old
        self.f2_new = f2_new
        super().__init__(
            f"step rejected at dt={dt:.3e}: energy rose {f2_old:.6e} -> {f2_new:.6e}"
        )


class SingularityStop(NumericalError):
    """The integrator hit a node whose update collapsed to the singular locus."""

    def __init__(self, node, t: float):
        self.node = node
        self.t = t
        super().__init__(f"singular point at node {node} (t={t:.6e})")


class IncompatibleInitialData(NumericalError):
    pass


class NonTangentDirection(NumericalError):
    pass


class RadiusBelowResolution(NumericalError):
    pass


class DegenerateRHS(NumericalError):
    """Inequality probe found a vanishing right side against a nonzero left side."""


# --- storage ---------------------------------------------------------------

class StorageError(BhflowError):
    pass


class VersionMismatch(StorageError):
    pass


class CorruptHeader(StorageError):
    pass


class TruncatedPayload(StorageError):
    pass


class LockHeld(StorageError):
    pass
