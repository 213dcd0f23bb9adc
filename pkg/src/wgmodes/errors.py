"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class WaveguideError(Exception):
    exit_code = 1
    kind = "error"


class ValidationError(WaveguideError):
    exit_code = 4
    kind = "validation"


class MeshError(ValidationError):
    """Malformed or inconsistent mesh. ``line`` is 1-based when known."""

    kind = "mesh"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MaterialError(ValidationError):
    kind = "material"


class CutoffError(WaveguideError):
    exit_code = 2
    kind = "cutoff"

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class SolverError(WaveguideError):
    exit_code = 3
    kind = "solver"


class FactorizationError(SolverError):
    kind = "factorization"


class ConvergenceError(SolverError):
    kind = "convergence"

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DegenerateClusterError(ValidationError):
    kind = "degenerate-cluster"

    def __init__(self, message, modes=()):
        super().__init__(message)
        self.modes = tuple(modes)


class FormatError(WaveguideError):
    """Unreadable or inconsistent data file (DtN, material field)."""

    exit_code = 5
    kind = "format"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
