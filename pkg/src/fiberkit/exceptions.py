"""Exception hierarchy shared by all fiberkit modules."""


class FiberkitError(Exception):
    """Base class for all library errors."""


class MeshError(FiberkitError):
    """Invalid mesh or failed mesh construction."""


class ParseError(FiberkitError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class ValidationError(FiberkitError):
    """Data that parses but violates a declared invariant."""


class WellPosednessError(FiberkitError):
    """A boundary value problem without enough constraints."""


class SolverError(FiberkitError):
    """Iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (final residual {residual:.3e})"
        super().__init__(message)


class DegeneracyError(FiberkitError):
    """Geometric degeneracy (vanishing or parallel directions)."""

    def __init__(self, message, indices=None):
        self.indices = None if indices is None else list(indices)
        if self.indices:
            shown = ", ".join(str(i) for i in self.indices[:10])
            more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
            message = f"{message}; at index {shown}{more}"
        super().__init__(message)


class DataError(FiberkitError):
    """Input values outside the admissible range."""


class DivergenceError(FiberkitError):
    """Time integration produced non-physical state."""

    def __init__(self, message, time=None, compartment=None):
        self.time = time
        self.compartment = compartment
        super().__init__(message)


class ConfigError(FiberkitError):
    """Aggregated configuration problems."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))
