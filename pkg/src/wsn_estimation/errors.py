"""Exception hierarchy shared by the library and the CLI."""


class EstimationError(Exception):
    """Base class for all package errors."""


class ConfigError(EstimationError, ValueError):
    """Invalid or unknown configuration value."""


class NumericalError(EstimationError, ArithmeticError):
    """A numerical routine failed.

    ``step`` and ``node`` are filled in by the simulator when the failure
    happens inside a run, so the CLI can report where it went wrong.
    """

    def __init__(self, message, *, step=None, node=None, residual=None):
        super().__init__(message)
        self.step = step
        self.node = node
        self.residual = residual

    def __str__(self):
        parts = []
        if self.step is not None:
            parts.append(f"step {self.step}")
        if self.node is not None:
            parts.append(f"node {self.node + 1}")
        prefix = f"[{', '.join(parts)}] " if parts else ""
        return prefix + super().__str__()


class NonConvergence(NumericalError):
    """Threshold fixed-point iteration hit ``max_iter``."""


class SingularBlock(NumericalError):
    """Principal submatrix on the received support is numerically singular."""


class BisectionFailure(NumericalError):
    """Lagrange multiplier bracket never straddled a root."""
