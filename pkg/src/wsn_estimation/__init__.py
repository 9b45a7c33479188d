"""Distributed minimum-variance estimation over lossy wireless sensor networks."""

from .errors import (BisectionFailure, ConfigError, EstimationError, NonConvergence, NumericalError,
                     SingularBlock)

__version__ = "0.1.0"

__all__ = [
    "BisectionFailure",
    "ConfigError",
    "EstimationError",
    "NonConvergence",
    "NumericalError",
    "SingularBlock",
    "__version__",
]
