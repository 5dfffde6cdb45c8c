"""Exception types shared across the package.

The CLI maps ConfigError (and ValueError) to exit code 2 and
NumericalError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad dimensions, ranges, or file contents."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, quadrature, ...)."""


class SingularMatrixError(NumericalError):
    """A linear solve hit a (numerically) singular matrix."""

    def __init__(self, what, cond):
        self.cond = cond
        super().__init__(f"{what} is singular or ill-conditioned (cond={cond:.3e})")
