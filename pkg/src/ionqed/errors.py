"""Exception types raised across the package."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``diagnostics`` carries whatever the solver had when it gave up
    (best residuals, last cutoff, iteration count).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ChainInstabilityError(RuntimeError):
    """A normal-mode eigenvalue is non-positive along some axis."""

    def __init__(self, axis, eigenvalues):
        super().__init__(
            f"ion chain unstable along axis {axis!r}: "
            f"min eigenvalue {min(eigenvalues):.3e} <= 0"
        )
        self.axis = axis
        self.eigenvalues = list(eigenvalues)


class ResonanceError(ValueError):
    """A laser beat note sits too close to a phonon mode for adiabatic elimination."""


class IntegrationError(RuntimeError):
    """Time integration failed or lost physicality (norm, trace, positivity)."""


class ConfigError(ValueError):
    """Invalid run configuration. ``path`` names the offending field."""

    def __init__(self, path, reason, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{path}: {reason}{where}")
        self.path = path
        self.reason = reason
        self.line = line
