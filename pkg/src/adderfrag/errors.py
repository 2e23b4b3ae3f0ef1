"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class HypothesisError(ValueError):
    """The kernel/rate pair violates a standing model hypothesis."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        super().__init__(f"model hypotheses failed: {failed}\n{report.summary()}")


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual, result=None):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual
        self.result = result


class ConfigError(ValueError):
    """Invalid run configuration."""
