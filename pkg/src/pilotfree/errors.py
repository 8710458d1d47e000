"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NumericalError(RuntimeError):
    """A numerical routine failed (ill-conditioning, divergence)."""


class CareDivergenceError(NumericalError):
    """Coupled-Riccati iteration failed to converge.

    Carries the residual trajectory so callers can inspect whether the
    iteration was still contracting when the budget ran out.
    """

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = list(residuals)
