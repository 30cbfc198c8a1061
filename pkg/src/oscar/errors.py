"""Exception types shared across the package."""


class OscarError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(OscarError):
    def __init__(self, pivot_index: int, pivot_value: float):
        super().__init__(
            f"Cholesky pivot {pivot_index} is {pivot_value!r}; "
            "increase the stabilizer / ridge"
        )
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value


class NonConvergence(OscarError):
    def __init__(self, sweeps: int, residual: float):
        super().__init__(f"Jacobi did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})")
        self.sweeps = sweeps
        self.residual = residual


class NonFinite(OscarError):
    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DegenerateTime(OscarError):
    pass


class DivergedLoss(OscarError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training loss became {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class ZeroSupport(OscarError):
    pass


class TooFewPoints(OscarError):
    pass


class ConfigError(OscarError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


class ConfigNotFound(ConfigError):
    pass


class SchemaMismatch(ConfigError):
    pass
