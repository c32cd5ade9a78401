"""Exception types raised across the package."""


class MechmixError(Exception):
    """Base class for every error the package raises on purpose."""


class InvalidInputError(MechmixError, ValueError):
    """Raised when an argument violates a documented precondition."""


class DegenerateBasisError(MechmixError, ValueError):
    """Raised when a matrix is too close to rank deficiency to invert.

    Carries the offending smallest singular value so callers can report it.
    """

    def __init__(self, message, sigma_min=None):
        super().__init__(message)
        self.sigma_min = sigma_min


class CapacityViolationError(MechmixError, ValueError):
    """Raised when more mechanisms are requested than the latent dimension admits."""


class InvalidDistortionError(MechmixError, ValueError):
    """Raised when an encoder warp is not strictly monotone."""


class InversionError(MechmixError, ValueError):
    """Raised when an observation cannot be mapped back through the mixing map."""


class CalibrationDegenerateError(MechmixError, ValueError):
    """Raised when the boundary states used for calibration coincide."""


class UndefinedCorrelationError(MechmixError, ValueError):
    """Raised when a correlation is requested for a zero-variance input."""
