from typing import List


class MfrisError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigValidationError(MfrisError):
    """Raised when a SystemConfig violates one or more invariants."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InputError(MfrisError, ValueError):
    pass


class DimensionError(MfrisError, ValueError):
    pass


class InfeasibleAmplificationError(MfrisError):
    pass


class SingularChannelError(MfrisError):
    pass


class SingularityError(MfrisError):
    """Raised when an observation matrix or Fisher information is rank deficient."""


class EmptyRangeError(MfrisError):
    pass


class DegenerateModeError(MfrisError):
    """Raised when a served side has a zero amplification parameter."""


class UnknownSchemeError(MfrisError):
    pass


class EmptyResultError(MfrisError):
    pass
