"""Exception hierarchy shared across gradekit.

The CLI maps these onto process exit codes, so every error raised on a
user-facing path should derive from :class:`GradekitError`.
"""


class GradekitError(Exception):
    exit_code = 4


class ConfigurationError(GradekitError, ValueError):
    """Bad parameters, inconsistent settings or unusable class balance."""

    exit_code = 2


class InvalidParameterError(ConfigurationError):
    pass


class GeometryError(ConfigurationError):
    """Patch/volume dimensions that cannot form a valid grid."""


class SchedulingError(GradekitError):
    """A location was scheduled before the model it inherits from."""


class DataError(GradekitError):
    """Malformed files, misaligned subject ids, corrupt payloads."""

    exit_code = 3


class ShapeError(GradekitError, ValueError):
    pass


class ContractError(GradekitError, RuntimeError):
    """An API precondition that is the caller's responsibility was violated."""


class LocationError(GradekitError):
    """Wraps a failure raised while training a single grid location."""

    def __init__(self, location, cause):
        self.location = location
        self.cause = cause
        super().__init__(f"location {location}: {cause}")
        if isinstance(cause, GradekitError):
            self.exit_code = cause.exit_code


class DegenerateWeightsWarning(UserWarning):
    pass
