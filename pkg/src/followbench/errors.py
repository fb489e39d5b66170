"""Exception hierarchy.

Three families map onto CLI exit codes: configuration/usage problems (2),
data problems (3) and backend problems (4).
"""


class FollowBenchError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FollowBenchError, ValueError):
    pass


class DataError(FollowBenchError, ValueError):
    pass


class BackendError(FollowBenchError, RuntimeError):
    pass


class InvalidArgument(ConfigError):
    pass


# --- data / ingestion -------------------------------------------------------

class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonUniformTimestep(DataError):
    pass


class NegativeSpeed(DataError):
    pass


class NonPositiveSpacing(DataError):
    pass


class InconsistentRelSpeed(DataError):
    pass


class OutOfRange(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class ShortHistory(DataError):
    pass


# --- numerics / simulation --------------------------------------------------

class NonFiniteInput(DataError):
    pass


class InvalidStride(ConfigError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class PredictorFailure(FollowBenchError, RuntimeError):
    """A predictor raised during a rollout. ``t`` is the simulation time."""

    def __init__(self, message: str, t: float, event_id: str | None = None):
        super().__init__(message)
        self.t = t
        self.event_id = event_id


# --- LLM backend ------------------------------------------------------------

class BackendTimeout(BackendError):
    retryable = True


class RateLimited(BackendError):
    retryable = True


class ServerError(BackendError):
    retryable = True


class AuthFailure(BackendError):
    retryable = False


class MalformedReply(BackendError):
    retryable = True


class BackendUnavailable(BackendError):
    pass


class UnparseableReply(FollowBenchError, ValueError):
    pass
