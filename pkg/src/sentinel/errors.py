"""Exception hierarchy shared by every pipeline stage."""


class SentinelError(Exception):
    """Base class; the CLI maps these to a nonzero exit status."""

    exit_code = 2


class UnsupportedFormat(SentinelError):
    pass


class TruncatedFile(SentinelError):
    pass


class DecodeError(SentinelError):
    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class EmptyTrainingSet(SentinelError):
    pass


class SingleClassTraining(SentinelError):
    pass


class SchemaMismatch(SentinelError):
    pass


class InsufficientSamples(SentinelError):
    pass


class NonFiniteLoss(SentinelError):
    pass


class BackendUnavailable(SentinelError):
    pass


class EmptyModelSet(SentinelError):
    pass


class TooFewModels(SentinelError):
    pass


class EmptyClassData(SentinelError):
    pass


class MissingClass(SentinelError):
    pass


class MissingThreshold(SentinelError):
    exit_code = 3


class LengthMismatch(SentinelError):
    pass


class UnknownLabel(SentinelError):
    pass


class InvalidSpec(SentinelError):
    pass


class ConfigError(SentinelError):
    pass


class ProvenanceMismatch(SentinelError):
    """Artifacts produced under different config hashes were mixed."""

    exit_code = 4
