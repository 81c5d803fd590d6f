"""Exception hierarchy shared by every subsystem."""


class EtsmcError(Exception):
    """Base class for all package errors."""


class ConfigError(EtsmcError):
    """Invalid or inconsistent configuration."""


class DimensionMismatch(ConfigError):
    pass


class NegativeWeight(ConfigError):
    pass


class SelfLoop(ConfigError):
    pass


class InvalidMode(EtsmcError):
    pass


class OutOfRange(EtsmcError):
    pass


class UncertaintyNormViolation(EtsmcError):
    pass


class SingularMassMatrix(ConfigError):
    pass


class NonsingularityLoss(EtsmcError):
    """B^T P B became (numerically) singular."""


class AsymmetricInput(EtsmcError):
    pass


class PendingCollision(EtsmcError):
    """A new packet was released before the previous one arrived."""


class AssumptionViolated(ConfigError):
    """Some follower cannot be reached from the leader."""


class NonFiniteState(EtsmcError):
    def __init__(self, message, last_good_time=None):
        super().__init__(message)
        self.last_good_time = last_good_time


class IoFailure(EtsmcError):
    """Output directory or file could not be written."""
