"""Exception hierarchy shared across the package."""


class ActorObserverError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ActorObserverError, ValueError):
    pass


class ConstraintError(ActorObserverError, ValueError):
    pass


class NumericError(ActorObserverError, ArithmeticError):
    pass


class EmptyVideoError(ActorObserverError, ValueError):
    pass


class OrderingError(ActorObserverError, RuntimeError):
    """Backward requested before the running loss was initialized."""


class MalformedPairError(ActorObserverError, ValueError):
    pass


class IngestError(ActorObserverError, ValueError):
    pass


class DegenerateVideoError(ActorObserverError, ValueError):
    pass


class InfeasiblePairError(ActorObserverError, ValueError):
    pass


class ScenarioMismatchError(ActorObserverError, ValueError):
    pass


class MalformedItemError(ActorObserverError, ValueError):
    pass


class ConfigError(ActorObserverError, ValueError):
    pass


class ModeError(ActorObserverError, RuntimeError):
    pass


class FormatError(ActorObserverError, ValueError):
    pass


class CorruptionError(FormatError):
    pass


__all__ = ["ActorObserverError", "ConfigError", "ConstraintError", "CorruptionError", "DegenerateVideoError", "EmptyVideoError", "FormatError", "InfeasiblePairError", "IngestError", "MalformedItemError", "MalformedPairError", "ModeError", "NumericError", "OrderingError", "ScenarioMismatchError", "ShapeError"]
